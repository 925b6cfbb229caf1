#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "protoreg/types.hpp"

namespace protoreg {

struct ClassInfo {
    int id = 0;
    std::string name;
};

struct CatalogEntry {
    std::string id;  // image id, unique within a catalog
    std::filesystem::path volume_path;
    std::filesystem::path label_path;
    std::string institution;
};

/// Index of labelled volumes keyed by institution.
///
/// Text format (tab or space separated, `#` starts a comment):
///
///     institutions  <u1> <u2> ...
///     classes       <id>:<name> <id>:<name> ...
///     folds         <id>,<id> <id>,<id> ...        (optional)
///     case          <image id> <volume path> <label path> <institution>
///
/// Relative paths are resolved against the data root given when loading.
class Catalog {
public:
    Catalog() = default;
    Catalog(std::vector<std::string> institutions, std::vector<ClassInfo> classes);

    /// Throws ConfigError when the institution is undeclared or the id is duplicated.
    void add(CatalogEntry entry);
    void set_folds(std::vector<std::vector<int>> folds);

    const std::vector<CatalogEntry>& entries() const { return entries_; }
    const std::vector<std::string>& institutions() const { return institutions_; }
    const std::vector<ClassInfo>& classes() const { return classes_; }
    std::vector<int> class_ids() const;
    const std::optional<std::vector<std::vector<int>>>& folds() const { return folds_; }

    const CatalogEntry& entry(const std::string& id) const;
    std::vector<std::string> ids_of(const std::string& institution) const;
    bool has_institution(const std::string& u) const;

    static Catalog read(const std::filesystem::path& index, const std::filesystem::path& data_root = {});
    void write(const std::filesystem::path& index) const;

private:
    std::vector<CatalogEntry> entries_;
    std::vector<std::string> institutions_;
    std::vector<ClassInfo> classes_;
    std::optional<std::vector<std::vector<int>>> folds_;
};

/// Loads an image and its integer-coded label volume. Label values are rounded to the
/// nearest integer, so a {0,1}-valued single-class file binarizes at 0.5.
/// Throws IoError (missing/bad file), ShapeError (image/label mismatch), ConfigError
/// (non-finite voxels).
Case load_case(const std::filesystem::path& volume_path, const std::filesystem::path& label_path,
               const std::vector<int>& classes, std::string id = {}, std::string institution = {});
Case load_case(const Catalog& catalog, const std::string& id);

void save_volume(const Volume& volume, const std::filesystem::path& path);
void save_labels(const LabelMap& labels, const Spacing3& spacing, const std::filesystem::path& path);

/// Writes a binary mask with the geometry of `meta`.
void save_prediction(const torch::Tensor& mask, const Volume& meta, const std::filesystem::path& path);
/// Reads a mask written by save_prediction (values rounded to {0,1}) plus its spacing.
std::pair<torch::Tensor, Spacing3> load_mask(const std::filesystem::path& path);

}  // namespace protoreg
