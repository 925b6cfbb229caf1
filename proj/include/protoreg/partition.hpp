#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "protoreg/volume_io.hpp"

namespace protoreg {

/// The four class folds of the eight pelvic structures, by catalog class name.
const std::vector<std::vector<std::string>>& pelvic_folds();

/// Class-id folds for a catalog: its own `folds` directive when present, otherwise the
/// pelvic table matched by class name. Throws ConfigError when neither applies.
std::vector<std::vector<int>> resolve_folds(const Catalog& catalog);

struct InstitutionSplit {
    std::vector<std::string> train;
    std::vector<std::string> test;        // excludes validation ids
    std::vector<std::string> validation;
    std::vector<std::string> all() const;
};

/// Base/novel partition over classes and institutions plus per-institution image roles.
struct SplitSpec {
    std::vector<int> base_classes;
    std::vector<int> novel_classes;
    std::vector<std::string> base_institutions;
    std::vector<std::string> novel_institutions;
    std::map<std::string, InstitutionSplit> institutions;

    bool is_novel_institution(const std::string& u) const;
    /// Union of the base institutions' training images, in institution order.
    std::vector<std::string> train_pool() const;
    std::vector<std::string> validation_ids() const;
    /// Institution holding image `id`; throws ConfigError when absent.
    const std::string& institution_of(const std::string& id) const;

    /// Throws ConfigError when a disjointness invariant is broken.
    void validate() const;

    void write_manifest(const std::filesystem::path& path) const;
    static SplitSpec read_manifest(const std::filesystem::path& path);
    std::string to_text() const;
    static SplitSpec from_text(const std::string& text);
};

/// One few-shot task: segment `class_id` in `query` given `supports`.
struct Episode {
    std::string id;
    std::string query;
    std::string query_institution;
    std::vector<std::string> supports;
    std::string support_institution;
    int class_id = 0;
    bool support_from_novel = false;  // counts toward NOVEL when true, BASE otherwise
};

/// Builds the fold's class split and the 3:1 train/test image split of each institution,
/// then moves min(2, pool - 1) images per institution from the novel data into validation.
/// Deterministic in `seed`. Throws ConfigError for a bad fold, an unknown institution or an
/// institution holding fewer than 3 images.
SplitSpec make_split(const Catalog& catalog, int fold_index, const std::string& novel_institution,
                     uint64_t seed);

/// Training episode with K = 1: class uniform over base classes, query and support distinct
/// images drawn uniformly from the base institutions' training images.
Episode sample_train_episode(const SplitSpec& split, std::mt19937_64& rng);

/// Evaluation protocol: every novel-institution test image as query, against a support draw
/// from every institution (novel: any other image of the institution; base: its test images),
/// for every novel class. `shots` distinct supports are drawn per (query, institution), fewer
/// only when the pool is smaller. Support draws depend on (seed, query, institution) only.
std::vector<Episode> enumerate_eval_episodes(const SplitSpec& split, int shots, uint64_t seed);

/// Validation protocol used for checkpoint selection: each validation image as query with a
/// single support from the novel institution(s), for every novel class.
std::vector<Episode> validation_episodes(const SplitSpec& split, uint64_t seed);

}  // namespace protoreg
