#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "protoreg/types.hpp"
#include "protoreg/volume_io.hpp"

namespace protoreg::synth {

struct InstitutionSpec {
    std::string id;
    std::array<double, 3> offset{0.0, 0.0, 0.0};  // voxels, applied to every structure
    double bias = 0.0;
    double noise_sd = 0.0;
    int count = 0;
};

struct ClassSpec {
    int id = 0;
    std::string name;
    std::string kind = "sphere";  // "sphere" (ellipsoid radii) or "box" (half extents)
    std::array<double, 3> centre{0.0, 0.0, 0.0};
    std::array<double, 3> size_min{1.0, 1.0, 1.0};
    std::array<double, 3> size_max{1.0, 1.0, 1.0};
    double intensity = 1.0;
};

struct SynthSpec {
    Shape3 shape{48, 48, 24};
    Spacing3 spacing{0.75, 0.75, 2.5};
    double background = 0.0;
    std::array<double, 3> jitter{0.0, 0.0, 0.0};  // per-image centre jitter, uniform in [-j, j] voxels
    double intensity_jitter = 0.0;                // per-image primitive intensity jitter, uniform in [-j, j]
    std::vector<InstitutionSpec> institutions;
    std::vector<ClassSpec> classes;
    std::vector<std::vector<int>> folds;  // defaults to one fold per class
    uint64_t seed = 0;

    /// Throws ConfigError when a primitive can leave the grid or two classes can overlap.
    void validate() const;

    nlohmann::json to_json() const;
    static SynthSpec from_json(const nlohmann::json& j);
    static SynthSpec load(const std::filesystem::path& path);

    /// Three institutions (two base-like, one shifted) and four classes on a 48x48x24 grid.
    static SynthSpec benchmark();
};

/// Case `index` of institution `inst` (both 0-based), generated in memory.
Case generate_case(const SynthSpec& spec, std::size_t inst, int index);

/// Writes every volume and label map under `out_dir` plus `catalog.tsv`, and returns the catalog.
Catalog generate(const SynthSpec& spec, const std::filesystem::path& out_dir);

/// Reference prototype computation on flat arrays laid out [channel][x][y][z].
struct OracleWindow {
    std::array<int64_t, 3> lo, hi;
};

struct OraclePrototypes {
    std::vector<OracleWindow> windows;
    std::vector<std::vector<double>> foreground, background;
    std::vector<bool> foreground_valid, background_valid;
    std::vector<double> global_foreground, global_background;
    bool global_foreground_valid = false, global_background_valid = false;
};

OraclePrototypes oracle_prototype(const std::vector<double>& features, int64_t channels,
                                  const std::array<int64_t, 3>& dims, const std::vector<double>& mask,
                                  const std::array<double, 3>& alphas);

struct OracleSimilarity {
    std::vector<double> foreground, background;  // [x][y][z]
};

OracleSimilarity oracle_similarity(const std::vector<double>& query_features, int64_t channels,
                                   const std::array<int64_t, 3>& dims, const OraclePrototypes& protos);

}  // namespace protoreg::synth
