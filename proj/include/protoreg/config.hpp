#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "protoreg/losses.hpp"
#include "protoreg/model.hpp"
#include "protoreg/preprocess.hpp"

namespace protoreg {

/// Every tunable of a training/evaluation run. Serialized as JSON; keys absent from a file keep
/// the defaults below, and `to_json` echoes every value.
struct RunConfig {
    std::filesystem::path data_root;
    std::string catalog = "catalog.tsv";  // relative to data_root

    GridSpec grid;
    bool augment = true;
    AugmentRanges augmentation;
    ModelConfig model;  // num_base_classes is filled in from the split
    LossConvention loss_convention = LossConvention::kMean;

    double learning_rate = 1e-4;
    int64_t iterations = 2000;
    int64_t validation_every = 200;
    int fold = 1;
    std::string novel_institution;
    uint64_t seed = 0;
    int threads = 1;
    int64_t feature_cache = 64;  // volumes whose features are kept during evaluation

    std::filesystem::path catalog_path() const;

    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;
};

}  // namespace protoreg
