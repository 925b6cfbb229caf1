#include "protoreg/config.hpp"

#include <fstream>

#include "protoreg/error.hpp"

namespace protoreg {

using nlohmann::json;

std::filesystem::path RunConfig::catalog_path() const {
    const std::filesystem::path c(catalog);
    return (c.is_absolute() || data_root.empty()) ? c : data_root / c;
}

json RunConfig::to_json() const {
    json j;
    j["data_root"] = data_root.string();
    j["catalog"] = catalog;
    j["grid"] = {{"shape", grid.shape}, {"spacing", grid.spacing}};
    j["augment"] = augment;
    j["augmentation"] = {{"rotation_deg", augmentation.rotation_deg},
                         {"translation_vox", augmentation.translation_vox},
                         {"scale_min", augmentation.scale_min},
                         {"scale_max", augmentation.scale_max}};
    j["model"] = {{"variant", to_string(model.variant)},
                  {"backbone_channels", model.backbone.channels},
                  {"feature_channels", model.backbone.feature_channels},
                  {"align_channels", model.align_channels},
                  {"conditioning_hidden", model.conditioning_hidden},
                  {"num_base_classes", model.num_base_classes},
                  {"window_fractions", model.window_fractions},
                  {"base_feature_gradient", model.base_feature_gradient}};
    j["loss_convention"] = to_string(loss_convention);
    j["learning_rate"] = learning_rate;
    j["iterations"] = iterations;
    j["validation_every"] = validation_every;
    j["fold"] = fold;
    j["novel_institution"] = novel_institution;
    j["seed"] = seed;
    j["threads"] = threads;
    j["feature_cache"] = feature_cache;
    return j;
}

RunConfig RunConfig::from_json(const json& j) {
    RunConfig c;
    try {
        if (j.contains("data_root")) c.data_root = j["data_root"].get<std::string>();
        c.catalog = j.value("catalog", c.catalog);
        if (j.contains("grid")) {
            const auto& g = j["grid"];
            if (g.contains("shape")) c.grid.shape = g["shape"].get<Shape3>();
            if (g.contains("spacing")) c.grid.spacing = g["spacing"].get<Spacing3>();
        }
        c.augment = j.value("augment", c.augment);
        if (j.contains("augmentation")) {
            const auto& a = j["augmentation"];
            c.augmentation.rotation_deg = a.value("rotation_deg", c.augmentation.rotation_deg);
            if (a.contains("translation_vox")) {
                c.augmentation.translation_vox = a["translation_vox"].get<std::array<double, 3>>();
            }
            c.augmentation.scale_min = a.value("scale_min", c.augmentation.scale_min);
            c.augmentation.scale_max = a.value("scale_max", c.augmentation.scale_max);
        }
        if (j.contains("model")) {
            const auto& m = j["model"];
            if (m.contains("variant")) c.model.variant = parse_variant(m["variant"].get<std::string>());
            if (m.contains("backbone_channels")) {
                c.model.backbone.channels = m["backbone_channels"].get<std::vector<int64_t>>();
            }
            c.model.backbone.feature_channels = m.value("feature_channels", c.model.backbone.feature_channels);
            if (m.contains("align_channels")) c.model.align_channels = m["align_channels"].get<std::vector<int64_t>>();
            c.model.conditioning_hidden = m.value("conditioning_hidden", c.model.conditioning_hidden);
            c.model.num_base_classes = m.value("num_base_classes", c.model.num_base_classes);
            if (m.contains("window_fractions")) {
                c.model.window_fractions = m["window_fractions"].get<std::array<double, 3>>();
            }
            c.model.base_feature_gradient = m.value("base_feature_gradient", c.model.base_feature_gradient);
        }
        if (j.contains("loss_convention")) {
            c.loss_convention = parse_loss_convention(j["loss_convention"].get<std::string>());
        }
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.iterations = j.value("iterations", c.iterations);
        c.validation_every = j.value("validation_every", c.validation_every);
        c.fold = j.value("fold", c.fold);
        c.novel_institution = j.value("novel_institution", c.novel_institution);
        c.seed = j.value("seed", c.seed);
        c.threads = j.value("threads", c.threads);
        c.feature_cache = j.value("feature_cache", c.feature_cache);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad run config: ") + e.what());
    }
    if (c.learning_rate < 0.0) throw ConfigError("learning_rate must be non-negative");
    if (c.iterations < 0 || c.validation_every < 1) throw ConfigError("bad iteration counts");
    if (!(c.model.base_feature_gradient >= 0.0 && c.model.base_feature_gradient <= 1.0)) {
        throw ConfigError("base_feature_gradient must lie in [0, 1]");
    }
    c.grid.validate();
    return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("cannot parse " + path.string() + ": " + e.what());
    }
    return from_json(j);
}

void RunConfig::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write config " + path.string());
    out << to_json().dump(2) << '\n';
}

}  // namespace protoreg
