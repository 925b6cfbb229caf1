#include "protoreg/synthbench.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <random>

#include "protoreg/error.hpp"

namespace protoreg::synth {

namespace {

using nlohmann::json;

std::mt19937_64 case_rng(uint64_t seed, std::size_t inst, int index) {
    std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32), static_cast<uint32_t>(inst),
                      static_cast<uint32_t>(index)};
    return std::mt19937_64(seq);
}

bool inside(const ClassSpec& c, const std::array<double, 3>& centre, const std::array<double, 3>& size, double x,
            double y, double z) {
    const double d[3] = {x - centre[0], y - centre[1], z - centre[2]};
    if (c.kind == "box") {
        for (int a = 0; a < 3; ++a) {
            if (std::abs(d[a]) > size[a]) return false;
        }
        return true;
    }
    double r = 0.0;
    for (int a = 0; a < 3; ++a) r += (d[a] / size[a]) * (d[a] / size[a]);
    return r <= 1.0;
}

}  // namespace

void SynthSpec::validate() const {
    for (auto n : shape) {
        if (n < 1) throw ConfigError("synthetic grid must be non-empty");
    }
    if (institutions.empty() || classes.empty()) throw ConfigError("synthetic spec needs institutions and classes");
    if (!(intensity_jitter >= 0.0)) throw ConfigError("intensity_jitter must be non-negative");
    for (const auto& c : classes) {
        if (c.id <= 0 || c.id > 255) throw ConfigError("synthetic class ids must be in 1..255");
        if (c.kind != "sphere" && c.kind != "box") throw ConfigError("unknown primitive kind '" + c.kind + "'");
        for (int a = 0; a < 3; ++a) {
            if (!(c.size_min[a] > 0.0) || c.size_max[a] < c.size_min[a]) {
                throw ConfigError("class '" + c.name + "' has a bad size range");
            }
        }
    }
    for (const auto& u : institutions) {
        if (u.count < 0 || u.noise_sd < 0.0) throw ConfigError("institution '" + u.id + "' has a bad count or noise");
        for (const auto& c : classes) {
            for (int a = 0; a < 3; ++a) {
                const double reach = c.size_max[a] + jitter[a];
                const double centre = c.centre[a] + u.offset[a];
                if (centre - reach < 0.0 || centre + reach > static_cast<double>(shape[a] - 1)) {
                    throw ConfigError("class '" + c.name + "' leaves the grid for institution '" + u.id + "'");
                }
            }
        }
    }
    for (std::size_t i = 0; i < classes.size(); ++i) {
        for (std::size_t j = i + 1; j < classes.size(); ++j) {
            bool apart = false;
            for (int a = 0; a < 3; ++a) {
                const double gap = std::abs(classes[i].centre[a] - classes[j].centre[a]);
                if (gap > classes[i].size_max[a] + classes[j].size_max[a] + 2.0 * jitter[a]) apart = true;
            }
            if (!apart) throw ConfigError("classes '" + classes[i].name + "' and '" + classes[j].name + "' may overlap");
        }
    }
}

json SynthSpec::to_json() const {
    json j;
    j["shape"] = shape;
    j["spacing"] = spacing;
    j["background"] = background;
    j["jitter"] = jitter;
    j["intensity_jitter"] = intensity_jitter;
    j["seed"] = seed;
    j["folds"] = folds;
    for (const auto& u : institutions) {
        j["institutions"].push_back(
            {{"id", u.id}, {"offset", u.offset}, {"bias", u.bias}, {"noise_sd", u.noise_sd}, {"count", u.count}});
    }
    for (const auto& c : classes) {
        j["classes"].push_back({{"id", c.id},
                                {"name", c.name},
                                {"kind", c.kind},
                                {"centre", c.centre},
                                {"size_min", c.size_min},
                                {"size_max", c.size_max},
                                {"intensity", c.intensity}});
    }
    return j;
}

SynthSpec SynthSpec::from_json(const json& j) {
    SynthSpec s;
    try {
        if (j.contains("shape")) s.shape = j["shape"].get<Shape3>();
        if (j.contains("spacing")) s.spacing = j["spacing"].get<Spacing3>();
        s.background = j.value("background", s.background);
        if (j.contains("jitter")) s.jitter = j["jitter"].get<std::array<double, 3>>();
        s.intensity_jitter = j.value("intensity_jitter", s.intensity_jitter);
        s.seed = j.value("seed", s.seed);
        if (j.contains("folds")) s.folds = j["folds"].get<std::vector<std::vector<int>>>();
        for (const auto& u : j.at("institutions")) {
            InstitutionSpec x;
            x.id = u.at("id").get<std::string>();
            if (u.contains("offset")) x.offset = u["offset"].get<std::array<double, 3>>();
            x.bias = u.value("bias", 0.0);
            x.noise_sd = u.value("noise_sd", 0.0);
            x.count = u.at("count").get<int>();
            s.institutions.push_back(x);
        }
        for (const auto& c : j.at("classes")) {
            ClassSpec x;
            x.id = c.at("id").get<int>();
            x.name = c.value("name", "class" + std::to_string(x.id));
            x.kind = c.value("kind", x.kind);
            x.centre = c.at("centre").get<std::array<double, 3>>();
            x.size_min = c.at("size_min").get<std::array<double, 3>>();
            x.size_max = c.contains("size_max") ? c["size_max"].get<std::array<double, 3>>() : x.size_min;
            x.intensity = c.value("intensity", 1.0);
            s.classes.push_back(x);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad synthetic spec: ") + e.what());
    }
    s.validate();
    return s;
}

SynthSpec SynthSpec::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open synthetic spec " + path.string());
    try {
        return from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw ConfigError("cannot parse " + path.string() + ": " + e.what());
    }
}

SynthSpec SynthSpec::benchmark() {
    SynthSpec s;
    s.seed = 7;
    s.jitter = {1.0, 1.0, 0.0};
    s.intensity_jitter = 0.5;
    // Offsets misalign structures across institutions by 4-7 voxels, less than the structure
    // radii, so misaligned pairs still overlap.
    s.institutions = {{"A", {-4.0, 0.0, 0.0}, 0.0, 0.3, 20},
                      {"B", {0.0, 4.0, 0.0}, 0.3, 0.3, 20},
                      {"C", {3.0, -3.0, 0.0}, -0.3, 0.3, 12}};
    s.classes = {{1, "sphere_a", "sphere", {14.0, 14.0, 8.0}, {6.0, 6.0, 3.0}, {8.0, 8.0, 4.0}, 1.75},
                 {2, "box_b", "box", {34.0, 14.0, 16.0}, {5.0, 5.0, 2.0}, {7.0, 7.0, 3.0}, 1.5},
                 {3, "sphere_c", "sphere", {14.0, 34.0, 16.0}, {6.0, 6.0, 3.0}, {8.0, 8.0, 4.0}, 2.0},
                 {4, "box_d", "box", {34.0, 34.0, 8.0}, {5.0, 6.0, 2.0}, {7.0, 7.0, 3.0}, 2.25}};
    s.folds = {{1}, {2}, {3}, {4}};
    s.validate();
    return s;
}

Case generate_case(const SynthSpec& spec, std::size_t inst, int index) {
    const auto& u = spec.institutions.at(inst);
    auto rng = case_rng(spec.seed, inst, index);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);

    const int64_t W = spec.shape[0], H = spec.shape[1], D = spec.shape[2];
    std::vector<float> image(static_cast<std::size_t>(W * H * D));
    std::vector<int64_t> codes(image.size(), 0);
    auto at = [&](int64_t x, int64_t y, int64_t z) { return static_cast<std::size_t>((x * H + y) * D + z); };

    std::map<int, double> level;
    for (const auto& c : spec.classes) {
        std::array<double, 3> centre, size;
        for (int a = 0; a < 3; ++a) {
            centre[a] = c.centre[a] + u.offset[a] + spec.jitter[a] * (2.0 * unit(rng) - 1.0);
            size[a] = c.size_min[a] + (c.size_max[a] - c.size_min[a]) * unit(rng);
        }
        level[c.id] = c.intensity + spec.intensity_jitter * (2.0 * unit(rng) - 1.0);
        for (int64_t x = 0; x < W; ++x) {
            for (int64_t y = 0; y < H; ++y) {
                for (int64_t z = 0; z < D; ++z) {
                    if (!inside(c, centre, size, static_cast<double>(x), static_cast<double>(y), static_cast<double>(z))) {
                        continue;
                    }
                    if (codes[at(x, y, z)] != 0) throw ConfigError("synthetic primitives overlap");
                    codes[at(x, y, z)] = c.id;
                }
            }
        }
    }
    for (std::size_t i = 0; i < image.size(); ++i) {
        const double base = codes[i] ? level[static_cast<int>(codes[i])] : 0.0;
        image[i] = static_cast<float>(spec.background + base + u.bias + u.noise_sd * noise(rng));
    }

    Case out;
    out.volume.intensities = torch::from_blob(image.data(), {W, H, D}, torch::kFloat32).clone();
    out.volume.spacing = spec.spacing;
    out.volume.id = u.id + "_" + std::to_string(index);
    out.volume.institution = u.id;
    out.labels.codes = torch::from_blob(codes.data(), {W, H, D}, torch::kInt64).clone();
    for (const auto& c : spec.classes) out.labels.classes.push_back(c.id);
    return out;
}

Catalog generate(const SynthSpec& spec, const std::filesystem::path& out_dir) {
    spec.validate();
    std::vector<std::string> ids;
    for (const auto& u : spec.institutions) ids.push_back(u.id);
    std::vector<ClassInfo> classes;
    for (const auto& c : spec.classes) classes.push_back({c.id, c.name});
    Catalog catalog(ids, classes);
    if (spec.folds.empty()) {
        std::vector<std::vector<int>> folds;
        for (const auto& c : spec.classes) folds.push_back({c.id});
        catalog.set_folds(folds);
    } else {
        catalog.set_folds(spec.folds);
    }
    std::error_code ec;
    std::filesystem::create_directories(out_dir / "images", ec);
    std::filesystem::create_directories(out_dir / "labels", ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
    for (std::size_t i = 0; i < spec.institutions.size(); ++i) {
        for (int k = 0; k < spec.institutions[i].count; ++k) {
            const auto c = generate_case(spec, i, k);
            const auto vol = out_dir / "images" / (c.volume.id + ".nii.gz");
            const auto lab = out_dir / "labels" / (c.volume.id + ".nii.gz");
            save_volume(c.volume, vol);
            save_labels(c.labels, c.volume.spacing, lab);
            catalog.add({c.volume.id, vol, lab, c.volume.institution});
        }
    }
    catalog.write(out_dir / "catalog.tsv");
    std::ofstream echo(out_dir / "synth_spec.json");
    echo << spec.to_json().dump(2) << '\n';
    return catalog;
}

// ---- oracles ----

namespace {

std::vector<std::array<int64_t, 2>> axis_windows(int64_t dim, double alpha) {
    const double w = alpha * static_cast<double>(dim);
    const auto win = static_cast<int64_t>(std::llround(w));
    const int64_t step = win == dim ? dim : win / 2;
    std::vector<std::array<int64_t, 2>> out;
    for (int64_t s = 0; s + win <= dim; s += step) out.push_back({s, s + win});
    return out;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double floor = 1e-8;
    return dot / (std::max(std::sqrt(na), floor) * std::max(std::sqrt(nb), floor));
}

}  // namespace

OraclePrototypes oracle_prototype(const std::vector<double>& features, int64_t channels,
                                  const std::array<int64_t, 3>& dims, const std::vector<double>& mask,
                                  const std::array<double, 3>& alphas) {
    const int64_t W = dims[0], H = dims[1], D = dims[2];
    const int64_t N = W * H * D;
    auto feat = [&](int64_t c, int64_t x, int64_t y, int64_t z) { return features[static_cast<std::size_t>(c * N + (x * H + y) * D + z)]; };
    auto m = [&](int64_t x, int64_t y, int64_t z) { return mask[static_cast<std::size_t>((x * H + y) * D + z)]; };

    OraclePrototypes out;
    const auto wx = axis_windows(W, alphas[0]);
    const auto wy = axis_windows(H, alphas[1]);
    const auto wz = axis_windows(D, alphas[2]);
    for (const auto& a : wx) {
        for (const auto& b : wy) {
            for (const auto& c : wz) out.windows.push_back({{a[0], b[0], c[0]}, {a[1], b[1], c[1]}});
        }
    }
    auto pool = [&](const OracleWindow& w, bool fg, std::vector<double>& proto) {
        proto.assign(static_cast<std::size_t>(channels), 0.0);
        double total = 0.0;
        for (int64_t x = w.lo[0]; x < w.hi[0]; ++x) {
            for (int64_t y = w.lo[1]; y < w.hi[1]; ++y) {
                for (int64_t z = w.lo[2]; z < w.hi[2]; ++z) {
                    const double weight = fg ? m(x, y, z) : 1.0 - m(x, y, z);
                    total += weight;
                    for (int64_t ch = 0; ch < channels; ++ch) proto[static_cast<std::size_t>(ch)] += weight * feat(ch, x, y, z);
                }
            }
        }
        if (total > 0.0) {
            for (auto& v : proto) v /= total;
        } else {
            std::fill(proto.begin(), proto.end(), 0.0);
        }
        return total > 0.0;
    };
    for (const auto& w : out.windows) {
        std::vector<double> f, b;
        out.foreground_valid.push_back(pool(w, true, f));
        out.background_valid.push_back(pool(w, false, b));
        out.foreground.push_back(f);
        out.background.push_back(b);
    }
    const OracleWindow whole{{0, 0, 0}, {W, H, D}};
    out.global_foreground_valid = pool(whole, true, out.global_foreground);
    out.global_background_valid = pool(whole, false, out.global_background);
    return out;
}

OracleSimilarity oracle_similarity(const std::vector<double>& query_features, int64_t channels,
                                   const std::array<int64_t, 3>& dims, const OraclePrototypes& protos) {
    const int64_t W = dims[0], H = dims[1], D = dims[2];
    const int64_t N = W * H * D;
    OracleSimilarity out;
    out.foreground.assign(static_cast<std::size_t>(N), 0.0);
    out.background.assign(static_cast<std::size_t>(N), 0.0);
    std::vector<double> q(static_cast<std::size_t>(channels));
    for (int64_t x = 0; x < W; ++x) {
        for (int64_t y = 0; y < H; ++y) {
            for (int64_t z = 0; z < D; ++z) {
                const int64_t v = (x * H + y) * D + z;
                for (int64_t ch = 0; ch < channels; ++ch) q[static_cast<std::size_t>(ch)] = query_features[static_cast<std::size_t>(ch * N + v)];
                auto best = [&](const std::vector<std::vector<double>>& ps, const std::vector<bool>& valid,
                                const std::vector<double>& global, bool global_valid) {
                    bool any = false;
                    double s = -std::numeric_limits<double>::infinity();
                    for (std::size_t g = 0; g < protos.windows.size(); ++g) {
                        const auto& w = protos.windows[g];
                        const bool contains = x >= w.lo[0] && x < w.hi[0] && y >= w.lo[1] && y < w.hi[1] &&
                                              z >= w.lo[2] && z < w.hi[2];
                        if (!contains || !valid[g]) continue;
                        any = true;
                        s = std::max(s, cosine(q, ps[g]));
                    }
                    if (any) return s;
                    return global_valid ? cosine(q, global) : -1.0;
                };
                out.foreground[static_cast<std::size_t>(v)] =
                    best(protos.foreground, protos.foreground_valid, protos.global_foreground, protos.global_foreground_valid);
                out.background[static_cast<std::size_t>(v)] =
                    best(protos.background, protos.background_valid, protos.global_background, protos.global_background_valid);
            }
        }
    }
    return out;
}

}  // namespace protoreg::synth
