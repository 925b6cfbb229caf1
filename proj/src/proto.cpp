#include "protoreg/proto.hpp"

#include <cmath>

#include "protoreg/error.hpp"

namespace protoreg {

namespace F = torch::nn::functional;

WindowGrid::Box WindowGrid::box(int64_t g) const {
    const int64_t k = g % count[2];
    const int64_t j = (g / count[2]) % count[1];
    const int64_t i = g / (count[2] * count[1]);
    const Shape3 idx{i, j, k};
    Box b{};
    for (int a = 0; a < 3; ++a) {
        b.lo[a] = idx[a] * stride[a];
        b.hi[a] = b.lo[a] + window[a];
    }
    return b;
}

std::vector<WindowGrid::Box> WindowGrid::boxes() const {
    std::vector<Box> out;
    out.reserve(static_cast<size_t>(size()));
    for (int64_t g = 0; g < size(); ++g) out.push_back(box(g));
    return out;
}

std::vector<int64_t> WindowGrid::windows_at(int64_t x, int64_t y, int64_t z) const {
    const Shape3 p{x, y, z};
    std::array<std::vector<int64_t>, 3> per_axis;
    for (int a = 0; a < 3; ++a) {
        const int64_t hi = p[a] / stride[a];
        for (int64_t i = hi - 1; i <= hi; ++i) {
            if (i >= 0 && i < count[a] && p[a] >= i * stride[a] && p[a] < i * stride[a] + window[a]) {
                per_axis[a].push_back(i);
            }
        }
    }
    std::vector<int64_t> out;
    for (auto i : per_axis[0])
        for (auto j : per_axis[1])
            for (auto k : per_axis[2]) out.push_back(linear(i, j, k));
    return out;
}

WindowGrid build_windows(const Shape3& shape, const std::array<double, 3>& alphas) {
    WindowGrid g;
    g.shape = shape;
    for (int a = 0; a < 3; ++a) {
        if (shape[a] < 1) throw ConfigError("window grid needs a positive shape");
        if (!(alphas[a] > 0.0) || alphas[a] > 1.0) throw ConfigError("window fractions must lie in (0, 1]");
        const double w = alphas[a] * static_cast<double>(shape[a]);
        const auto win = std::llround(w);
        if (std::fabs(w - static_cast<double>(win)) > 1e-9 || win < 1) {
            throw ConfigError("window size " + std::to_string(w) + " is not a whole number of voxels");
        }
        g.window[a] = win;
        if (win == shape[a]) {
            g.stride[a] = win;
            g.count[a] = 1;
            continue;
        }
        if (win % 2 != 0) throw ConfigError("window size must be even to have a half-window stride");
        g.stride[a] = win / 2;
        if ((shape[a] - win) % g.stride[a] != 0) {
            throw ConfigError("windows of " + std::to_string(win) + " voxels do not tile an axis of " +
                              std::to_string(shape[a]));
        }
        g.count[a] = (shape[a] - win) / g.stride[a] + 1;
    }
    return g;
}

namespace {

/// Window sums of `field` ([C, W, H, D]) -> [G, C].
torch::Tensor window_sums(const torch::Tensor& field, const WindowGrid& windows) {
    const auto& w = windows.window;
    const double volume = static_cast<double>(w[0] * w[1] * w[2]);
    auto pooled = F::avg_pool3d(field.unsqueeze(0), F::AvgPool3dFuncOptions({w[0], w[1], w[2]})
                                                        .stride({windows.stride[0], windows.stride[1],
                                                                 windows.stride[2]}));
    return (pooled.squeeze(0) * volume).reshape({field.size(0), -1}).t();
}

void masked_average(const torch::Tensor& features, const torch::Tensor& weight, const WindowGrid& windows,
                    torch::Tensor& protos, torch::Tensor& valid, torch::Tensor& global, bool& global_valid) {
    const auto weighted = features * weight.unsqueeze(0);
    const auto num = window_sums(weighted, windows);                 // [G, Cf]
    const auto den = window_sums(weight.unsqueeze(0), windows);      // [G, 1]
    valid = den.squeeze(1).gt(0.0);
    const auto safe = torch::where(den.gt(0.0), den, torch::ones_like(den));
    protos = torch::where(den.gt(0.0), num / safe, torch::zeros_like(num));

    const auto total = weight.sum();
    global_valid = total.item<double>() > 0.0;
    const auto gnum = weighted.reshape({features.size(0), -1}).sum(1);
    global = global_valid ? gnum / total : torch::zeros_like(gnum);
}

/// Per-axis candidate window indices: [2, n] indices and membership flags.
void axis_candidates(int64_t n, int64_t stride, int64_t window, int64_t count, torch::Tensor& index,
                     torch::Tensor& member) {
    auto x = torch::arange(n, torch::kInt64);
    auto hi = torch::div(x, stride, "floor");
    index = torch::stack({hi - 1, hi}, 0);
    auto start = index * stride;
    member = index.ge(0) & index.lt(count) & x.unsqueeze(0).ge(start) & x.unsqueeze(0).lt(start + window);
    index = index.clamp(0, count - 1);
}

torch::Tensor normalize_rows(const torch::Tensor& m) {
    return m / m.norm(2, 1, true).clamp_min(kCosineNormFloor);
}

torch::Tensor max_similarity(const torch::Tensor& qn, const torch::Tensor& protos, const torch::Tensor& valid,
                             const torch::Tensor& global, bool global_valid, const torch::Tensor& combo_index,
                             const torch::Tensor& combo_member) {
    const auto pn = normalize_rows(protos);  // [G, Cf]
    const int64_t combos = combo_index.size(0);
    std::vector<torch::Tensor> cos;
    cos.reserve(static_cast<size_t>(combos));
    std::vector<torch::Tensor> ok;
    for (int64_t c = 0; c < combos; ++c) {
        const auto idx = combo_index[c];
        cos.push_back((pn.index_select(0, idx) * qn).sum(1));
        ok.push_back(combo_member[c] & valid.index_select(0, idx));
    }
    const auto all_cos = torch::stack(cos, 0);
    const auto all_ok = torch::stack(ok, 0);
    const auto masked = torch::where(all_ok, all_cos, torch::full_like(all_cos, -2.0));
    const auto best = std::get<0>(masked.max(0));
    const auto any = all_ok.any(0);

    torch::Tensor fallback;
    if (global_valid) {
        const auto gn = global / global.norm().clamp_min(kCosineNormFloor);
        fallback = (qn * gn.unsqueeze(0)).sum(1);
    } else {
        fallback = torch::full_like(best, -1.0);
    }
    return torch::where(any, best, fallback);
}

}  // namespace

PrototypeSet compute_prototypes(const torch::Tensor& features, const torch::Tensor& fg_weight,
                                const torch::Tensor& bg_weight, const WindowGrid& windows) {
    if (features.dim() != 4) throw ShapeError("prototype features must be [Cf, W, H, D]");
    if (shape_of(features) != windows.shape || shape_of(fg_weight) != windows.shape ||
        shape_of(bg_weight) != windows.shape || fg_weight.dim() != 3 || bg_weight.dim() != 3) {
        throw ShapeError("features, mask and window grid disagree on shape");
    }
    PrototypeSet p;
    masked_average(features, fg_weight.to(features.scalar_type()), windows, p.foreground, p.foreground_valid,
                   p.global_foreground, p.global_foreground_valid);
    masked_average(features, bg_weight.to(features.scalar_type()), windows, p.background, p.background_valid,
                   p.global_background, p.global_background_valid);
    return p;
}

PrototypeSet compute_prototypes(const torch::Tensor& features, const torch::Tensor& mask,
                                const WindowGrid& windows) {
    return compute_prototypes(features, mask, 1.0 - mask, windows);
}

SimilarityPair similarity_maps(const torch::Tensor& query_features, const PrototypeSet& protos,
                               const WindowGrid& windows) {
    if (query_features.dim() != 4 || shape_of(query_features) != windows.shape) {
        throw ShapeError("query features do not match the window grid");
    }
    const auto cf = query_features.size(0);
    if (protos.foreground.size(1) != cf) throw ShapeError("prototype and query channel counts differ");

    std::array<torch::Tensor, 3> index, member;
    for (int a = 0; a < 3; ++a) {
        axis_candidates(windows.shape[a], windows.stride[a], windows.window[a], windows.count[a], index[a],
                        member[a]);
    }
    // Broadcast the 2x2x2 candidate combinations over the voxel grid: [8, N].
    std::vector<torch::Tensor> combo_index, combo_member;
    for (int c = 0; c < 8; ++c) {
        const auto i = index[0][c & 1].view({-1, 1, 1});
        const auto j = index[1][(c >> 1) & 1].view({1, -1, 1});
        const auto k = index[2][(c >> 2) & 1].view({1, 1, -1});
        combo_index.push_back(((i * windows.count[1] + j) * windows.count[2] + k).reshape(-1));
        const auto mi = member[0][c & 1].view({-1, 1, 1});
        const auto mj = member[1][(c >> 1) & 1].view({1, -1, 1});
        const auto mk = member[2][(c >> 2) & 1].view({1, 1, -1});
        combo_member.push_back((mi & mj & mk).reshape(-1));
    }
    const auto ci = torch::stack(combo_index, 0);
    const auto cm = torch::stack(combo_member, 0);

    const auto qn = normalize_rows(query_features.reshape({cf, -1}).t());  // [N, Cf]
    const auto s = windows.shape;
    SimilarityPair out;
    out.foreground = max_similarity(qn, protos.foreground, protos.foreground_valid, protos.global_foreground,
                                    protos.global_foreground_valid, ci, cm)
                         .reshape({s[0], s[1], s[2]});
    out.background = max_similarity(qn, protos.background, protos.background_valid, protos.global_background,
                                    protos.global_background_valid, ci, cm)
                         .reshape({s[0], s[1], s[2]});
    return out;
}

torch::Tensor probability_map(const SimilarityPair& sims) {
    const auto fg = torch::sigmoid(sims.foreground - sims.background);
    return torch::stack({1.0 - fg, fg}, 0);
}

}  // namespace protoreg
