#include "protoreg/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "protoreg/error.hpp"
#include "protoreg/sampling.hpp"

namespace protoreg {
namespace {

using sampling::Interp;

torch::Tensor resample_axiswise(const torch::Tensor& field, const Shape3& out_shape, const Shape3& in_shape,
                                const std::array<double, 3>& step, Interp mode) {
    auto coords = sampling::grid_indices(out_shape[0], out_shape[1], out_shape[2]);
    for (int a = 0; a < 3; ++a) {
        auto col = (coords.select(1, a) + 0.5) * step[a] - 0.5;
        // Edge replicate: voxel centres of the new grid may sit up to half a voxel outside.
        coords.select(1, a).copy_(col.clamp(0.0, static_cast<double>(in_shape[a] - 1)));
    }
    coords = sampling::snap(coords);
    auto out = sampling::sample(field.unsqueeze(0), coords, mode);
    return out.reshape({out_shape[0], out_shape[1], out_shape[2]});
}

/// Centre crop / zero pad of the last three dims to `target`.
torch::Tensor crop_or_pad(const torch::Tensor& t, const Shape3& target, double fill) {
    const auto src = shape_of(t);
    auto out = torch::full({target[0], target[1], target[2]}, fill, t.options());
    std::array<int64_t, 3> src_lo{}, dst_lo{}, len{};
    for (int a = 0; a < 3; ++a) {
        if (src[a] >= target[a]) {
            src_lo[a] = (src[a] - target[a]) / 2;
            dst_lo[a] = 0;
            len[a] = target[a];
        } else {
            src_lo[a] = 0;
            dst_lo[a] = (target[a] - src[a]) / 2;
            len[a] = src[a];
        }
    }
    out.narrow(0, dst_lo[0], len[0]).narrow(1, dst_lo[1], len[1]).narrow(2, dst_lo[2], len[2])
        .copy_(t.narrow(0, src_lo[0], len[0]).narrow(1, src_lo[1], len[1]).narrow(2, src_lo[2], len[2]));
    return out;
}

std::array<std::array<double, 3>, 3> rotation_matrix(const std::array<double, 3>& deg) {
    const double k = std::numbers::pi / 180.0;
    const double a = deg[0] * k, b = deg[1] * k, c = deg[2] * k;
    const double ca = std::cos(a), sa = std::sin(a), cb = std::cos(b), sb = std::sin(b), cc = std::cos(c),
                 sc = std::sin(c);
    // Rz(c) * Ry(b) * Rx(a)
    return {{{cb * cc, sa * sb * cc - ca * sc, ca * sb * cc + sa * sc},
             {cb * sc, sa * sb * sc + ca * cc, ca * sb * sc - sa * cc},
             {-sb, sa * cb, ca * cb}}};
}

}  // namespace

void GridSpec::validate() const {
    for (int a = 0; a < 3; ++a) {
        if (shape[a] < 1) throw ConfigError("grid shape must be positive");
        if (!(spacing[a] > 0.0)) throw ConfigError("grid spacing must be positive");
    }
}

Case standardize(const Case& input, const GridSpec& grid) {
    grid.validate();
    const auto& vol = input.volume;
    for (double s : vol.spacing) {
        if (!(s > 0.0) || !std::isfinite(s)) throw ConfigError("degenerate spacing for volume '" + vol.id + "'");
    }
    if (input.labels.shape() != vol.shape()) {
        throw ShapeError("labels " + to_string(input.labels.shape()) + " vs volume " + to_string(vol.shape()));
    }
    const auto in_shape = vol.shape();
    Shape3 rs{};
    std::array<double, 3> step{};
    bool same = true;
    for (int a = 0; a < 3; ++a) {
        const double extent = static_cast<double>(in_shape[a]) * vol.spacing[a];
        rs[a] = std::max<int64_t>(1, std::llround(extent / grid.spacing[a]));
        step[a] = grid.spacing[a] / vol.spacing[a];
        same = same && rs[a] == in_shape[a] && std::fabs(step[a] - 1.0) < 1e-9;
    }

    torch::Tensor image = vol.intensities.to(torch::kFloat32);
    torch::Tensor codes = input.labels.codes;
    if (!same) {
        image = resample_axiswise(image, rs, in_shape, step, Interp::kLinear);
        codes = resample_axiswise(codes.to(torch::kFloat32), rs, in_shape, step, Interp::kNearest)
                    .round()
                    .to(torch::kInt64);
    }
    auto image64 = image.to(torch::kFloat64);
    const double mean = image64.mean().item<double>();
    const double sd = std::max(image64.std(/*unbiased=*/false).item<double>(), kIntensitySdFloor);
    image = ((image64 - mean) / sd).to(torch::kFloat32);

    Case out;
    out.volume.intensities = crop_or_pad(image, grid.shape, 0.0).contiguous();
    out.volume.spacing = grid.spacing;
    out.volume.id = vol.id;
    out.volume.institution = vol.institution;
    out.labels.codes = crop_or_pad(codes, grid.shape, 0.0).contiguous();
    out.labels.classes = input.labels.classes;
    return out;
}

bool AugmentParams::is_identity() const {
    for (int a = 0; a < 3; ++a) {
        if (rotation_deg[a] != 0.0 || translation_vox[a] != 0.0) return false;
    }
    return scale == 1.0;
}

AugmentParams draw_augmentation(const AugmentRanges& ranges, std::mt19937_64& rng) {
    const double rot = std::clamp(ranges.rotation_deg, 0.0, 180.0);
    double lo = std::clamp(ranges.scale_min, 0.25, 4.0);
    double hi = std::clamp(ranges.scale_max, 0.25, 4.0);
    if (lo > hi) std::swap(lo, hi);

    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    AugmentParams p;
    for (int a = 0; a < 3; ++a) p.rotation_deg[a] = rot * unit(rng);
    for (int a = 0; a < 3; ++a) p.translation_vox[a] = std::max(ranges.translation_vox[a], 0.0) * unit(rng);
    p.scale = lo + (hi - lo) * 0.5 * (unit(rng) + 1.0);
    return p;
}

Case apply_augmentation(const Case& input, const AugmentParams& params) {
    if (params.is_identity()) return input;
    const auto shape = input.volume.shape();
    const auto& sp = input.volume.spacing;
    const auto r = rotation_matrix(params.rotation_deg);

    // Pull-back: output voxel j reads source index c + S^-1 R^T (S (j - c - t)) / scale.
    auto coords = sampling::grid_indices(shape[0], shape[1], shape[2]);
    std::array<torch::Tensor, 3> p;
    for (int a = 0; a < 3; ++a) {
        const double centre = 0.5 * static_cast<double>(shape[a] - 1);
        p[a] = (coords.select(1, a) - centre - params.translation_vox[a]) * sp[a] / params.scale;
    }
    std::vector<torch::Tensor> src;
    for (int a = 0; a < 3; ++a) {
        const double centre = 0.5 * static_cast<double>(shape[a] - 1);
        auto q = p[0] * r[0][a] + p[1] * r[1][a] + p[2] * r[2][a];
        src.push_back(q / sp[a] + centre);
    }
    auto sc = sampling::snap(torch::stack(src, 1));

    Case out = input;
    out.volume.intensities =
        sampling::sample(input.volume.intensities.unsqueeze(0), sc, Interp::kLinear).reshape({shape[0], shape[1], shape[2]});
    out.labels.codes = sampling::sample(input.labels.codes.to(torch::kFloat32).unsqueeze(0), sc, Interp::kNearest)
                           .reshape({shape[0], shape[1], shape[2]})
                           .round()
                           .to(torch::kInt64);
    return out;
}

}  // namespace protoreg
