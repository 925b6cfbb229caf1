#include "protoreg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "protoreg/error.hpp"

namespace protoreg {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

torch::Tensor as_bytes(const torch::Tensor& m) {
    if (m.dim() != 3) throw ShapeError("metrics expect 3D masks");
    return m.ne(0).to(torch::kUInt8).contiguous();
}

/// Lower envelope of parabolas: out[q] = min_p f[p] + w (q - p)^2 over finite f[p].
void distance_1d(const double* f, double* out, int64_t n, double w, std::vector<int64_t>& v,
                 std::vector<double>& z) {
    v.assign(static_cast<size_t>(n), 0);
    z.assign(static_cast<size_t>(n) + 1, 0.0);
    int64_t k = -1;
    for (int64_t q = 0; q < n; ++q) {
        if (f[q] == kInf) continue;
        const double fq = f[q] + w * static_cast<double>(q) * static_cast<double>(q);
        while (k >= 0) {
            const auto p = v[static_cast<size_t>(k)];
            const double fp = f[p] + w * static_cast<double>(p) * static_cast<double>(p);
            const double s = (fq - fp) / (2.0 * w * static_cast<double>(q - p));
            if (s <= z[static_cast<size_t>(k)]) {
                --k;
            } else {
                break;
            }
        }
        ++k;
        v[static_cast<size_t>(k)] = q;
        if (k == 0) {
            z[0] = -kInf;
        } else {
            const auto p = v[static_cast<size_t>(k - 1)];
            const double fp = f[p] + w * static_cast<double>(p) * static_cast<double>(p);
            z[static_cast<size_t>(k)] = (fq - fp) / (2.0 * w * static_cast<double>(q - p));
        }
        z[static_cast<size_t>(k) + 1] = kInf;
    }
    if (k < 0) {
        std::fill(out, out + n, kInf);
        return;
    }
    int64_t j = 0;
    for (int64_t q = 0; q < n; ++q) {
        while (z[static_cast<size_t>(j) + 1] < static_cast<double>(q)) ++j;
        const auto p = v[static_cast<size_t>(j)];
        const double d = static_cast<double>(q - p);
        out[q] = f[p] + (d * d) * w;
    }
}

/// Exact squared Euclidean distance (mm^2) from every voxel to the nearest seed voxel.
std::vector<double> squared_distance_transform(const std::vector<std::array<int64_t, 3>>& seeds,
                                               const Shape3& shape, const Spacing3& spacing) {
    const auto [nx, ny, nz] = shape;
    std::vector<double> grid(static_cast<size_t>(nx * ny * nz), kInf);
    auto at = [&](int64_t x, int64_t y, int64_t z) { return static_cast<size_t>((x * ny + y) * nz + z); };
    for (const auto& s : seeds) grid[at(s[0], s[1], s[2])] = 0.0;

    std::vector<int64_t> v;
    std::vector<double> z;
    const int64_t longest = std::max({nx, ny, nz});
    std::vector<double> line(static_cast<size_t>(longest)), out(static_cast<size_t>(longest));
    // Axis order x, y, z.
    for (int axis = 0; axis < 3; ++axis) {
        const double w = spacing[axis] * spacing[axis];
        const int64_t n = shape[axis];
        const int64_t o1 = shape[(axis + 1) % 3], o2 = shape[(axis + 2) % 3];
        for (int64_t i = 0; i < o1; ++i) {
            for (int64_t j = 0; j < o2; ++j) {
                auto index = [&](int64_t t) {
                    std::array<int64_t, 3> p{};
                    p[axis] = t;
                    p[(axis + 1) % 3] = i;
                    p[(axis + 2) % 3] = j;
                    return at(p[0], p[1], p[2]);
                };
                for (int64_t t = 0; t < n; ++t) line[static_cast<size_t>(t)] = grid[index(t)];
                distance_1d(line.data(), out.data(), n, w, v, z);
                for (int64_t t = 0; t < n; ++t) grid[index(t)] = out[static_cast<size_t>(t)];
            }
        }
    }
    return grid;
}

}  // namespace

double dice_score(const torch::Tensor& a, const torch::Tensor& b) {
    if (a.sizes() != b.sizes()) throw ShapeError("dice_score: masks differ in shape");
    const auto ab = a.ne(0);
    const auto bb = b.ne(0);
    const auto sa = ab.sum().item<int64_t>();
    const auto sb = bb.sum().item<int64_t>();
    if (sa + sb == 0) return 1.0;
    const auto inter = (ab & bb).sum().item<int64_t>();
    return 2.0 * static_cast<double>(inter) / static_cast<double>(sa + sb);
}

std::vector<std::array<int64_t, 3>> surface_voxels(const torch::Tensor& mask) {
    const auto m = as_bytes(mask);
    const auto shape = shape_of(m);
    const auto [nx, ny, nz] = shape;
    const uint8_t* data = m.data_ptr<uint8_t>();
    auto inside = [&](int64_t x, int64_t y, int64_t z) {
        if (x < 0 || y < 0 || z < 0 || x >= nx || y >= ny || z >= nz) return false;
        return data[(x * ny + y) * nz + z] != 0;
    };
    std::vector<std::array<int64_t, 3>> out;
    for (int64_t x = 0; x < nx; ++x) {
        for (int64_t y = 0; y < ny; ++y) {
            for (int64_t z = 0; z < nz; ++z) {
                if (!inside(x, y, z)) continue;
                if (!inside(x - 1, y, z) || !inside(x + 1, y, z) || !inside(x, y - 1, z) ||
                    !inside(x, y + 1, z) || !inside(x, y, z - 1) || !inside(x, y, z + 1)) {
                    out.push_back({x, y, z});
                }
            }
        }
    }
    return out;
}

double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw ConfigError("percentile of an empty sample");
    std::sort(values.begin(), values.end());
    const double rank = q / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<size_t>(std::floor(rank));
    const auto hi = std::min(lo + 1, values.size() - 1);
    const double frac = rank - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

std::optional<double> hausdorff95(const torch::Tensor& a, const torch::Tensor& b, const Spacing3& spacing) {
    if (a.sizes() != b.sizes()) throw ShapeError("hausdorff95: masks differ in shape");
    const auto sa = surface_voxels(a);
    const auto sb = surface_voxels(b);
    if (sa.empty() || sb.empty()) return std::nullopt;
    const auto shape = shape_of(a);
    const auto dt_a = squared_distance_transform(sa, shape, spacing);
    const auto dt_b = squared_distance_transform(sb, shape, spacing);
    auto directed = [&](const std::vector<std::array<int64_t, 3>>& from, const std::vector<double>& dt) {
        std::vector<double> d;
        d.reserve(from.size());
        for (const auto& p : from) d.push_back(std::sqrt(dt[static_cast<size_t>((p[0] * shape[1] + p[1]) * shape[2] + p[2])]));
        return percentile(std::move(d), 95.0);
    };
    return std::max(directed(sa, dt_b), directed(sb, dt_a));
}

}  // namespace protoreg
