#include "protoreg/sampling.hpp"

#include "protoreg/error.hpp"

namespace protoreg::sampling {

torch::Tensor snap(const torch::Tensor& coords, double tol) {
    auto rounded = coords.round();
    auto near = (coords - rounded).abs().lt(tol);
    auto delta = torch::where(near, rounded - coords, torch::zeros_like(coords)).detach();
    return coords + delta;
}

torch::Tensor grid_indices(int64_t w, int64_t h, int64_t d) {
    auto opts = torch::TensorOptions().dtype(torch::kFloat64);
    auto grids = torch::meshgrid({torch::arange(w, opts), torch::arange(h, opts), torch::arange(d, opts)},
                                 "ij");
    return torch::stack({grids[0].reshape(-1), grids[1].reshape(-1), grids[2].reshape(-1)}, 1);
}

torch::Tensor sample(const torch::Tensor& field, const torch::Tensor& coords, Interp mode) {
    if (field.dim() != 4) throw ShapeError("sample: field must be [C, W, H, D]");
    if (coords.dim() != 2 || coords.size(1) != 3) throw ShapeError("sample: coords must be [N, 3]");
    const int64_t c = field.size(0);
    const std::array<int64_t, 3> n{field.size(1), field.size(2), field.size(3)};
    const auto flat = field.reshape({c, -1});
    const auto dtype = field.scalar_type();

    auto linear_index = [&](const std::array<torch::Tensor, 3>& idx, torch::Tensor& valid) {
        valid = torch::ones({coords.size(0)}, torch::kBool);
        for (int a = 0; a < 3; ++a) valid = valid & idx[a].ge(0) & idx[a].lt(n[a]);
        auto lin = (idx[0].clamp(0, n[0] - 1) * n[1] + idx[1].clamp(0, n[1] - 1)) * n[2] +
                   idx[2].clamp(0, n[2] - 1);
        return lin;
    };

    if (mode == Interp::kNearest) {
        std::array<torch::Tensor, 3> idx;
        for (int a = 0; a < 3; ++a) idx[a] = coords.select(1, a).detach().round().to(torch::kInt64);
        torch::Tensor valid;
        auto lin = linear_index(idx, valid);
        return flat.index_select(1, lin) * valid.to(dtype).unsqueeze(0);
    }

    std::array<torch::Tensor, 3> base, frac;
    for (int a = 0; a < 3; ++a) {
        auto x = coords.select(1, a);
        auto f = x.detach().floor();
        base[a] = f.to(torch::kInt64);
        frac[a] = x - f;
    }
    torch::Tensor out;
    for (int corner = 0; corner < 8; ++corner) {
        std::array<torch::Tensor, 3> idx;
        torch::Tensor w;
        for (int a = 0; a < 3; ++a) {
            const bool upper = (corner >> a) & 1;
            idx[a] = upper ? base[a] + 1 : base[a];
            auto wa = upper ? frac[a] : 1.0 - frac[a];
            w = w.defined() ? w * wa : wa;
        }
        torch::Tensor valid;
        auto lin = linear_index(idx, valid);
        auto weight = (w * valid.to(w.scalar_type())).to(dtype);
        auto term = flat.index_select(1, lin) * weight.unsqueeze(0);
        out = out.defined() ? out + term : term;
    }
    return out;
}

}  // namespace protoreg::sampling
