#include "protoreg/registration.hpp"

#include "protoreg/error.hpp"

namespace protoreg {

namespace F = torch::nn::functional;

AffineTransform AffineTransform::identity(torch::Dtype dtype) {
    return {torch::eye(3, 4, torch::TensorOptions().dtype(dtype))};
}

AffineTransform AffineTransform::translation_voxels(const Shape3& shape, const std::array<double, 3>& offset) {
    auto t = identity();
    for (int a = 0; a < 3; ++a) {
        const double n = static_cast<double>(shape[a]);
        t.matrix[a][3] = n > 1 ? 2.0 * offset[a] / (n - 1.0) : 0.0;
    }
    return t;
}

AffineTransform AffineTransform::compose(const AffineTransform& first, const AffineTransform& second) {
    auto homog = [](const torch::Tensor& m) {
        auto row = torch::zeros({1, 4}, m.options());
        row[0][3] = 1.0;
        return torch::cat({m, row}, 0);
    };
    // warp(warp(x, A), B)(p) = x(A B p)
    const auto dtype = torch::promote_types(first.matrix.scalar_type(), second.matrix.scalar_type());
    auto m = torch::matmul(homog(first.matrix.to(dtype)), homog(second.matrix.to(dtype)));
    return {m.narrow(0, 0, 3)};
}

torch::Tensor normalized_grid(const Shape3& shape) {
    std::vector<torch::Tensor> axes;
    auto opts = torch::TensorOptions().dtype(torch::kFloat64);
    for (int a = 0; a < 3; ++a) {
        const auto n = shape[a];
        axes.push_back(n > 1 ? torch::linspace(-1.0, 1.0, n, opts) : torch::zeros({1}, opts));
    }
    auto g = torch::meshgrid({axes[0], axes[1], axes[2]}, "ij");
    return torch::stack({g[0].reshape(-1), g[1].reshape(-1), g[2].reshape(-1)}, 1);
}

torch::Tensor warp(const torch::Tensor& field, const torch::Tensor& tau, sampling::Interp mode) {
    if (field.dim() != 4) throw ShapeError("warp expects a [C, W, H, D] field");
    if (tau.dim() != 2 || tau.size(0) != 3 || tau.size(1) != 4) throw ShapeError("tau must be [3, 4]");
    const auto shape = shape_of(field);
    const auto p = normalized_grid(shape);
    const auto t = tau.to(torch::kFloat64);
    auto q = torch::matmul(p, t.narrow(1, 0, 3).t()) + t.select(1, 3).unsqueeze(0);  // [N, 3]
    std::vector<torch::Tensor> idx;
    for (int a = 0; a < 3; ++a) {
        const double half = 0.5 * static_cast<double>(shape[a] - 1);
        idx.push_back((q.select(1, a) + 1.0) * half);
    }
    auto coords = sampling::snap(torch::stack(idx, 1));
    auto out = sampling::sample(field, coords, mode);
    return out.reshape({field.size(0), shape[0], shape[1], shape[2]});
}

torch::Tensor warp_features(const torch::Tensor& features, const torch::Tensor& tau) {
    return warp(features, tau, sampling::Interp::kLinear);
}

torch::Tensor warp_mask(const torch::Tensor& mask, const torch::Tensor& tau, sampling::Interp mode) {
    if (mask.dim() == 3) return warp_mask(mask.unsqueeze(0), tau, mode).squeeze(0);
    return warp(mask, tau, mode).clamp(0.0, 1.0);
}

AffineNetImpl::AffineNetImpl(AffineNetConfig config) : config_(std::move(config)) {
    blocks_ = register_module("blocks", torch::nn::ModuleList());
    int64_t in = config_.in_channels;
    for (auto width : config_.channels) {
        blocks_->push_back(torch::nn::Conv3d(torch::nn::Conv3dOptions(in, width, 3).stride(2).padding(1)));
        in = width;
    }
    dense_ = register_module("dense", torch::nn::Linear(in, 12));
    torch::NoGradGuard guard;
    dense_->weight.zero_();
    dense_->bias.zero_();
}

torch::Tensor AffineNetImpl::forward(const torch::Tensor& query, const torch::Tensor& support) {
    if (query.sizes() != support.sizes()) throw ShapeError("query and support base maps differ in shape");
    if (query.size(0) * 2 != config_.in_channels) {
        throw ShapeError("alignment network expects " + std::to_string(config_.in_channels / 2) +
                         " channels per input, got " + std::to_string(query.size(0)));
    }
    auto x = torch::cat({query, support}, 0).unsqueeze(0);
    for (const auto& block : *blocks_) {
        x = F::leaky_relu(block->as<torch::nn::Conv3d>()->forward(x),
                          F::LeakyReLUFuncOptions().negative_slope(config_.negative_slope));
    }
    x = x.mean({2, 3, 4});
    auto delta = dense_(x).reshape({3, 4});
    return torch::eye(3, 4, delta.options()) + delta;
}

AffineTransform predict_affine(AffineNet& net, const torch::Tensor& query_base, const torch::Tensor& support_base) {
    return {net->forward(query_base, support_base)};
}

}  // namespace protoreg
