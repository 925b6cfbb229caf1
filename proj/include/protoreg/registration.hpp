#pragma once

#include <torch/torch.h>

#include "protoreg/sampling.hpp"
#include "protoreg/types.hpp"

namespace protoreg {

/// 3x4 affine matrix acting on normalized coordinates (each axis mapped onto [-1, 1], corner
/// voxel centres at +-1). It maps query coordinates to support coordinates, so warping pulls
/// support data back onto the query grid.
struct AffineTransform {
    torch::Tensor matrix;  // [3, 4]

    static AffineTransform identity(torch::Dtype dtype = torch::kFloat64);
    /// Translation by whole or fractional voxels on a grid of `shape`: the warped output at
    /// voxel v reads the input at v + offset.
    static AffineTransform translation_voxels(const Shape3& shape, const std::array<double, 3>& offset);
    /// Composite that warps in one pass as `first` then `second` would in two.
    static AffineTransform compose(const AffineTransform& first, const AffineTransform& second);
};

/// Normalized coordinates ([-1, 1] per axis) of every voxel of `shape`, float64 [N, 3].
torch::Tensor normalized_grid(const Shape3& shape);

/// Resamples `field` ([C, W, H, D]) at tau * (p, 1) for every query grid point p. Out-of-field
/// samples are zero. Differentiable w.r.t. `field` and, in linear mode, `tau` ([3, 4]).
torch::Tensor warp(const torch::Tensor& field, const torch::Tensor& tau, sampling::Interp mode);

/// Linear warp of a feature grid.
torch::Tensor warp_features(const torch::Tensor& features, const torch::Tensor& tau);

/// Warps a [W, H, D] or [C, W, H, D] mask or probability field; values stay within [0, 1].
torch::Tensor warp_mask(const torch::Tensor& mask, const torch::Tensor& tau, sampling::Interp mode);

struct AffineNetConfig {
    int64_t in_channels = 2;  // 2 * (1 + |C_base|)
    std::vector<int64_t> channels{16, 32, 64, 128};
    double negative_slope = 0.01;
};

/// Global affine regressor: strided convolutions, global average pooling and one dense layer
/// predicting a displacement from the identity. The dense layer starts at zero, so a fresh
/// network returns exactly [I | 0].
class AffineNetImpl : public torch::nn::Module {
public:
    explicit AffineNetImpl(AffineNetConfig config);

    /// query, support: [1 + |C_base|, W, H, D] base-class maps -> tau [3, 4].
    torch::Tensor forward(const torch::Tensor& query, const torch::Tensor& support);
    torch::nn::Linear& dense() { return dense_; }

private:
    AffineNetConfig config_;
    torch::nn::ModuleList blocks_;
    torch::nn::Linear dense_{nullptr};
};
TORCH_MODULE(AffineNet);

/// Convenience wrapper returning an AffineTransform.
AffineTransform predict_affine(AffineNet& net, const torch::Tensor& query_base, const torch::Tensor& support_base);

}  // namespace protoreg
