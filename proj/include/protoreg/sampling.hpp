#pragma once

#include <torch/torch.h>

namespace protoreg::sampling {

enum class Interp { kNearest, kLinear };

/// Samples `field` ([C, W, H, D]) at continuous voxel-index positions `coords` ([N, 3], x/y/z),
/// returning [C, N] in the field's dtype. Corners outside the grid contribute zero, so samples
/// fade to zero within one voxel of the border. Differentiable w.r.t. `field` and, in linear
/// mode, w.r.t. `coords`.
torch::Tensor sample(const torch::Tensor& field, const torch::Tensor& coords, Interp mode);

/// Moves coordinates lying within `tol` of an integer onto it without altering their gradient.
torch::Tensor snap(const torch::Tensor& coords, double tol = 1e-6);

/// Voxel-index coordinates of every grid point of a [W, H, D] grid, as float64 [W*H*D, 3]
/// in the same (x-major) order as a contiguous [W, H, D] tensor.
torch::Tensor grid_indices(int64_t w, int64_t h, int64_t d);

}  // namespace protoreg::sampling
