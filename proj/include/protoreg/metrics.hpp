#pragma once

#include <optional>

#include <torch/torch.h>

#include "protoreg/types.hpp"

namespace protoreg {

/// Binary Dice 2|a & b| / (|a| + |b|) of two masks (nonzero = inside); 1 when both are empty.
double dice_score(const torch::Tensor& a, const torch::Tensor& b);

/// Voxels of a 3D mask that lie inside it and have a 6-neighbour outside it (or on the grid
/// border), as (x, y, z) triples.
std::vector<std::array<int64_t, 3>> surface_voxels(const torch::Tensor& mask);

/// 95th-percentile Hausdorff distance in millimetres: the larger of the two directed 95th
/// percentiles (linear interpolation between order statistics) of surface-to-surface
/// distances. Empty when either mask is empty.
std::optional<double> hausdorff95(const torch::Tensor& a, const torch::Tensor& b, const Spacing3& spacing);

/// Linear-interpolation percentile (q in [0, 100]) of a non-empty sample.
double percentile(std::vector<double> values, double q);

}  // namespace protoreg
