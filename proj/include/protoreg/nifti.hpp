#pragma once

#include <filesystem>

#include "protoreg/types.hpp"

namespace protoreg::nifti {

/// On-disk voxel type.
enum class DataType : int16_t {
    kUInt8 = 2,
    kInt16 = 4,
    kInt32 = 8,
    kFloat32 = 16,
    kFloat64 = 64,
};

struct Image {
    torch::Tensor data;  // float64 [W, H, D], scl_slope/scl_inter already applied
    Spacing3 spacing{1.0, 1.0, 1.0};
};

/// Reads a single-file NIfTI-1 volume (`.nii` or `.nii.gz`). Only 3D images are accepted
/// (a trailing singleton 4th dimension is tolerated).
Image read(const std::filesystem::path& path);

/// Writes `data` ([W, H, D]) as NIfTI-1; gzip-compressed when the path ends in `.gz`.
/// The sform/qform carry a diagonal affine with the voxel spacing.
void write(const std::filesystem::path& path, const torch::Tensor& data, const Spacing3& spacing,
           DataType type);

}  // namespace protoreg::nifti
