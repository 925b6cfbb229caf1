#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace protoreg {

/// Voxel extents along (x, y, z) = (W, H, D).
using Shape3 = std::array<int64_t, 3>;
/// Voxel size in millimetres along (x, y, z).
using Spacing3 = std::array<double, 3>;

std::string to_string(const Shape3& s);
Shape3 shape_of(const torch::Tensor& t);  // last three dims

/// Dense scalar image. `intensities` is a float32 tensor of shape [W, H, D].
struct Volume {
    torch::Tensor intensities;
    Spacing3 spacing{1.0, 1.0, 1.0};
    std::string id;
    std::string institution;

    Shape3 shape() const { return shape_of(intensities); }
    /// Throws ShapeError / ConfigError when an invariant is violated.
    void validate() const;
};

/// Per-class binary masks stored as one integer-coded volume (0 = background).
/// `classes` is the class catalog; a class may be present with an empty mask.
struct LabelMap {
    torch::Tensor codes;  // int64 [W, H, D]
    std::vector<int> classes;

    Shape3 shape() const { return shape_of(codes); }
    bool has_class(int c) const;
    /// Binary mask of class `c` as float32 {0,1}.
    torch::Tensor mask(int c) const;
    /// Masks of `ordered` classes stacked as [1 + n, W, H, D] with channel 0 = background
    /// (complement of the union of `ordered`).
    torch::Tensor one_hot(const std::vector<int>& ordered) const;
    std::map<int, torch::Tensor> masks() const;
};

/// A loaded case: an image together with its label map.
struct Case {
    Volume volume;
    LabelMap labels;
};

}  // namespace protoreg
