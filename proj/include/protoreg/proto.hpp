#pragma once

#include <array>
#include <vector>

#include <torch/torch.h>

#include "protoreg/types.hpp"

namespace protoreg {

/// Overlapping windows tiling a volume. Each axis carries windows of `window[a]` voxels whose
/// starts are `stride[a]` apart, stride being half the window (or the whole axis when a single
/// window spans it).
struct WindowGrid {
    Shape3 shape{};
    Shape3 window{};
    Shape3 stride{};
    Shape3 count{};

    struct Box {
        Shape3 lo;  // inclusive
        Shape3 hi;  // exclusive
    };

    int64_t size() const { return count[0] * count[1] * count[2]; }
    int64_t linear(int64_t i, int64_t j, int64_t k) const { return (i * count[1] + j) * count[2] + k; }
    Box box(int64_t g) const;
    std::vector<Box> boxes() const;
    /// Linear indices of the windows containing voxel (x, y, z).
    std::vector<int64_t> windows_at(int64_t x, int64_t y, int64_t z) const;
};

/// Throws ConfigError unless alpha * dim is a whole number of voxels, and the windows tile the
/// axis exactly with half-window stride.
WindowGrid build_windows(const Shape3& shape, const std::array<double, 3>& alphas);

/// Masked-average prototypes of every window, plus whole-volume fallbacks.
struct PrototypeSet {
    torch::Tensor foreground;        // [G, Cf]; rows of invalid windows are zero
    torch::Tensor background;        // [G, Cf]
    torch::Tensor foreground_valid;  // [G] bool, false iff the window's weight sum is 0
    torch::Tensor background_valid;  // [G] bool
    torch::Tensor global_foreground;  // [Cf]
    torch::Tensor global_background;  // [Cf]
    bool global_foreground_valid = false;
    bool global_background_valid = false;
};

/// Prototypes from soft weights: foreground weighted by `fg_weight`, background by `bg_weight`
/// (both [W, H, D], non-negative).
PrototypeSet compute_prototypes(const torch::Tensor& features, const torch::Tensor& fg_weight,
                                const torch::Tensor& bg_weight, const WindowGrid& windows);

/// Prototypes of a (binary or soft) mask: background weights are 1 - mask.
PrototypeSet compute_prototypes(const torch::Tensor& features, const torch::Tensor& mask,
                                const WindowGrid& windows);

struct SimilarityPair {
    torch::Tensor foreground;  // sim(c), [W, H, D]
    torch::Tensor background;  // sim(0), [W, H, D]
};

/// Norm floor used by every cosine similarity.
inline constexpr double kCosineNormFloor = 1e-8;

/// Per voxel, the maximum cosine similarity between its query feature and the valid prototypes
/// of the windows containing it. Voxels without a valid window prototype fall back to the global
/// prototype, or -1 when that is also undefined.
SimilarityPair similarity_maps(const torch::Tensor& query_features, const PrototypeSet& protos,
                               const WindowGrid& windows);

/// Two-way softmax over (sim(0), sim(c)): returns [2, W, H, D], channel 0 background and
/// channel 1 foreground, with background = 1 - foreground exactly.
torch::Tensor probability_map(const SimilarityPair& sims);

}  // namespace protoreg
