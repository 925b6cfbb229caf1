#pragma once

#include <random>

#include "protoreg/types.hpp"

namespace protoreg {

/// Network input grid.
struct GridSpec {
    Shape3 shape{256, 256, 48};
    Spacing3 spacing{0.75, 0.75, 2.5};

    void validate() const;
};

/// Floor applied to the standard deviation during z-scoring.
inline constexpr double kIntensitySdFloor = 1e-6;

/// Resamples to `grid.spacing` (trilinear image, nearest-neighbour labels) keeping the physical
/// extent, z-scores intensities over the resampled volume, then centre-crops or zero-pads to
/// `grid.shape` (padding is 0 intensity and background). Throws ConfigError on degenerate spacing.
Case standardize(const Case& input, const GridSpec& grid);

/// Sampling ranges for random rigid + isotropic scale augmentation.
struct AugmentRanges {
    double rotation_deg = 10.0;                       // per axis, uniform in [-r, r]
    std::array<double, 3> translation_vox{16.0, 16.0, 4.0};
    double scale_min = 0.9;
    double scale_max = 1.1;

    static AugmentRanges none() { return {0.0, {0.0, 0.0, 0.0}, 1.0, 1.0}; }
};

/// One concrete augmentation draw.
struct AugmentParams {
    std::array<double, 3> rotation_deg{0.0, 0.0, 0.0};
    std::array<double, 3> translation_vox{0.0, 0.0, 0.0};  // content moves by +t voxels
    double scale = 1.0;

    bool is_identity() const;
};

/// Draws parameters from `ranges` (negative widths and inverted/extreme scale bounds are clamped).
AugmentParams draw_augmentation(const AugmentRanges& ranges, std::mt19937_64& rng);

/// Applies one transform about the grid centre, in physical coordinates, to the image
/// (trilinear, zero outside) and labels (nearest, background outside).
Case apply_augmentation(const Case& input, const AugmentParams& params);

inline Case augment(const Case& input, const AugmentRanges& ranges, std::mt19937_64& rng) {
    return apply_augmentation(input, draw_augmentation(ranges, rng));
}

}  // namespace protoreg
