#pragma once

#include <optional>
#include <string>

#include <torch/torch.h>

namespace protoreg {

/// `kMean`: 1 - mean of the per-class soft Dice terms (minimum 0).
/// `kAsWritten`: 1 - sum of the terms (minimum 1 - number of classes).
enum class LossConvention { kMean, kAsWritten };

LossConvention parse_loss_convention(const std::string& name);
std::string to_string(LossConvention c);

/// Smoothing added to the numerator and denominator of every soft Dice term.
inline constexpr double kDiceSmoothing = 1e-5;

/// Per-channel soft Dice terms (2 sum(p t) + eps) / (sum p^2 + sum t^2 + eps) over [C, ...] -> [C].
torch::Tensor soft_dice_terms(const torch::Tensor& pred, const torch::Tensor& target);

/// Two-class Dice loss over foreground and background (1 - pred, 1 - target).
/// pred: foreground probabilities, target: binary foreground, same shape.
torch::Tensor dice_loss_binary(const torch::Tensor& pred, const torch::Tensor& target,
                               LossConvention convention = LossConvention::kMean);

/// Multi-class Dice loss; pred and target are [1 + |C_base|, W, H, D] with channel 0 background.
torch::Tensor dice_loss_multiclass(const torch::Tensor& pred, const torch::Tensor& target,
                                   LossConvention convention = LossConvention::kMean);

struct LossReport {
    double fewshot = 0.0;
    double base_seg = 0.0;
    double align = 0.0;
    double total = 0.0;
};

}  // namespace protoreg
