#pragma once

#include <string>

#include <torch/torch.h>

#include "protoreg/proto.hpp"

namespace protoreg {

/// Two 3x3x3 convolutions (3 -> hidden -> 2) with a leaky ReLU between, then a channel softmax.
/// Output channel 0 is background, channel 1 foreground.
class ConditioningHeadImpl : public torch::nn::Module {
public:
    explicit ConditioningHeadImpl(int64_t hidden = 16, double negative_slope = 0.01);
    /// input: [3, W, H, D] = (sim(c), sim(0), aligned support mask) -> [2, W, H, D].
    torch::Tensor forward(const torch::Tensor& input);
    torch::nn::Conv3d& conv1() { return conv1_; }
    torch::nn::Conv3d& conv2() { return conv2_; }

private:
    torch::nn::Conv3d conv1_{nullptr}, conv2_{nullptr};
    double slope_;
};
TORCH_MODULE(ConditioningHead);

/// Concatenates similarity maps and the aligned support mask and runs the head.
torch::Tensor condition(ConditioningHead& head, const SimilarityPair& sims, const torch::Tensor& aligned_mask);

/// Ablation variants: `3d`, `3d_con`, `3d_align`, `3d_con_align`.
enum class Variant { k3d, k3dCon, k3dAlign, k3dConAlign };

struct VariantFlags {
    bool use_conditioning = false;
    bool use_registration = false;
};

Variant assemble_variant(const VariantFlags& flags);
VariantFlags flags_of(Variant v);
std::string to_string(Variant v);
/// Throws ConfigError for an unknown name.
Variant parse_variant(const std::string& name);

}  // namespace protoreg
