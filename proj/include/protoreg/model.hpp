#pragma once

#include <array>
#include <optional>

#include <torch/torch.h>

#include "protoreg/backbone.hpp"
#include "protoreg/conditioning.hpp"
#include "protoreg/losses.hpp"
#include "protoreg/proto.hpp"
#include "protoreg/registration.hpp"

namespace protoreg {

struct ModelConfig {
    BackboneConfig backbone;
    std::vector<int64_t> align_channels{16, 32, 64, 128};
    int64_t conditioning_hidden = 16;
    int64_t num_base_classes = 6;
    std::array<double, 3> window_fractions{1.0 / 8.0, 1.0 / 8.0, 1.0};
    Variant variant = Variant::k3dConAlign;
    // Scale on the base segmentation gradient reaching the shared features. 1 trains the
    // backbone jointly on both tasks; 0 makes the base head a probe on the few-shot features.
    double base_feature_gradient = 1.0;
};

/// Everything one forward pass produces for a query/support pair.
struct EpisodeOutput {
    torch::Tensor probabilities;     // [2, W, H, D], channel 1 = foreground of the episode class
    SimilarityPair similarity;
    torch::Tensor tau;               // [3, 4]; identity without registration
    torch::Tensor query_base;        // predicted base probabilities (registration variants only)
    torch::Tensor support_base;
    torch::Tensor aligned_support_mask;  // soft, on the query grid
};

/// Feature extractor plus the optional registration and conditioning modules of one variant.
class FewShotModelImpl : public torch::nn::Module {
public:
    explicit FewShotModelImpl(ModelConfig config);

    const ModelConfig& config() const { return config_; }
    VariantFlags flags() const { return flags_of(config_.variant); }

    torch::Tensor features(const torch::Tensor& volume);
    /// Requires a registration variant.
    torch::Tensor base_probabilities(const torch::Tensor& features);

    /// `query_align` / `support_align` feed the alignment network: ground-truth one-hot base
    /// masks during training, or undefined tensors to use the predicted base probabilities.
    EpisodeOutput forward_features(const torch::Tensor& query_features, const torch::Tensor& support_features,
                                   const torch::Tensor& support_mask, const WindowGrid& windows,
                                   const torch::Tensor& query_align = {},
                                   const torch::Tensor& support_align = {});

    EpisodeOutput forward(const torch::Tensor& query, const torch::Tensor& support,
                          const torch::Tensor& support_mask, const WindowGrid& windows,
                          const torch::Tensor& query_align = {}, const torch::Tensor& support_align = {});

    UNet3d& backbone() { return backbone_; }
    BaseSegHead& base_head() { return head_; }
    AffineNet& align() { return align_; }
    ConditioningHead& conditioning() { return conditioning_; }

private:
    ModelConfig config_;
    UNet3d backbone_{nullptr};
    BaseSegHead head_{nullptr};
    AffineNet align_{nullptr};
    ConditioningHead conditioning_{nullptr};
};
TORCH_MODULE(FewShotModel);

/// Ground truth needed for the training losses of one episode.
struct EpisodeTargets {
    torch::Tensor query_mask;      // [W, H, D] binary mask of the episode class
    torch::Tensor query_onehot;    // [1 + |C_base|, W, H, D]
    torch::Tensor support_onehot;  // [1 + |C_base|, W, H, D]
};

/// Few-shot Dice on the final prediction, plus (registration variants) the base segmentation
/// Dice of query and support and the alignment Dice between the query labels and the warped
/// support labels. Returns the differentiable total and the per-term values.
std::pair<torch::Tensor, LossReport> episode_loss(const EpisodeOutput& out, const EpisodeTargets& targets,
                                                  bool use_registration, LossConvention convention);

}  // namespace protoreg
