#pragma once

#include <vector>

#include <torch/torch.h>

#include "protoreg/types.hpp"

namespace protoreg {

struct BackboneConfig {
    int64_t in_channels = 1;
    /// Encoder widths per level; the decoder mirrors them. Defaults total ~5.8M parameters.
    std::vector<int64_t> channels{32, 64, 128, 256};
    int64_t feature_channels = 32;
    double negative_slope = 0.01;

    /// Product of the pooling factors; every input dimension must be a multiple of it.
    int64_t downsampling_factor() const;
};

/// Two 3x3x3 convolutions, each followed by instance normalization and a leaky ReLU.
class ConvBlockImpl : public torch::nn::Module {
public:
    ConvBlockImpl(int64_t in, int64_t out, double negative_slope);
    torch::Tensor forward(torch::Tensor x);

private:
    torch::nn::Conv3d conv1_{nullptr}, conv2_{nullptr};
    torch::nn::InstanceNorm3d norm1_{nullptr}, norm2_{nullptr};
    double slope_;
};
TORCH_MODULE(ConvBlock);

/// 3D encoder-decoder with skip connections producing full-resolution feature maps.
class UNet3dImpl : public torch::nn::Module {
public:
    explicit UNet3dImpl(BackboneConfig config = {});

    /// x: [N, in_channels, W, H, D] -> [N, feature_channels, W, H, D].
    torch::Tensor forward(torch::Tensor x);
    const BackboneConfig& config() const { return config_; }

private:
    BackboneConfig config_;
    torch::nn::ModuleList encoders_, decoders_;
    torch::nn::Conv3d project_{nullptr};
};
TORCH_MODULE(UNet3d);

/// Single 1x1x1 convolution + channel softmax over background and the base classes.
class BaseSegHeadImpl : public torch::nn::Module {
public:
    BaseSegHeadImpl(int64_t feature_channels, int64_t num_base_classes);
    /// features: [N, Cf, W, H, D] -> probabilities [N, 1 + num_base_classes, W, H, D].
    torch::Tensor forward(torch::Tensor features);
    torch::nn::Conv3d& conv() { return conv_; }

private:
    torch::nn::Conv3d conv_{nullptr};
};
TORCH_MODULE(BaseSegHead);

/// Features of one standardized volume ([W, H, D]) as [Cf, W, H, D]. Throws ShapeError when a
/// dimension is not a multiple of the downsampling factor.
torch::Tensor extract_features(UNet3d& net, const torch::Tensor& volume);

/// Base-class probabilities ([1 + |C_base|, W, H, D]) from features ([Cf, W, H, D]).
torch::Tensor segment_base(BaseSegHead& head, const torch::Tensor& features);

int64_t count_parameters(const torch::nn::Module& module);

}  // namespace protoreg
