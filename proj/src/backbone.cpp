#include "protoreg/backbone.hpp"

#include "protoreg/error.hpp"

namespace protoreg {

namespace F = torch::nn::functional;

int64_t BackboneConfig::downsampling_factor() const {
    return channels.empty() ? 1 : int64_t{1} << (channels.size() - 1);
}

ConvBlockImpl::ConvBlockImpl(int64_t in, int64_t out, double negative_slope) : slope_(negative_slope) {
    conv1_ = register_module("conv1", torch::nn::Conv3d(torch::nn::Conv3dOptions(in, out, 3).padding(1)));
    norm1_ = register_module("norm1", torch::nn::InstanceNorm3d(torch::nn::InstanceNorm3dOptions(out).affine(true)));
    conv2_ = register_module("conv2", torch::nn::Conv3d(torch::nn::Conv3dOptions(out, out, 3).padding(1)));
    norm2_ = register_module("norm2", torch::nn::InstanceNorm3d(torch::nn::InstanceNorm3dOptions(out).affine(true)));
}

torch::Tensor ConvBlockImpl::forward(torch::Tensor x) {
    auto act = F::LeakyReLUFuncOptions().negative_slope(slope_);
    x = F::leaky_relu(norm1_(conv1_(x)), act);
    return F::leaky_relu(norm2_(conv2_(x)), act);
}

UNet3dImpl::UNet3dImpl(BackboneConfig config) : config_(std::move(config)) {
    if (config_.channels.empty()) throw ConfigError("backbone needs at least one level");
    encoders_ = register_module("encoders", torch::nn::ModuleList());
    decoders_ = register_module("decoders", torch::nn::ModuleList());
    int64_t in = config_.in_channels;
    for (auto width : config_.channels) {
        encoders_->push_back(ConvBlock(in, width, config_.negative_slope));
        in = width;
    }
    // Decoder level i merges the upsampled level i+1 with the level-i skip.
    for (size_t i = config_.channels.size() - 1; i-- > 0;) {
        const auto skip = config_.channels[i];
        decoders_->push_back(ConvBlock(in + skip, skip, config_.negative_slope));
        in = skip;
    }
    project_ = register_module("project",
                               torch::nn::Conv3d(torch::nn::Conv3dOptions(in, config_.feature_channels, 1)));
}

torch::Tensor UNet3dImpl::forward(torch::Tensor x) {
    const auto factor = config_.downsampling_factor();
    for (int a = 2; a < 5; ++a) {
        if (x.size(a) % factor != 0) {
            throw ShapeError("input dimension " + std::to_string(x.size(a)) + " is not a multiple of " +
                             std::to_string(factor));
        }
    }
    std::vector<torch::Tensor> skips;
    for (size_t i = 0; i < encoders_->size(); ++i) {
        if (i > 0) x = F::max_pool3d(x, F::MaxPool3dFuncOptions(2));
        x = encoders_[i]->as<ConvBlock>()->forward(x);
        skips.push_back(x);
    }
    skips.pop_back();
    for (size_t i = 0; i < decoders_->size(); ++i) {
        auto skip = skips.back();
        skips.pop_back();
        x = F::interpolate(x, F::InterpolateFuncOptions()
                                  .size(std::vector<int64_t>{skip.size(2), skip.size(3), skip.size(4)})
                                  .mode(torch::kTrilinear)
                                  .align_corners(false));
        x = decoders_[i]->as<ConvBlock>()->forward(torch::cat({x, skip}, 1));
    }
    return project_(x);
}

BaseSegHeadImpl::BaseSegHeadImpl(int64_t feature_channels, int64_t num_base_classes) {
    if (num_base_classes < 1) throw ConfigError("base segmentation head needs at least one class");
    conv_ = register_module("conv", torch::nn::Conv3d(torch::nn::Conv3dOptions(feature_channels,
                                                                               num_base_classes + 1, 1)));
}

torch::Tensor BaseSegHeadImpl::forward(torch::Tensor features) {
    if (features.size(1) != conv_->options.in_channels()) {
        throw ShapeError("base head expects " + std::to_string(conv_->options.in_channels()) + " channels");
    }
    return torch::softmax(conv_(features), 1);
}

torch::Tensor extract_features(UNet3d& net, const torch::Tensor& volume) {
    if (volume.dim() != 3) throw ShapeError("extract_features expects a [W, H, D] volume");
    return net->forward(volume.unsqueeze(0).unsqueeze(0)).squeeze(0);
}

torch::Tensor segment_base(BaseSegHead& head, const torch::Tensor& features) {
    if (features.dim() != 4) throw ShapeError("segment_base expects [Cf, W, H, D] features");
    return head->forward(features.unsqueeze(0)).squeeze(0);
}

int64_t count_parameters(const torch::nn::Module& module) {
    int64_t n = 0;
    for (const auto& p : module.parameters()) n += p.numel();
    return n;
}

}  // namespace protoreg
