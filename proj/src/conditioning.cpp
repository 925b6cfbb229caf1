#include "protoreg/conditioning.hpp"

#include "protoreg/error.hpp"

namespace protoreg {

namespace F = torch::nn::functional;

ConditioningHeadImpl::ConditioningHeadImpl(int64_t hidden, double negative_slope) : slope_(negative_slope) {
    conv1_ = register_module("conv1", torch::nn::Conv3d(torch::nn::Conv3dOptions(3, hidden, 3).padding(1)));
    conv2_ = register_module("conv2", torch::nn::Conv3d(torch::nn::Conv3dOptions(hidden, 2, 3).padding(1)));
}

torch::Tensor ConditioningHeadImpl::forward(const torch::Tensor& input) {
    if (input.dim() != 4 || input.size(0) != 3) {
        throw ShapeError("conditioning expects a [3, W, H, D] input");
    }
    auto x = F::leaky_relu(conv1_(input.unsqueeze(0)), F::LeakyReLUFuncOptions().negative_slope(slope_));
    return torch::softmax(conv2_(x), 1).squeeze(0);
}

torch::Tensor condition(ConditioningHead& head, const SimilarityPair& sims, const torch::Tensor& aligned_mask) {
    if (sims.foreground.sizes() != aligned_mask.sizes()) {
        throw ShapeError("aligned mask does not match the similarity maps");
    }
    return head->forward(torch::stack(
        {sims.foreground, sims.background, aligned_mask.to(sims.foreground.scalar_type())}, 0));
}

Variant assemble_variant(const VariantFlags& flags) {
    if (flags.use_conditioning) return flags.use_registration ? Variant::k3dConAlign : Variant::k3dCon;
    return flags.use_registration ? Variant::k3dAlign : Variant::k3d;
}

VariantFlags flags_of(Variant v) {
    switch (v) {
        case Variant::k3d: return {false, false};
        case Variant::k3dCon: return {true, false};
        case Variant::k3dAlign: return {false, true};
        case Variant::k3dConAlign: return {true, true};
    }
    return {};
}

std::string to_string(Variant v) {
    switch (v) {
        case Variant::k3d: return "3d";
        case Variant::k3dCon: return "3d_con";
        case Variant::k3dAlign: return "3d_align";
        case Variant::k3dConAlign: return "3d_con_align";
    }
    return "?";
}

Variant parse_variant(const std::string& name) {
    for (auto v : {Variant::k3d, Variant::k3dCon, Variant::k3dAlign, Variant::k3dConAlign}) {
        if (to_string(v) == name) return v;
    }
    throw ConfigError("unknown variant '" + name + "' (expected 3d, 3d_con, 3d_align or 3d_con_align)");
}

}  // namespace protoreg
