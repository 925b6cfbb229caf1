#include "protoreg/model.hpp"

#include "protoreg/error.hpp"

namespace protoreg {

FewShotModelImpl::FewShotModelImpl(ModelConfig config) : config_(std::move(config)) {
    backbone_ = register_module("backbone", UNet3d(config_.backbone));
    const auto f = flags();
    if (f.use_registration) {
        head_ = register_module("base_head", BaseSegHead(config_.backbone.feature_channels, config_.num_base_classes));
        AffineNetConfig ac;
        ac.in_channels = 2 * (config_.num_base_classes + 1);
        ac.channels = config_.align_channels;
        align_ = register_module("align", AffineNet(ac));
    }
    if (f.use_conditioning) {
        conditioning_ = register_module("conditioning", ConditioningHead(config_.conditioning_hidden));
    }
}

torch::Tensor FewShotModelImpl::features(const torch::Tensor& volume) {
    return extract_features(backbone_, volume);
}

torch::Tensor FewShotModelImpl::base_probabilities(const torch::Tensor& features) {
    if (!head_) throw ConfigError("variant " + to_string(config_.variant) + " has no base segmentation head");
    const double g = config_.base_feature_gradient;
    if (g == 1.0) return segment_base(head_, features);
    const auto frozen = features.detach();
    return segment_base(head_, g == 0.0 ? frozen : frozen + g * (features - frozen));
}

EpisodeOutput FewShotModelImpl::forward_features(const torch::Tensor& query_features,
                                                 const torch::Tensor& support_features,
                                                 const torch::Tensor& support_mask, const WindowGrid& windows,
                                                 const torch::Tensor& query_align,
                                                 const torch::Tensor& support_align) {
    const auto f = flags();
    EpisodeOutput out;
    auto mask = support_mask.to(query_features.scalar_type());
    torch::Tensor aligned_features = support_features;
    torch::Tensor fg_weight = mask;
    torch::Tensor bg_weight = 1.0 - mask;
    if (f.use_registration) {
        out.query_base = base_probabilities(query_features);
        out.support_base = base_probabilities(support_features);
        const auto qa = query_align.defined() ? query_align : out.query_base;
        const auto sa = support_align.defined() ? support_align : out.support_base;
        out.tau = align_->forward(qa, sa);
        aligned_features = warp_features(support_features, out.tau);
        fg_weight = warp_mask(mask, out.tau, sampling::Interp::kLinear);
        // Voxels warped in from outside the support field of view carry no background evidence.
        const auto fov = warp_mask(torch::ones_like(mask), out.tau, sampling::Interp::kLinear);
        bg_weight = fov * (1.0 - fg_weight);
    } else {
        out.tau = torch::eye(3, 4, query_features.options());
    }
    out.aligned_support_mask = fg_weight;
    const auto protos = compute_prototypes(aligned_features, fg_weight, bg_weight, windows);
    out.similarity = similarity_maps(query_features, protos, windows);
    out.probabilities = f.use_conditioning ? condition(conditioning_, out.similarity, fg_weight)
                                           : probability_map(out.similarity);
    return out;
}

EpisodeOutput FewShotModelImpl::forward(const torch::Tensor& query, const torch::Tensor& support,
                                        const torch::Tensor& support_mask, const WindowGrid& windows,
                                        const torch::Tensor& query_align, const torch::Tensor& support_align) {
    return forward_features(features(query), features(support), support_mask, windows, query_align,
                            support_align);
}

std::pair<torch::Tensor, LossReport> episode_loss(const EpisodeOutput& out, const EpisodeTargets& targets,
                                                  bool use_registration, LossConvention convention) {
    LossReport report;
    auto total = dice_loss_binary(out.probabilities[1], targets.query_mask, convention);
    report.fewshot = total.item<double>();
    if (use_registration) {
        const auto dtype = out.query_base.scalar_type();
        auto base = dice_loss_multiclass(out.query_base, targets.query_onehot.to(dtype), convention) +
                    dice_loss_multiclass(out.support_base, targets.support_onehot.to(dtype), convention);
        const auto warped = warp_mask(targets.support_onehot.to(dtype), out.tau, sampling::Interp::kLinear);
        auto align = dice_loss_multiclass(warped, targets.query_onehot.to(dtype), convention);
        report.base_seg = base.item<double>();
        report.align = align.item<double>();
        total = total + base + align;
    }
    report.total = report.fewshot + report.base_seg + report.align;
    return {total, report};
}

}  // namespace protoreg
