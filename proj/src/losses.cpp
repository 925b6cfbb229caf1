#include "protoreg/losses.hpp"

#include "protoreg/error.hpp"

namespace protoreg {

LossConvention parse_loss_convention(const std::string& name) {
    if (name == "mean") return LossConvention::kMean;
    if (name == "as_written") return LossConvention::kAsWritten;
    throw ConfigError("unknown loss_convention '" + name + "' (expected mean or as_written)");
}

std::string to_string(LossConvention c) {
    return c == LossConvention::kMean ? "mean" : "as_written";
}

torch::Tensor soft_dice_terms(const torch::Tensor& pred, const torch::Tensor& target) {
    if (pred.sizes() != target.sizes()) throw ShapeError("dice: prediction and target shapes differ");
    const auto c = pred.size(0);
    const auto p = pred.reshape({c, -1});
    const auto t = target.to(pred.scalar_type()).reshape({c, -1});
    const auto num = 2.0 * (p * t).sum(1) + kDiceSmoothing;
    const auto den = (p * p).sum(1) + (t * t).sum(1) + kDiceSmoothing;
    return num / den;
}

namespace {

torch::Tensor reduce(const torch::Tensor& terms, LossConvention convention) {
    return convention == LossConvention::kMean ? 1.0 - terms.mean() : 1.0 - terms.sum();
}

}  // namespace

torch::Tensor dice_loss_binary(const torch::Tensor& pred, const torch::Tensor& target, LossConvention convention) {
    if (pred.sizes() != target.sizes()) throw ShapeError("dice: prediction and target shapes differ");
    const auto t = target.to(pred.scalar_type());
    return reduce(soft_dice_terms(torch::stack({1.0 - pred, pred}, 0), torch::stack({1.0 - t, t}, 0)),
                  convention);
}

torch::Tensor dice_loss_multiclass(const torch::Tensor& pred, const torch::Tensor& target,
                                   LossConvention convention) {
    if (pred.dim() < 2) throw ShapeError("multi-class dice expects a channel dimension");
    return reduce(soft_dice_terms(pred, target), convention);
}

}  // namespace protoreg
