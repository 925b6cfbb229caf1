#include "protoreg/types.hpp"

#include <algorithm>
#include <cmath>

#include "protoreg/error.hpp"

namespace protoreg {

std::string to_string(const Shape3& s) {
    return std::to_string(s[0]) + "x" + std::to_string(s[1]) + "x" + std::to_string(s[2]);
}

Shape3 shape_of(const torch::Tensor& t) {
    if (!t.defined() || t.dim() < 3) {
        throw ShapeError("expected a tensor with at least 3 dimensions");
    }
    const auto n = t.dim();
    return {t.size(n - 3), t.size(n - 2), t.size(n - 1)};
}

void Volume::validate() const {
    if (!intensities.defined() || intensities.dim() != 3) {
        throw ShapeError("volume '" + id + "': intensities must be a 3D tensor");
    }
    for (auto n : shape()) {
        if (n < 1) throw ShapeError("volume '" + id + "': empty dimension");
    }
    for (double s : spacing) {
        if (!(s > 0.0) || !std::isfinite(s)) {
            throw ConfigError("volume '" + id + "': spacing components must be positive");
        }
    }
    if (!torch::isfinite(intensities).all().item<bool>()) {
        throw ConfigError("volume '" + id + "': non-finite voxel intensities");
    }
}

bool LabelMap::has_class(int c) const {
    return std::find(classes.begin(), classes.end(), c) != classes.end();
}

torch::Tensor LabelMap::mask(int c) const {
    return codes.eq(c).to(torch::kFloat32);
}

torch::Tensor LabelMap::one_hot(const std::vector<int>& ordered) const {
    std::vector<torch::Tensor> channels;
    channels.reserve(ordered.size() + 1);
    auto foreground = torch::zeros(codes.sizes(), torch::kFloat32);
    for (int c : ordered) {
        auto m = mask(c);
        foreground += m;
        channels.push_back(m);
    }
    channels.insert(channels.begin(), 1.0f - foreground.clamp_max(1.0f));
    return torch::stack(channels, 0);
}

std::map<int, torch::Tensor> LabelMap::masks() const {
    std::map<int, torch::Tensor> out;
    for (int c : classes) out.emplace(c, mask(c));
    return out;
}

}  // namespace protoreg
