#pragma once

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>

#include <torch/torch.h>
#include "doctest.h"

namespace testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("protoreg_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline double max_abs_diff(const torch::Tensor& a, const torch::Tensor& b) {
    return (a.to(torch::kFloat64) - b.to(torch::kFloat64)).abs().max().item<double>();
}

inline bool bit_equal(const torch::Tensor& a, const torch::Tensor& b) {
    return a.sizes() == b.sizes() && a.scalar_type() == b.scalar_type() && torch::equal(a, b);
}

/// Central finite-difference check of d f / d x against autograd, on a float64 leaf `x`.
/// Returns the largest relative error max|g_fd - g_ad| / max(max|g_ad|, floor).
inline double gradient_rel_error(const std::function<torch::Tensor(const torch::Tensor&)>& f, torch::Tensor x,
                                 double h = 1e-6, double floor = 1e-8) {
    x = x.detach().to(torch::kFloat64).clone().requires_grad_(true);
    auto y = f(x);
    y.backward();
    const auto ad = x.grad().detach().clone().reshape({-1});
    auto flat = x.detach().clone().reshape({-1});
    auto fd = torch::zeros_like(flat);
    for (int64_t i = 0; i < flat.numel(); ++i) {
        auto plus = flat.clone();
        auto minus = flat.clone();
        plus[i] += h;
        minus[i] -= h;
        torch::NoGradGuard g;
        const double fp = f(plus.reshape(x.sizes())).item<double>();
        const double fm = f(minus.reshape(x.sizes())).item<double>();
        fd[i] = (fp - fm) / (2.0 * h);
    }
    const double scale = std::max(ad.abs().max().item<double>(), floor);
    return (fd - ad).abs().max().item<double>() / scale;
}

}  // namespace testing
