#include <random>
#include <cmath>

#include "helpers.hpp"
#include "protoreg/losses.hpp"
#include "protoreg/registration.hpp"

using namespace protoreg;
using sampling::Interp;
using torch::indexing::Slice;

namespace {

/// Smooth field: a linear ramp plus a gentle sine, sampled on the voxel grid.
torch::Tensor smooth_field(const Shape3& s, bool linear_only) {
    auto x = torch::arange(s[0], torch::kFloat64).view({-1, 1, 1});
    auto y = torch::arange(s[1], torch::kFloat64).view({1, -1, 1});
    auto z = torch::arange(s[2], torch::kFloat64).view({1, 1, -1});
    auto f = 0.3 * x - 0.2 * y + 0.5 * z + 1.0;
    // Half a cosine period across each axis: curvature small against the voxel size.
    auto bump = [](const torch::Tensor& t, int64_t n) { return torch::cos(M_PI * t / static_cast<double>(n)); };
    if (!linear_only) f = f + bump(x, s[0]) * bump(y, s[1]) * bump(z, s[2]);
    return f.expand({s[0], s[1], s[2]}).unsqueeze(0).clone();
}

}  // namespace

TEST_SUITE("registration") {

TEST_CASE("fresh alignment network predicts the identity exactly") {
    AffineNet net(AffineNetConfig{4, {4, 8, 8, 8}, 0.01});
    const auto tau = net->forward(torch::rand({2, 16, 16, 8}), torch::rand({2, 16, 16, 8}));
    CHECK(torch::equal(tau, torch::eye(3, 4)));
    CHECK(torch::equal(AffineTransform::identity().matrix, torch::eye(3, 4, torch::kFloat64)));
    CHECK_THROWS(net->forward(torch::rand({3, 16, 16, 8}), torch::rand({2, 16, 16, 8})));
}

TEST_CASE("identity warp is a no-op") {
    const auto f = torch::randn({3, 9, 7, 5});
    const auto id = torch::eye(3, 4);
    CHECK(testing::max_abs_diff(warp_features(f, id), f) < 1e-6);
    const auto m = (torch::rand({9, 7, 5}) > 0.5).to(torch::kFloat32);
    CHECK(torch::equal(warp_mask(m, id, Interp::kNearest), m));
}

TEST_CASE("integer translations match the index shift on the overlap") {
    const Shape3 s{10, 8, 6};
    const auto f = torch::randn({2, 10, 8, 6}, torch::kFloat64);
    const auto tau = AffineTransform::translation_voxels(s, {2.0, -1.0, 1.0}).matrix;
    for (auto mode : {Interp::kLinear, Interp::kNearest}) {
        const auto out = warp(f, tau, mode);
        // Output voxel v reads input voxel v + (2, -1, 1).
        CHECK(torch::equal(out.index({Slice(), Slice(0, 8), Slice(1, 8), Slice(0, 5)}),
                           f.index({Slice(), Slice(2, 10), Slice(0, 7), Slice(1, 6)})));
        CHECK(out.index({Slice(), Slice(8, 10)}).abs().max().item<double>() == 0.0);
    }
}

TEST_CASE("shrinking a constant field keeps it constant") {
    auto tau = torch::eye(3, 4, torch::kFloat64) * 0.5;
    const auto f = torch::full({1, 9, 9, 5}, 2.5, torch::kFloat64);
    CHECK(testing::max_abs_diff(warp(f, tau, Interp::kLinear), f) < 1e-12);
}

TEST_CASE("half-voxel shift of a step edge gives 0.5 on the boundary") {
    auto m = torch::zeros({8, 4, 2});
    m.index_put_({Slice(4, 8)}, 1.0f);
    const auto tau = AffineTransform::translation_voxels({8, 4, 2}, {0.5, 0.0, 0.0}).matrix;
    const auto out = warp_mask(m, tau, Interp::kLinear);
    CHECK(out[3][1][1].item<float>() == doctest::Approx(0.5));
    CHECK(out[2][1][1].item<float>() == 0.0f);
    CHECK(out[4][1][1].item<float>() == 1.0f);
}

TEST_CASE("warped masks stay within [0, 1]") {
    torch::manual_seed(1);
    for (int i = 0; i < 5; ++i) {
        const auto tau = torch::eye(3, 4, torch::kFloat64) + 0.3 * torch::randn({3, 4}, torch::kFloat64);
        const auto m = torch::rand({2, 8, 8, 4}, torch::kFloat64);
        for (auto mode : {Interp::kLinear, Interp::kNearest}) {
            const auto out = warp_mask(m, tau, mode);
            CHECK(out.min().item<double>() >= 0.0);
            CHECK(out.max().item<double>() <= 1.0);
        }
    }
}

TEST_CASE("composition matches sequential warps on smooth fields") {
    const Shape3 s{48, 48, 24};
    const auto f = smooth_field(s, false);
    auto t1 = torch::eye(3, 4, torch::kFloat64);
    t1.index_put_({0, 1}, 0.05);
    t1.index_put_({1, 3}, 0.08);
    auto t2 = torch::eye(3, 4, torch::kFloat64) * 0.97;
    t2.index_put_({2, 0}, -0.04);
    t2.index_put_({0, 3}, -0.06);
    const auto two = warp(warp(f, t1, Interp::kLinear), t2, Interp::kLinear);
    const auto one = warp(f, AffineTransform::compose({t1}, {t2}).matrix, Interp::kLinear);
    const auto interior = Slice(8, -8);
    const auto zi = Slice(4, -4);
    CHECK(testing::max_abs_diff(two.index({Slice(), interior, interior, zi}), one.index({Slice(), interior, interior, zi})) < 1e-3);
    // Linear fields are reproduced exactly by trilinear interpolation.
    const auto lin = smooth_field(s, true);
    const auto a = warp(warp(lin, t1, Interp::kLinear), t2, Interp::kLinear);
    const auto b = warp(lin, AffineTransform::compose({t1}, {t2}).matrix, Interp::kLinear);
    CHECK(testing::max_abs_diff(a.index({Slice(), interior, interior, zi}), b.index({Slice(), interior, interior, zi})) < 1e-9);
}

TEST_CASE("gradients with respect to tau and the field match finite differences") {
    const Shape3 s{6, 6, 6};
    const auto f = smooth_field(s, false);
    const auto w = torch::randn({1, 6, 6, 6}, torch::kFloat64);
    auto tau0 = torch::eye(3, 4, torch::kFloat64);
    tau0.index_put_({0, 3}, 0.037);
    tau0.index_put_({1, 0}, 0.021);
    tau0.index_put_({2, 2}, 0.93);
    auto loss_tau = [&](const torch::Tensor& t) { return (warp(f, t, Interp::kLinear) * w).sum(); };
    CHECK(testing::gradient_rel_error(loss_tau, tau0, 1e-7) < 1e-2);
    auto loss_field = [&](const torch::Tensor& x) { return (warp(x, tau0, Interp::kLinear) * w).sum(); };
    CHECK(testing::gradient_rel_error(loss_field, f) < 1e-3);
}

TEST_CASE("alignment loss is zero for identical masks under the identity") {
    auto onehot = torch::zeros({3, 6, 6, 4}, torch::kFloat64);
    onehot[0].fill_(1.0);
    onehot.index_put_({1, Slice(1, 3)}, 1.0);
    onehot.index_put_({0, Slice(1, 3)}, 0.0);
    onehot.index_put_({2, Slice(4, 6), Slice(0, 2)}, 1.0);
    onehot.index_put_({0, Slice(4, 6), Slice(0, 2)}, 0.0);
    const auto warped = warp_mask(onehot, torch::eye(3, 4, torch::kFloat64), Interp::kLinear);
    CHECK(dice_loss_multiclass(warped, onehot).item<double>() < 1e-6);
}

TEST_CASE("trained alignment network recovers a known translation") {
    torch::manual_seed(0);
    const Shape3 s{16, 16, 8};
    auto blob = [&](double cx, double cy) {
        auto x = torch::arange(16, torch::kFloat32).view({-1, 1, 1});
        auto y = torch::arange(16, torch::kFloat32).view({1, -1, 1});
        auto z = torch::arange(8, torch::kFloat32).view({1, 1, -1});
        const auto fg = (((x - cx) / 3.5).pow(2) + ((y - cy) / 2.5).pow(2) + ((z - 3.5) / 2.5).pow(2) <= 1.0)
                            .to(torch::kFloat32);
        return torch::stack({1.0f - fg, fg});
    };
    AffineNet net(AffineNetConfig{4, {8, 16, 16, 16}, 0.01});
    torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(1e-3));
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> shift(-4, 4);
    for (int it = 0; it < 600; ++it) {
        const int dx = shift(rng), dy = shift(rng);
        const auto q = blob(7.5, 7.5);
        const auto sup = blob(7.5 + dx, 7.5 + dy);
        const auto tau = net->forward(q, sup);
        const auto loss = dice_loss_multiclass(warp_mask(sup, tau, Interp::kLinear), q);
        opt.zero_grad();
        loss.backward();
        opt.step();
    }
    torch::NoGradGuard g;
    const auto tau = net->forward(blob(7.5, 7.5), blob(10.5, 4.5));
    // Normalized translation back to voxels.
    const double tx = tau[0][3].item<double>() * (s[0] - 1) / 2.0;
    const double ty = tau[1][3].item<double>() * (s[1] - 1) / 2.0;
    MESSAGE("recovered translation " << tx << ", " << ty);
    CHECK(std::abs(tx - 3.0) <= 2.0);
    CHECK(std::abs(ty + 3.0) <= 2.0);
}

}  // TEST_SUITE
