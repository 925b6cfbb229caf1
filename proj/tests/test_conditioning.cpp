#include "helpers.hpp"
#include "protoreg/conditioning.hpp"
#include "protoreg/error.hpp"
#include "protoreg/model.hpp"

using namespace protoreg;

namespace {

ModelConfig small_model(Variant v) {
    ModelConfig c;
    c.backbone.channels = {4, 8};
    c.backbone.feature_channels = 3;
    c.align_channels = {4, 4, 4, 4};
    c.num_base_classes = 2;
    c.window_fractions = {0.5, 0.5, 1.0};
    c.variant = v;
    return c;
}

}  // namespace

TEST_SUITE("conditioning") {

TEST_CASE("zero weights give an even split; outputs are normalized") {
    ConditioningHead head;
    const auto sims = SimilarityPair{torch::rand({6, 6, 4}) * 2 - 1, torch::rand({6, 6, 4}) * 2 - 1};
    const auto mask = torch::rand({6, 6, 4});
    const auto p = condition(head, sims, mask);
    CHECK(p.sizes() == torch::IntArrayRef({2, 6, 6, 4}));
    CHECK(testing::max_abs_diff(p.sum(0), torch::ones({6, 6, 4})) < 1e-6);
    {
        torch::NoGradGuard g;
        for (auto& q : head->parameters()) q.zero_();
    }
    const auto z = condition(head, sims, mask);
    CHECK(testing::max_abs_diff(z, torch::full_like(z, 0.5)) == 0.0);
    CHECK_THROWS(head->forward(torch::rand({2, 6, 6, 4})));
}

TEST_CASE("conditioning is differentiable in all three inputs") {
    torch::manual_seed(2);
    ConditioningHead head;
    head->to(torch::kFloat64);
    const auto w = torch::randn({4, 4, 2}, torch::kFloat64);
    const auto x0 = torch::rand({3, 4, 4, 2}, torch::kFloat64);
    auto f = [&](const torch::Tensor& x) { return (head->forward(x)[1] * w).sum(); };
    CHECK(testing::gradient_rel_error(f, x0) < 1e-3);
}

TEST_CASE("variant flags and names") {
    CHECK(assemble_variant({false, false}) == Variant::k3d);
    CHECK(assemble_variant({true, false}) == Variant::k3dCon);
    CHECK(assemble_variant({false, true}) == Variant::k3dAlign);
    CHECK(assemble_variant({true, true}) == Variant::k3dConAlign);
    for (auto v : {Variant::k3d, Variant::k3dCon, Variant::k3dAlign, Variant::k3dConAlign}) {
        CHECK(parse_variant(to_string(v)) == v);
        CHECK(assemble_variant(flags_of(v)) == v);
    }
    CHECK(to_string(Variant::k3dConAlign) == "3d_con_align");
    CHECK_THROWS_AS(parse_variant("2d"), ConfigError);
}

TEST_CASE("plain variant output is exactly the prototype probability map") {
    torch::manual_seed(4);
    FewShotModel model(small_model(Variant::k3d));
    const auto windows = build_windows({8, 8, 4}, {0.5, 0.5, 1.0});
    const auto q = torch::randn({8, 8, 4});
    const auto s = torch::randn({8, 8, 4});
    const auto mask = (torch::rand({8, 8, 4}) > 0.6).to(torch::kFloat32);
    const auto out = model->forward(q, s, mask, windows);
    CHECK(torch::equal(out.tau, torch::eye(3, 4)));
    const auto fq = model->features(q);
    const auto fs = model->features(s);
    const auto ref = probability_map(similarity_maps(fq, compute_prototypes(fs, mask, windows), windows));
    CHECK(torch::equal(out.probabilities, ref));
    CHECK(model->named_children().size() == 1);
}

TEST_CASE("full variant wiring") {
    torch::manual_seed(5);
    FewShotModel model(small_model(Variant::k3dConAlign));
    const auto windows = build_windows({8, 8, 4}, {0.5, 0.5, 1.0});
    const auto out = model->forward(torch::randn({8, 8, 4}), torch::randn({8, 8, 4}),
                                    (torch::rand({8, 8, 4}) > 0.6).to(torch::kFloat32), windows);
    CHECK(out.probabilities.sizes() == torch::IntArrayRef({2, 8, 8, 4}));
    CHECK(out.query_base.size(0) == 3);
    CHECK(torch::equal(out.tau, torch::eye(3, 4)));  // fresh alignment network
    CHECK(testing::max_abs_diff(out.probabilities.sum(0), torch::ones({8, 8, 4})) < 1e-6);
}

}  // TEST_SUITE
