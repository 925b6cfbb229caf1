#include <fstream>
#include <cmath>
#include <limits>

#include "helpers.hpp"
#include "protoreg/error.hpp"
#include "protoreg/nifti.hpp"
#include "protoreg/volume_io.hpp"

using namespace protoreg;
using testing::TempDir;

namespace {

Case sphere_case(Shape3 shape, const Spacing3& spacing) {
    Case c;
    c.volume.intensities = torch::randn({shape[0], shape[1], shape[2]});
    c.volume.spacing = spacing;
    auto x = torch::arange(shape[0]).view({-1, 1, 1}).to(torch::kFloat64) - shape[0] / 2.0;
    auto y = torch::arange(shape[1]).view({1, -1, 1}).to(torch::kFloat64) - shape[1] / 2.0;
    auto z = torch::arange(shape[2]).view({1, 1, -1}).to(torch::kFloat64) - shape[2] / 2.0;
    c.labels.codes = ((x * x + y * y + 4.0 * z * z) <= 36.0).to(torch::kInt64);
    c.labels.classes = {1};
    return c;
}

}  // namespace

TEST_SUITE("volume_io") {

TEST_CASE("nifti round trip keeps data and spacing for plain and gzip files") {
    TempDir dir;
    const auto data = torch::randn({5, 4, 3}, torch::kFloat64);
    for (const char* name : {"a.nii", "a.nii.gz"}) {
        nifti::write(dir / name, data, {0.75, 0.8, 2.5}, nifti::DataType::kFloat64);
        const auto img = nifti::read(dir / name);
        CHECK(testing::bit_equal(img.data, data));
        // pixdim is stored as float32
        CHECK(img.spacing == Spacing3{0.75, static_cast<double>(0.8f), 2.5});
    }
}

TEST_CASE("volume with a sphere mask round trips through files") {
    TempDir dir;
    const auto c = sphere_case({32, 32, 16}, {1.0, 1.0, 2.0});
    save_volume(c.volume, dir / "img.nii.gz");
    save_labels(c.labels, c.volume.spacing, dir / "lab.nii.gz");
    const auto back = load_case(dir / "img.nii.gz", dir / "lab.nii.gz", {1}, "x", "u1");
    CHECK(back.volume.shape() == Shape3{32, 32, 16});
    CHECK(back.volume.spacing == Spacing3{1.0, 1.0, 2.0});
    CHECK(back.volume.id == "x");
    CHECK(back.volume.institution == "u1");
    CHECK(back.labels.classes == std::vector<int>{1});
    CHECK(testing::bit_equal(back.volume.intensities, c.volume.intensities));
    CHECK(torch::equal(back.labels.mask(1), c.labels.mask(1)));
    CHECK(back.labels.mask(1).sum().item<double>() > 0.0);
}

TEST_CASE("all-zero label file yields a present but empty class") {
    TempDir dir;
    auto c = sphere_case({8, 8, 4}, {1.0, 1.0, 1.0});
    c.labels.codes.zero_();
    save_volume(c.volume, dir / "img.nii");
    save_labels(c.labels, c.volume.spacing, dir / "lab.nii");
    const auto back = load_case(dir / "img.nii", dir / "lab.nii", {1, 2});
    CHECK(back.labels.has_class(1));
    CHECK(back.labels.has_class(2));
    CHECK(back.labels.mask(1).sum().item<double>() == 0.0);
}

TEST_CASE("soft single-class label files binarize at one half") {
    TempDir dir;
    const auto img = torch::zeros({4, 4, 2}, torch::kFloat64);
    auto lab = torch::zeros({4, 4, 2}, torch::kFloat64);
    lab[0][0][0] = 0.49;
    lab[1][0][0] = 0.51;
    lab[2][0][0] = 1.0;
    nifti::write(dir / "img.nii", img, {1, 1, 1}, nifti::DataType::kFloat32);
    nifti::write(dir / "lab.nii", lab, {1, 1, 1}, nifti::DataType::kFloat32);
    const auto m = load_case(dir / "img.nii", dir / "lab.nii", {1}).labels.mask(1);
    CHECK(m[0][0][0].item<float>() == 0.0f);
    CHECK(m[1][0][0].item<float>() == 1.0f);
    CHECK(m[2][0][0].item<float>() == 1.0f);
    CHECK(m.sum().item<float>() == 2.0f);
}

TEST_CASE("load errors: shape mismatch, non-finite voxels, missing file") {
    TempDir dir;
    nifti::write(dir / "img.nii", torch::zeros({32, 32, 16}, torch::kFloat64), {1, 1, 1}, nifti::DataType::kFloat32);
    nifti::write(dir / "lab.nii", torch::zeros({31, 32, 16}, torch::kFloat64), {1, 1, 1}, nifti::DataType::kUInt8);
    CHECK_THROWS_AS(load_case(dir / "img.nii", dir / "lab.nii", {1}), ShapeError);

    auto bad = torch::zeros({4, 4, 2}, torch::kFloat64);
    bad[1][1][1] = std::numeric_limits<double>::quiet_NaN();
    nifti::write(dir / "nan.nii", bad, {1, 1, 1}, nifti::DataType::kFloat32);
    nifti::write(dir / "lab4.nii", torch::zeros({4, 4, 2}, torch::kFloat64), {1, 1, 1}, nifti::DataType::kUInt8);
    CHECK_THROWS_AS(load_case(dir / "nan.nii", dir / "lab4.nii", {1}), ConfigError);

    CHECK_THROWS_AS(load_case(dir / "missing.nii", dir / "lab4.nii", {1}), IoError);
    std::ofstream(dir / "junk.nii") << "not a volume";
    CHECK_THROWS_AS(nifti::read(dir / "junk.nii"), IoError);
}

TEST_CASE("save_prediction round trips masks and spacing exactly") {
    TempDir dir;
    Volume meta;
    meta.intensities = torch::zeros({9, 7, 5});
    meta.spacing = {0.75, 0.75, 2.5};
    const auto mask = torch::rand({9, 7, 5}) > 0.5;
    save_prediction(mask, meta, dir / "p.nii.gz");
    auto [back, spacing] = load_mask(dir / "p.nii.gz");
    CHECK(torch::equal(back.to(torch::kBool), mask));
    CHECK(spacing == Spacing3{0.75, 0.75, 2.5});

    const auto empty = torch::zeros({9, 7, 5}, torch::kUInt8);
    save_prediction(empty, meta, dir / "e.nii");
    CHECK(load_mask(dir / "e.nii").first.sum().item<int64_t>() == 0);

    CHECK_THROWS_AS(save_prediction(torch::zeros({9, 7, 4}), meta, dir / "s.nii"), ShapeError);
    CHECK_THROWS_AS(save_prediction(mask, meta, dir / "no_such_dir" / "p.nii"), IoError);
}

TEST_CASE("label map one-hot puts the complement of the union in channel 0") {
    LabelMap l;
    l.codes = torch::tensor({0, 1, 2, 3}, torch::kInt64).view({4, 1, 1});
    l.classes = {1, 2, 3};
    const auto oh = l.one_hot({2, 3});
    CHECK(oh.sizes() == torch::IntArrayRef({3, 4, 1, 1}));
    CHECK(torch::equal(oh.select(0, 0).flatten(), torch::tensor({1.f, 1.f, 0.f, 0.f})));
    CHECK(torch::equal(oh.select(0, 1).flatten(), torch::tensor({0.f, 0.f, 1.f, 0.f})));
    CHECK(torch::allclose(oh.sum(0), torch::ones({4, 1, 1})));
}

TEST_CASE("catalog validates institutions and survives a write/read cycle") {
    TempDir dir;
    Catalog cat({"u1", "u2"}, {{1, "bladder"}, {2, "rectum"}});
    cat.add({"a", dir / "a.nii", dir / "la.nii", "u1"});
    cat.add({"b", dir / "b.nii", dir / "lb.nii", "u2"});
    CHECK_THROWS_AS(cat.add({"c", "c.nii", "lc.nii", "u9"}), ConfigError);
    CHECK_THROWS_AS(cat.add({"a", "x.nii", "lx.nii", "u1"}), ConfigError);
    cat.set_folds({{1}, {2}});
    cat.write(dir / "catalog.tsv");

    const auto back = Catalog::read(dir / "catalog.tsv");
    CHECK(back.institutions() == cat.institutions());
    CHECK(back.class_ids() == std::vector<int>{1, 2});
    REQUIRE(back.folds().has_value());
    CHECK(*back.folds() == std::vector<std::vector<int>>{{1}, {2}});
    REQUIRE(back.entries().size() == 2);
    CHECK(back.entry("b").institution == "u2");
    CHECK(std::filesystem::equivalent(back.entry("a").volume_path.parent_path(), dir.path()));
    CHECK(back.ids_of("u1") == std::vector<std::string>{"a"});

    std::ofstream(dir / "bad.tsv") << "institutions u1\nclasses 1:x\ncase a a.nii la.nii u2\n";
    CHECK_THROWS_AS(Catalog::read(dir / "bad.tsv"), ConfigError);
}

}  // TEST_SUITE
