#include <fstream>
#include <iterator>

#include "fixtures.hpp"
#include "protoreg/engine.hpp"
#include "protoreg/error.hpp"

using namespace protoreg;

namespace {

struct Bench {
    testing::TempDir dir;
    Catalog catalog;
    RunConfig config;
    SplitSpec split;
    Bench() {
        catalog = synth::generate(testing::tiny_synth_spec(), dir.path());
        config = testing::tiny_run_config(dir.path());
        split = make_split(catalog, config.fold, config.novel_institution, config.seed);
    }
    CaseStore store() const { return CaseStore(catalog, config.grid); }
};

std::map<std::string, torch::Tensor> weights(TrainState& s) {
    std::map<std::string, torch::Tensor> out;
    for (const auto& p : s.model->named_parameters()) out.emplace(p.key(), p.value().detach().clone());
    return out;
}

bool same_weights(const std::map<std::string, torch::Tensor>& a, const std::map<std::string, torch::Tensor>& b) {
    if (a.size() != b.size()) return false;
    for (const auto& [k, v] : a) {
        if (!b.count(k) || !torch::equal(v, b.at(k))) return false;
    }
    return true;
}

std::string bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_SUITE("engine") {

TEST_CASE("run config echoes every value and validates input") {
    RunConfig c;
    c.model.variant = Variant::k3dAlign;
    c.learning_rate = 0.5;
    c.grid.shape = {32, 32, 8};
    const auto j = c.to_json();
    CHECK(RunConfig::from_json(j).to_json() == j);
    for (const char* key : {"grid", "augmentation", "model", "loss_convention", "learning_rate", "iterations",
                            "validation_every", "seed", "fold", "novel_institution"}) {
        CHECK(RunConfig{}.to_json().contains(key));
    }
    auto bad = j;
    bad["model"]["variant"] = "2d";
    CHECK_THROWS_AS(RunConfig::from_json(bad), ConfigError);
    bad = j;
    bad["learning_rate"] = -1.0;
    CHECK_THROWS_AS(RunConfig::from_json(bad), ConfigError);
}

TEST_CASE("select_support picks the most similar base prediction") {
    const auto q = torch::rand({3, 4, 4, 2});
    CHECK(select_support(q, {torch::rand({3, 4, 4, 2})}) == 0);
    CHECK(select_support(q, {torch::rand({3, 4, 4, 2}), q.clone(), torch::rand({3, 4, 4, 2})}) == 1);

    auto p1 = torch::zeros({3, 4, 4, 2});
    p1.view({-1})[0] = 1.0f;
    CHECK(select_support(q, {p1, q * 2.0f}) == 1);
    CHECK(select_support(q, {q * 0.5f, q * 3.0f}) == 0);  // ties go to the lowest index

    const std::vector<torch::Tensor> sup{torch::rand({3, 4, 4, 2}), torch::rand({3, 4, 4, 2}), torch::rand({3, 4, 4, 2})};
    const auto k = select_support(q, sup);
    auto scaled = sup;
    for (auto& s : scaled) s = s * 7.5f;
    CHECK(select_support(q, scaled) == k);
    CHECK_THROWS_AS(select_support(q, {}), ConfigError);
}

TEST_CASE("oracle predictions score perfectly; aggregates are exact functions of the rows") {
    Bench b;
    auto store = b.store();
    Predictor oracle = [](const Episode& ep, const Case& q, const std::vector<Case>&) {
        return Prediction{q.labels.mask(ep.class_id), 0};
    };
    const auto report = evaluate_with(oracle, b.split, store, 1, 0);
    CHECK(report.rows.size() == 3 * 3 * 2);
    CHECK(report.all.count == 18);
    CHECK(report.all.count == report.novel.count + report.base.count);
    CHECK(report.novel.count == 6);
    CHECK(report.all.dice == 1.0);
    CHECK(report.all.hd95 == 0.0);
    CHECK(report.delta_dice == 0.0);

    Predictor empty = [](const Episode&, const Case& q, const std::vector<Case>&) {
        return Prediction{torch::zeros_like(q.volume.intensities), 0};
    };
    const auto r2 = evaluate_with(empty, b.split, store, 1, 0);
    CHECK(r2.all.dice == 0.0);
    CHECK(r2.all.hd95_count == 0);

    EvalReport mixed;
    mixed.rows = report.rows;
    mixed.rows[0].dice = 0.25;
    mixed.rows[1].hd95.reset();
    mixed.aggregate();
    double sum = 0.0;
    for (const auto& r : mixed.rows) sum += r.dice;
    CHECK(mixed.all.dice == sum / 18.0);
    CHECK(mixed.all.hd95_count == 17);

    testing::TempDir dir;
    write_rows(mixed.rows, dir / "rows.tsv");
    EvalReport back;
    back.rows = read_rows(dir / "rows.tsv");
    back.aggregate();
    CHECK(back.rows.size() == mixed.rows.size());
    CHECK(back.all.dice == mixed.all.dice);
    CHECK(back.novel.dice == mixed.novel.dice);
    CHECK(back.base.hd95 == mixed.base.hd95);
    CHECK(back.rows[0].supports == mixed.rows[0].supports);
    CHECK(summarize(back).find("NOVEL_DICE") != std::string::npos);

    std::ofstream(dir / "bad.tsv") << "nonsense\n";
    CHECK_THROWS_AS(read_rows(dir / "bad.tsv"), IoError);
}

TEST_CASE("gap is relative to the base-support score") {
    EvalReport r;
    EvalRow n, s;
    n.novel = true;
    n.dice = 0.8;
    s.dice = 0.6;
    r.rows = {n, s};
    r.aggregate();
    CHECK(r.delta_dice == doctest::Approx(100.0 * (0.8 - 0.6) / 0.6));
}

TEST_CASE("zero learning rate leaves weights unchanged") {
    Bench b;
    auto store = b.store();
    auto cfg = b.config;
    cfg.learning_rate = 0.0;
    auto state = TrainState::initialize(cfg, b.split);
    const auto before = weights(state);
    train_until(state, store, 3);
    CHECK(state.iteration == 3);
    CHECK(same_weights(before, weights(state)));
}

TEST_CASE("training is bit-reproducible and resumable") {
    Bench b;
    auto store = b.store();
    auto cfg = b.config;
    cfg.model.variant = Variant::k3dConAlign;

    auto s1 = TrainState::initialize(cfg, b.split);
    train_until(s1, store, 2);
    auto s2 = TrainState::initialize(cfg, b.split);
    train_until(s2, store, 2);
    CHECK(same_weights(weights(s1), weights(s2)));
    CHECK_FALSE(same_weights(weights(s1), weights(*std::make_unique<TrainState>(TrainState::initialize(cfg, b.split)))));

    testing::TempDir dir;
    s1.save(dir / "a.pt");
    auto loaded = TrainState::load(dir / "a.pt");
    CHECK(same_weights(weights(s1), weights(loaded)));
    CHECK(loaded.iteration == 2);
    CHECK(loaded.config.to_json() == s1.config.to_json());
    CHECK(loaded.split.to_text() == s1.split.to_text());
    loaded.save(dir / "b.pt");
    CHECK(bytes(dir / "a.pt") == bytes(dir / "b.pt"));

    train_until(s1, store, 4);
    train_until(loaded, store, 4);
    CHECK(same_weights(weights(s1), weights(loaded)));
    CHECK(s1.losses == loaded.losses);

    CHECK_THROWS_AS(TrainState::load(dir / "missing.pt"), IoError);
}

TEST_CASE("non-finite loss aborts training") {
    Bench b;
    auto store = b.store();
    auto state = TrainState::initialize(b.config, b.split);
    {
        torch::NoGradGuard g;
        state.model->parameters().front().fill_(std::numeric_limits<float>::quiet_NaN());
    }
    CHECK_THROWS_AS(train_until(state, store, 1), DivergenceError);
}

TEST_CASE("best snapshot score never decreases and evaluation leaves weights alone") {
    Bench b;
    auto store = b.store();
    auto cfg = b.config;
    cfg.validation_every = 1;
    cfg.iterations = 4;
    auto state = TrainState::initialize(cfg, b.split);
    std::vector<double> best_seen;
    TrainHooks hooks;
    hooks.on_validation = [&](const ValidationPoint&) { best_seen.push_back(state.best_score); };
    train_until(state, store, -1, hooks);
    REQUIRE(best_seen.size() == 4);
    for (size_t i = 1; i < best_seen.size(); ++i) CHECK(best_seen[i] >= best_seen[i - 1]);
    double best = -1.0;
    for (const auto& v : state.validations) best = std::max(best, v.score);
    CHECK(state.best_score == best);

    state.restore_best();
    const auto before = weights(state);
    const auto r1 = evaluate(state, store, 1);
    CHECK(same_weights(before, weights(state)));
    CHECK(r1.rows.size() == 18);
    const auto r4 = evaluate(state, store, 4);
    for (const auto& row : r4.rows) {
        CHECK(row.supports.size() >= 1);
        CHECK(row.supports.size() <= 4);
        CHECK(row.chosen < static_cast<int64_t>(row.supports.size()));
    }
}

}  // TEST_SUITE
