#include "protoreg/engine.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "protoreg/error.hpp"
#include "protoreg/metrics.hpp"
#include "protoreg/preprocess.hpp"

namespace protoreg {

namespace {

using nlohmann::json;

std::vector<std::pair<std::string, torch::Tensor>> named_state(FewShotModel& model) {
    std::vector<std::pair<std::string, torch::Tensor>> out;
    for (const auto& p : model->named_parameters()) out.emplace_back(p.key(), p.value());
    for (const auto& b : model->named_buffers()) out.emplace_back(b.key(), b.value());
    return out;
}

std::string read_string(torch::serialize::InputArchive& in, const std::string& key) {
    c10::IValue v;
    in.read(key, v);
    return v.toStringRef();
}

int64_t read_int(torch::serialize::InputArchive& in, const std::string& key) {
    c10::IValue v;
    in.read(key, v);
    return v.toInt();
}

double read_double(torch::serialize::InputArchive& in, const std::string& key) {
    c10::IValue v;
    in.read(key, v);
    return v.toDouble();
}

// Adam keeps its state in a hash map keyed by tensor addresses, which makes its own archive
// depend on the process. Write the moments in parameter order instead.
void save_adam(torch::optim::Adam& opt, torch::serialize::OutputArchive& out) {
    const auto& params = opt.param_groups().at(0).params();
    out.write("count", c10::IValue(static_cast<int64_t>(params.size())));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto it = opt.state().find(params[i].unsafeGetTensorImpl());
        if (it == opt.state().end()) continue;
        const auto& st = static_cast<const torch::optim::AdamParamState&>(*it->second);
        const auto key = "p" + std::to_string(i);
        out.write(key + "_step", c10::IValue(st.step()));
        out.write(key + "_exp_avg", st.exp_avg());
        out.write(key + "_exp_avg_sq", st.exp_avg_sq());
        if (st.max_exp_avg_sq().defined()) out.write(key + "_max_exp_avg_sq", st.max_exp_avg_sq());
    }
}

void load_adam(torch::optim::Adam& opt, torch::serialize::InputArchive& in) {
    const auto& params = opt.param_groups().at(0).params();
    if (read_int(in, "count") != static_cast<int64_t>(params.size())) {
        throw IoError("optimizer state does not match the model");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto key = "p" + std::to_string(i);
        c10::IValue step;
        if (!in.try_read(key + "_step", step)) continue;
        auto st = std::make_unique<torch::optim::AdamParamState>();
        st->step(step.toInt());
        torch::Tensor t;
        in.read(key + "_exp_avg", t);
        st->exp_avg(t);
        torch::Tensor sq;
        in.read(key + "_exp_avg_sq", sq);
        st->exp_avg_sq(sq);
        torch::Tensor mx;
        if (in.try_read(key + "_max_exp_avg_sq", mx)) st->max_exp_avg_sq(mx);
        opt.state()[params[i].unsafeGetTensorImpl()] = std::move(st);
    }
}

// Per-volume features (and base predictions) under fixed weights.
class FeatureCache {
public:
    FeatureCache(FewShotModel model, std::size_t capacity) : model_(std::move(model)), capacity_(capacity) {}

    torch::Tensor features(const Case& c) {
        return lookup(features_, c, [&] { return model_->features(c.volume.intensities); });
    }
    torch::Tensor base(const Case& c) {
        return lookup(base_, c, [&] { return model_->base_probabilities(features(c)); });
    }

private:
    template <class F>
    torch::Tensor lookup(std::map<std::string, torch::Tensor>& table, const Case& c, F make) {
        if (c.volume.id.empty()) return make();
        if (auto it = table.find(c.volume.id); it != table.end()) return it->second;
        auto t = make();
        if (table.size() >= capacity_) table.clear();
        table.emplace(c.volume.id, t);
        return t;
    }

    FewShotModel model_;
    std::size_t capacity_;
    std::map<std::string, torch::Tensor> features_, base_;
};

double mean_or_nan(double sum, int64_t n) {
    return n > 0 ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

double gap(double novel, double base) {
    return 100.0 * (novel - base) / base;
}

std::string fmt(double v) {
    if (std::isnan(v)) return "NA";
    std::ostringstream s;
    s << std::setprecision(17) << v;
    return s.str();
}

std::vector<std::string> split_on(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) out.push_back(cur);
    if (!s.empty() && s.back() == sep) out.emplace_back();
    return out;
}

}  // namespace

CaseStore::CaseStore(Catalog catalog, GridSpec grid, std::size_t capacity)
    : catalog_(std::move(catalog)), grid_(grid), capacity_(std::max<std::size_t>(capacity, 1)) {
    grid_.validate();
}

Case CaseStore::get(const std::string& id) {
    if (auto it = cache_.find(id); it != cache_.end()) return it->second;
    auto c = standardize(load_case(catalog_, id), grid_);
    if (cache_.size() >= capacity_) cache_.clear();
    cache_.emplace(id, c);
    return c;
}

WindowGrid model_windows(const RunConfig& config) {
    return build_windows(config.grid.shape, config.model.window_fractions);
}

TrainState TrainState::initialize(const RunConfig& config, const SplitSpec& split) {
    split.validate();
    if (split.base_classes.empty() || split.novel_classes.empty()) throw ConfigError("split has no base or novel classes");
    TrainState s;
    s.config = config;
    s.config.model.num_base_classes = static_cast<int64_t>(split.base_classes.size());
    s.split = split;
    torch::manual_seed(config.seed);
    s.model = FewShotModel(s.config.model);
    s.optimizer = std::make_unique<torch::optim::Adam>(s.model->parameters(),
                                                       torch::optim::AdamOptions(config.learning_rate));
    std::seed_seq seq{static_cast<uint32_t>(config.seed), static_cast<uint32_t>(config.seed >> 32), 0x5eedu};
    s.rng = std::mt19937_64(seq);
    return s;
}

void TrainState::save(const std::filesystem::path& path) const {
    torch::serialize::OutputArchive archive;
    archive.write("config", c10::IValue(config.to_json().dump()));
    archive.write("split", c10::IValue(split.to_text()));
    archive.write("iteration", c10::IValue(iteration));
    std::ostringstream rs;
    rs << rng;
    archive.write("rng", c10::IValue(rs.str()));
    archive.write("losses", torch::tensor(losses.empty() ? std::vector<double>{} : losses, torch::kFloat64));
    json v = json::array();
    for (const auto& p : validations) v.push_back({p.iteration, p.score});
    archive.write("validations", c10::IValue(v.dump()));
    archive.write("best_score", c10::IValue(best_score));
    archive.write("best_iteration", c10::IValue(best_iteration));

    torch::serialize::OutputArchive weights;
    model->save(weights);
    archive.write("model", weights);
    torch::serialize::OutputArchive opt;
    save_adam(*optimizer, opt);
    archive.write("optimizer", opt);
    torch::serialize::OutputArchive best;
    auto names = json::array();
    int64_t i = 0;
    for (const auto& [name, t] : best_snapshot) {
        names.push_back(name);
        best.write("t" + std::to_string(i++), t);
    }
    archive.write("best_names", c10::IValue(names.dump()));
    archive.write("best", best);
    // Streamed so the archive's internal folder name does not depend on the file name.
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    try {
        archive.save_to(out);
    } catch (const c10::Error& e) {
        throw IoError("cannot write checkpoint " + path.string() + ": " + e.what_without_backtrace());
    }
}

TrainState TrainState::load(const std::filesystem::path& path) {
    torch::serialize::InputArchive archive;
    try {
        archive.load_from(path.string());
    } catch (const c10::Error& e) {
        throw IoError("cannot read checkpoint " + path.string() + ": " + e.what_without_backtrace());
    }
    try {
        const auto config = RunConfig::from_json(json::parse(read_string(archive, "config")));
        const auto split = SplitSpec::from_text(read_string(archive, "split"));
        TrainState s = initialize(config, split);
        s.config = config;
        s.iteration = read_int(archive, "iteration");
        std::istringstream rs(read_string(archive, "rng"));
        rs >> s.rng;
        torch::Tensor losses;
        archive.read("losses", losses);
        const auto lc = losses.contiguous();
        s.losses.assign(lc.data_ptr<double>(), lc.data_ptr<double>() + lc.numel());
        for (const auto& p : json::parse(read_string(archive, "validations"))) {
            s.validations.push_back({p[0].get<int64_t>(), p[1].get<double>()});
        }
        s.best_score = read_double(archive, "best_score");
        s.best_iteration = read_int(archive, "best_iteration");

        torch::serialize::InputArchive weights;
        archive.read("model", weights);
        s.model->load(weights);
        torch::serialize::InputArchive opt;
        archive.read("optimizer", opt);
        load_adam(*s.optimizer, opt);
        torch::serialize::InputArchive best;
        archive.read("best", best);
        const auto names = json::parse(read_string(archive, "best_names"));
        for (std::size_t i = 0; i < names.size(); ++i) {
            torch::Tensor t;
            best.read("t" + std::to_string(i), t);
            s.best_snapshot.emplace(names[i].get<std::string>(), t);
        }
        return s;
    } catch (const c10::Error& e) {
        throw IoError("corrupt checkpoint " + path.string() + ": " + e.what_without_backtrace());
    } catch (const json::exception& e) {
        throw IoError("corrupt checkpoint " + path.string() + ": " + e.what());
    }
}

void TrainState::restore_best() {
    if (best_snapshot.empty()) return;
    torch::NoGradGuard guard;
    for (auto& [name, t] : named_state(model)) {
        auto it = best_snapshot.find(name);
        if (it == best_snapshot.end()) throw ConfigError("best snapshot lacks " + name);
        t.copy_(it->second);
    }
}

void train_until(TrainState& state, CaseStore& store, int64_t until, const TrainHooks& hooks) {
    const auto& cfg = state.config;
    if (until < 0) until = cfg.iterations;
    torch::set_num_threads(std::max(cfg.threads, 1));
    const auto windows = model_windows(cfg);
    const auto flags = flags_of(cfg.model.variant);
    const auto& base = state.split.base_classes;
    state.model->train();
    while (state.iteration < until) {
        const auto ep = sample_train_episode(state.split, state.rng);
        auto q = store.get(ep.query);
        auto s = store.get(ep.supports.at(0));
        if (cfg.augment) {
            q = augment(q, cfg.augmentation, state.rng);
            s = augment(s, cfg.augmentation, state.rng);
        }
        EpisodeTargets targets;
        targets.query_mask = q.labels.mask(ep.class_id);
        const auto support_mask = s.labels.mask(ep.class_id);
        torch::Tensor query_align, support_align;
        if (flags.use_registration) {
            targets.query_onehot = q.labels.one_hot(base);
            targets.support_onehot = s.labels.one_hot(base);
            query_align = targets.query_onehot;
            support_align = targets.support_onehot;
        }
        const auto out = state.model->forward(q.volume.intensities, s.volume.intensities, support_mask, windows,
                                              query_align, support_align);
        auto [loss, report] = episode_loss(out, targets, flags.use_registration, cfg.loss_convention);
        if (!std::isfinite(report.total)) {
            throw DivergenceError("non-finite loss at iteration " + std::to_string(state.iteration));
        }
        state.optimizer->zero_grad();
        loss.backward();
        state.optimizer->step();
        ++state.iteration;
        state.losses.push_back(report.total);
        if (hooks.on_iteration) hooks.on_iteration(state.iteration, report);

        if (state.iteration % cfg.validation_every == 0 || state.iteration == cfg.iterations) {
            const ValidationPoint point{state.iteration, validate(state, store)};
            state.validations.push_back(point);
            if (point.score > state.best_score || state.best_snapshot.empty()) {
                state.best_score = point.score;
                state.best_iteration = point.iteration;
                state.best_snapshot.clear();
                for (const auto& [name, t] : named_state(state.model)) state.best_snapshot.emplace(name, t.detach().clone());
            }
            if (hooks.on_validation) hooks.on_validation(point);
            state.model->train();
        }
    }
}

TrainState train(const SplitSpec& split, const RunConfig& config, CaseStore& store, const TrainHooks& hooks) {
    auto state = TrainState::initialize(config, split);
    train_until(state, store, -1, hooks);
    return state;
}

double validate(TrainState& state, CaseStore& store) {
    const auto episodes = validation_episodes(state.split, state.config.seed);
    if (episodes.empty()) return 0.0;
    auto predictor = model_predictor(state);
    double sum = 0.0;
    for (const auto& ep : episodes) {
        const auto q = store.get(ep.query);
        std::vector<Case> supports;
        for (const auto& id : ep.supports) supports.push_back(store.get(id));
        const auto pred = predictor(ep, q, supports);
        sum += dice_score(pred.mask, q.labels.mask(ep.class_id));
    }
    return sum / static_cast<double>(episodes.size());
}

int64_t select_support(const torch::Tensor& query_base, const std::vector<torch::Tensor>& supports_base) {
    if (supports_base.empty()) throw ConfigError("select_support needs at least one support");
    const auto q = query_base.reshape({-1}).to(torch::kFloat64);
    const double qn = std::max(q.norm().item<double>(), kCosineNormFloor);
    int64_t best = 0;
    double best_cos = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < supports_base.size(); ++k) {
        const auto s = supports_base[k].reshape({-1}).to(torch::kFloat64);
        if (s.numel() != q.numel()) throw ShapeError("support prediction shape differs from the query's");
        const double sn = std::max(s.norm().item<double>(), kCosineNormFloor);
        const double cos = q.dot(s).item<double>() / (qn * sn);
        if (cos > best_cos) {
            best_cos = cos;
            best = static_cast<int64_t>(k);
        }
    }
    return best;
}

Predictor model_predictor(TrainState& state) {
    auto model = state.model;
    auto cache = std::make_shared<FeatureCache>(model, static_cast<std::size_t>(std::max<int64_t>(state.config.feature_cache, 1)));
    const auto windows = std::make_shared<WindowGrid>(model_windows(state.config));
    const bool registration = flags_of(state.config.model.variant).use_registration;
    return [model, cache, windows, registration](const Episode& ep, const Case& query,
                                                 const std::vector<Case>& supports) mutable {
        if (supports.empty()) throw ConfigError("episode " + ep.id + " has no support");
        torch::NoGradGuard guard;
        model->eval();
        Prediction pred;
        if (registration && supports.size() > 1) {
            std::vector<torch::Tensor> bases;
            for (const auto& s : supports) bases.push_back(cache->base(s));
            pred.chosen = select_support(cache->base(query), bases);
        }
        const auto& s = supports[static_cast<std::size_t>(pred.chosen)];
        const auto out = model->forward_features(cache->features(query), cache->features(s),
                                                 s.labels.mask(ep.class_id), *windows);
        pred.mask = out.probabilities[1] > 0.5;
        return pred;
    };
}

void EvalReport::aggregate() {
    all = novel = base = GroupStats{};
    double sd[3] = {0, 0, 0}, sh[3] = {0, 0, 0};
    GroupStats* groups[3] = {&all, &novel, &base};
    for (const auto& r : rows) {
        for (int g : {0, r.novel ? 1 : 2}) {
            groups[g]->count += 1;
            sd[g] += r.dice;
            if (r.hd95) {
                groups[g]->hd95_count += 1;
                sh[g] += *r.hd95;
            }
        }
    }
    for (int g = 0; g < 3; ++g) {
        groups[g]->dice = mean_or_nan(sd[g], groups[g]->count);
        groups[g]->hd95 = mean_or_nan(sh[g], groups[g]->hd95_count);
    }
    delta_dice = gap(novel.dice, base.dice);
    delta_hd95 = gap(novel.hd95, base.hd95);
}

EvalReport evaluate_with(const Predictor& predictor, const SplitSpec& split, CaseStore& store, int shots,
                         uint64_t seed) {
    EvalReport report;
    for (const auto& ep : enumerate_eval_episodes(split, shots, seed)) {
        const auto q = store.get(ep.query);
        std::vector<Case> supports;
        for (const auto& id : ep.supports) supports.push_back(store.get(id));
        const auto pred = predictor(ep, q, supports);
        const auto truth = q.labels.mask(ep.class_id);
        EvalRow row;
        row.episode = ep.id;
        row.query = ep.query;
        row.query_institution = ep.query_institution;
        row.support_institution = ep.support_institution;
        row.novel = ep.support_from_novel;
        row.class_id = ep.class_id;
        row.supports = ep.supports;
        row.chosen = pred.chosen;
        row.dice = dice_score(pred.mask, truth);
        row.hd95 = hausdorff95(pred.mask, truth, store.grid().spacing);
        report.rows.push_back(std::move(row));
    }
    report.aggregate();
    return report;
}

EvalReport evaluate(TrainState& state, CaseStore& store, int shots) {
    torch::set_num_threads(std::max(state.config.threads, 1));
    state.restore_best();
    return evaluate_with(model_predictor(state), state.split, store, shots, state.config.seed);
}

void write_rows(const std::vector<EvalRow>& rows, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "episode\tquery\tquery_institution\tsupport_institution\tgroup\tclass\tsupports\tchosen\tdice\thd95\n";
    for (const auto& r : rows) {
        std::string supports;
        for (std::size_t i = 0; i < r.supports.size(); ++i) supports += (i ? "," : "") + r.supports[i];
        out << r.episode << '\t' << r.query << '\t' << r.query_institution << '\t' << r.support_institution << '\t'
            << (r.novel ? "novel" : "base") << '\t' << r.class_id << '\t' << supports << '\t' << r.chosen << '\t'
            << fmt(r.dice) << '\t' << (r.hd95 ? fmt(*r.hd95) : "NA") << '\n';
    }
    if (!out) throw IoError("failed writing " + path.string());
}

std::vector<EvalRow> read_rows(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<EvalRow> rows;
    std::string line;
    if (!std::getline(in, line) || line.rfind("episode\t", 0) != 0) throw IoError(path.string() + ": missing header");
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_on(line, '\t');
        if (f.size() != 10) throw IoError(path.string() + ": bad row: " + line);
        EvalRow r;
        try {
            r.episode = f[0];
            r.query = f[1];
            r.query_institution = f[2];
            r.support_institution = f[3];
            if (f[4] != "novel" && f[4] != "base") throw IoError("bad group " + f[4]);
            r.novel = f[4] == "novel";
            r.class_id = std::stoi(f[5]);
            if (!f[6].empty()) r.supports = split_on(f[6], ',');
            r.chosen = std::stoll(f[7]);
            r.dice = std::stod(f[8]);
            if (f[9] != "NA") r.hd95 = std::stod(f[9]);
        } catch (const std::logic_error&) {
            throw IoError(path.string() + ": bad row: " + line);
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

std::string summarize(const EvalReport& r) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(4);
    auto group = [&](const char* name, const GroupStats& g) {
        out << name << "_COUNT\t" << g.count << '\n'
            << name << "_DICE\t" << 100.0 * g.dice << '\n'
            << name << "_HD95_MM\t" << g.hd95 << '\n'
            << name << "_HD95_COUNT\t" << g.hd95_count << '\n';
    };
    group("ALL", r.all);
    group("NOVEL", r.novel);
    group("BASE", r.base);
    out << "DELTA_DICE_PCT\t" << r.delta_dice << "\t# 100*(NOVEL-BASE)/BASE\n"
        << "DELTA_HD95_PCT\t" << r.delta_hd95 << "\t# 100*(NOVEL-BASE)/BASE\n";
    return out.str();
}

}  // namespace protoreg
