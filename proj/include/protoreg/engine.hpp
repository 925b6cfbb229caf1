#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "protoreg/config.hpp"
#include "protoreg/model.hpp"
#include "protoreg/partition.hpp"
#include "protoreg/volume_io.hpp"

namespace protoreg {

/// Loads catalog cases and keeps their standardized form in memory.
class CaseStore {
public:
    CaseStore(Catalog catalog, GridSpec grid, std::size_t capacity = 256);
    /// Standardized case `id`; loads and caches on first use.
    Case get(const std::string& id);
    const Catalog& catalog() const { return catalog_; }
    const GridSpec& grid() const { return grid_; }

private:
    Catalog catalog_;
    GridSpec grid_;
    std::size_t capacity_;
    std::map<std::string, Case> cache_;
};

struct ValidationPoint {
    int64_t iteration = 0;
    double score = 0.0;
};

/// Everything needed to continue or evaluate a run.
struct TrainState {
    RunConfig config;
    SplitSpec split;
    FewShotModel model{nullptr};
    std::unique_ptr<torch::optim::Adam> optimizer;
    int64_t iteration = 0;
    std::mt19937_64 rng;
    std::vector<double> losses;  // total loss per iteration
    std::vector<ValidationPoint> validations;
    double best_score = -1.0;
    int64_t best_iteration = -1;
    std::map<std::string, torch::Tensor> best_snapshot;  // parameter name -> value

    /// Fresh model and optimizer for `split`; weight init and episode draws follow config.seed.
    static TrainState initialize(const RunConfig& config, const SplitSpec& split);

    void save(const std::filesystem::path& path) const;
    static TrainState load(const std::filesystem::path& path);

    /// Copies the best validation snapshot into the model (no-op when none exists).
    void restore_best();
};

struct TrainHooks {
    std::function<void(int64_t iteration, const LossReport&)> on_iteration;
    std::function<void(const ValidationPoint&)> on_validation;
};

WindowGrid model_windows(const RunConfig& config);

/// Runs training iterations until `state.iteration == until` (or config.iterations when
/// `until` is negative). Throws DivergenceError on a non-finite loss.
void train_until(TrainState& state, CaseStore& store, int64_t until = -1, const TrainHooks& hooks = {});

TrainState train(const SplitSpec& split, const RunConfig& config, CaseStore& store, const TrainHooks& hooks = {});

/// Mean Dice of the validation episodes for the current weights.
double validate(TrainState& state, CaseStore& store);

/// Index of the support whose flattened base prediction has the largest cosine similarity
/// with the query's; ties go to the lowest index.
int64_t select_support(const torch::Tensor& query_base, const std::vector<torch::Tensor>& supports_base);

struct Prediction {
    torch::Tensor mask;  // [W, H, D], nonzero = foreground
    int64_t chosen = 0;  // index into the episode's supports
};

/// Produces a prediction for one episode given the standardized query and supports.
using Predictor = std::function<Prediction(const Episode&, const Case& query, const std::vector<Case>& supports)>;

struct EvalRow {
    std::string episode;
    std::string query;
    std::string query_institution;
    std::string support_institution;
    bool novel = false;  // support drawn from the novel institution
    int class_id = 0;
    std::vector<std::string> supports;
    int64_t chosen = 0;
    double dice = 0.0;
    std::optional<double> hd95;
};

struct GroupStats {
    int64_t count = 0;
    double dice = 0.0;       // mean over rows
    int64_t hd95_count = 0;  // rows with a defined HD95
    double hd95 = 0.0;       // mean over those rows
};

struct EvalReport {
    std::vector<EvalRow> rows;
    GroupStats all, novel, base;
    /// Relative performance gap between novel- and base-institution supports, in percent of
    /// the base value: 100 (NOVEL - BASE) / BASE.
    double delta_dice = 0.0;
    double delta_hd95 = 0.0;

    /// Recomputes the aggregates from `rows`.
    void aggregate();
};

EvalReport evaluate_with(const Predictor& predictor, const SplitSpec& split, CaseStore& store, int shots,
                         uint64_t seed);

/// Model predictor: picks one support (cosine selection for registration variants, the first
/// otherwise) and runs the one-shot pipeline with it. Features are cached across episodes.
Predictor model_predictor(TrainState& state);

/// Full evaluation protocol with the best snapshot's weights (current ones when none exists).
EvalReport evaluate(TrainState& state, CaseStore& store, int shots);

void write_rows(const std::vector<EvalRow>& rows, const std::filesystem::path& path);
std::vector<EvalRow> read_rows(const std::filesystem::path& path);
/// Human-readable aggregates (tab-separated key/value lines).
std::string summarize(const EvalReport& report);

}  // namespace protoreg
