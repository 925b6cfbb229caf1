#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "protoreg/engine.hpp"
#include "protoreg/error.hpp"
#include "protoreg/synthbench.hpp"

namespace fs = std::filesystem;
using namespace protoreg;

namespace {

Catalog open_catalog(const RunConfig& cfg) {
    return Catalog::read(cfg.catalog_path(), cfg.data_root);
}

int run_train(const fs::path& config_path, int fold, const std::string& novel, uint64_t seed,
              const std::string& data_root, const fs::path& out, int64_t iterations, const std::string& variant,
              const fs::path& resume) {
    auto cfg = RunConfig::load(config_path);
    cfg.fold = fold;
    cfg.novel_institution = novel;
    cfg.seed = seed;
    if (!data_root.empty()) cfg.data_root = data_root;
    if (iterations >= 0) cfg.iterations = iterations;
    if (!variant.empty()) cfg.model.variant = parse_variant(variant);

    const auto catalog = open_catalog(cfg);
    CaseStore store(catalog, cfg.grid);
    fs::create_directories(out);
    TrainState state;
    if (!resume.empty()) {
        state = TrainState::load(resume);
        state.config.iterations = cfg.iterations;
    } else {
        state = TrainState::initialize(cfg, make_split(catalog, cfg.fold, cfg.novel_institution, cfg.seed));
    }
    state.split.write_manifest(out / "split.tsv");
    state.config.save(out / "config.json");

    std::ofstream log(out / "train_log.tsv", resume.empty() ? std::ios::trunc : std::ios::app);
    if (resume.empty()) log << "iteration\tfewshot\tbase_seg\talign\ttotal\n";
    TrainHooks hooks;
    hooks.on_iteration = [&](int64_t it, const LossReport& r) {
        log << it << '\t' << r.fewshot << '\t' << r.base_seg << '\t' << r.align << '\t' << r.total << '\n';
    };
    hooks.on_validation = [&](const ValidationPoint& p) {
        std::cout << "iteration " << p.iteration << " validation dice " << p.score << std::endl;
        log.flush();
        state.save(out / "checkpoint.pt");
    };
    train_until(state, store, -1, hooks);
    state.save(out / "checkpoint.pt");
    std::cout << "best validation dice " << state.best_score << " at iteration " << state.best_iteration << '\n'
              << "checkpoint " << (out / "checkpoint.pt").string() << '\n';
    return 0;
}

int run_eval(const fs::path& checkpoint, int shots, const std::string& data_root, const fs::path& out) {
    auto state = TrainState::load(checkpoint);
    if (!data_root.empty()) state.config.data_root = data_root;
    CaseStore store(open_catalog(state.config), state.config.grid);
    const auto report = evaluate(state, store, shots);
    fs::create_directories(out);
    write_rows(report.rows, out / "rows.tsv");
    const auto summary = summarize(report);
    std::ofstream(out / "summary.tsv") << summary;
    std::cout << summary;
    return 0;
}

int run_report(const fs::path& in, const fs::path& out) {
    EvalReport report;
    report.rows = read_rows(in);
    report.aggregate();
    const auto summary = summarize(report);
    std::ofstream o(out);
    if (!o) throw IoError("cannot write " + out.string());
    o << summary;
    std::cout << summary;
    return 0;
}

int run_synth(const std::string& spec, const fs::path& out) {
    const auto s = spec == "benchmark" ? synth::SynthSpec::benchmark() : synth::SynthSpec::load(spec);
    const auto catalog = synth::generate(s, out);
    std::cout << "wrote " << catalog.entries().size() << " cases to " << out.string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Few-shot 3D segmentation with prototype matching and support registration"};
    app.require_subcommand(1);
    std::string data_root;
    app.add_option("--data-root", data_root, "Directory the catalog's relative paths resolve against");

    auto* train = app.add_subcommand("train", "Episodic training");
    fs::path config, out = "run", resume;
    int fold = 1;
    std::string novel, variant;
    uint64_t seed = 0;
    int64_t iterations = -1;
    train->add_option("--config", config, "JSON run configuration")->required();
    train->add_option("--fold", fold, "Class fold held out as novel (1-based)")->required();
    train->add_option("--novel-ins", novel, "Institution held out as novel")->required();
    train->add_option("--seed", seed, "Random seed")->required();
    train->add_option("--out", out, "Output directory");
    train->add_option("--iterations", iterations, "Override the iteration count");
    train->add_option("--variant", variant, "3d, 3d_con, 3d_align or 3d_con_align");
    train->add_option("--resume", resume, "Continue from a checkpoint");

    auto* eval = app.add_subcommand("eval", "Evaluation protocol");
    fs::path checkpoint, eval_out = "eval";
    int shots = 1;
    eval->add_option("--checkpoint", checkpoint, "Checkpoint archive")->required();
    eval->add_option("--shots", shots, "Supports drawn per episode")->required()->check(CLI::PositiveNumber);
    eval->add_option("--out", eval_out, "Output directory for rows.tsv and summary.tsv");

    auto* report = app.add_subcommand("report", "Aggregate per-episode rows");
    fs::path rows_in, summary_out;
    report->add_option("--in", rows_in, "rows.tsv")->required();
    report->add_option("--out", summary_out, "Summary file")->required();

    auto* synth = app.add_subcommand("synth", "Generate the synthetic benchmark");
    std::string spec;
    fs::path synth_out;
    synth->add_option("--spec", spec, "JSON synthetic spec, or 'benchmark'")->required();
    synth->add_option("--out", synth_out, "Output directory")->required();

    CLI11_PARSE(app, argc, argv);
    try {
        if (train->parsed()) return run_train(config, fold, novel, seed, data_root, out, iterations, variant, resume);
        if (eval->parsed()) return run_eval(checkpoint, shots, data_root, eval_out);
        if (report->parsed()) return run_report(rows_in, summary_out);
        if (synth->parsed()) return run_synth(spec, synth_out);
    } catch (const protoreg::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
