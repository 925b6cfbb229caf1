// Python bindings. Arrays cross the boundary as numpy copies; nothing here depends on the
// torch Python package.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "protoreg/engine.hpp"
#include "protoreg/error.hpp"
#include "protoreg/metrics.hpp"
#include "protoreg/preprocess.hpp"
#include "protoreg/proto.hpp"
#include "protoreg/synthbench.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace protoreg;

namespace {

template <typename T>
py::array_t<T> to_numpy(const torch::Tensor& t) {
    const auto c = t.detach().to(torch::CppTypeToScalarType<T>()).contiguous();
    std::vector<py::ssize_t> shape(c.sizes().begin(), c.sizes().end());
    py::array_t<T> out(shape);
    std::memcpy(out.mutable_data(), c.template data_ptr<T>(), sizeof(T) * static_cast<std::size_t>(c.numel()));
    return out;
}

torch::Tensor from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    std::vector<int64_t> shape(a.shape(), a.shape() + a.ndim());
    return torch::from_blob(const_cast<double*>(a.data()), shape, torch::kFloat64).clone();
}

py::dict case_dict(const Case& c) {
    py::dict d;
    d["image"] = to_numpy<float>(c.volume.intensities);
    d["labels"] = to_numpy<int64_t>(c.labels.codes);
    d["spacing"] = c.volume.spacing;
    d["classes"] = c.labels.classes;
    d["id"] = c.volume.id;
    d["institution"] = c.volume.institution;
    return d;
}

py::dict stats_dict(const GroupStats& g) {
    py::dict d;
    d["count"] = g.count;
    d["dice"] = g.dice;
    d["hd95_count"] = g.hd95_count;
    d["hd95"] = g.hd95;
    return d;
}

py::dict report_dict(const EvalReport& r) {
    py::dict d;
    d["all"] = stats_dict(r.all);
    d["novel"] = stats_dict(r.novel);
    d["base"] = stats_dict(r.base);
    d["delta_dice"] = r.delta_dice;
    d["delta_hd95"] = r.delta_hd95;
    d["rows"] = r.rows.size();
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "3D prototypical few-shot segmentation with support registration";

    py::register_exception<Error>(m, "ProtoregError");

    m.def(
        "load_case",
        [](const fs::path& volume, const fs::path& labels, const std::vector<int>& classes) {
            return case_dict(load_case(volume, labels, classes));
        },
        py::arg("volume"), py::arg("labels"), py::arg("classes"));

    m.def(
        "standardize",
        [](const fs::path& volume, const fs::path& labels, const std::vector<int>& classes, const Shape3& shape,
           const Spacing3& spacing) {
            GridSpec grid{shape, spacing};
            return case_dict(standardize(load_case(volume, labels, classes), grid));
        },
        py::arg("volume"), py::arg("labels"), py::arg("classes"), py::arg("shape"), py::arg("spacing"),
        "Load a case and resample, crop and z-score it onto the given grid.");

    m.def(
        "dice_score",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& b) {
            return dice_score(from_numpy(a), from_numpy(b));
        },
        py::arg("a"), py::arg("b"));

    m.def(
        "hausdorff95",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& b, const Spacing3& spacing) {
            return hausdorff95(from_numpy(a), from_numpy(b), spacing);
        },
        py::arg("a"), py::arg("b"), py::arg("spacing"), "95th percentile surface distance in mm; None if a mask is empty.");

    m.def(
        "windows",
        [](const Shape3& shape, const std::array<double, 3>& fractions) {
            const auto g = build_windows(shape, fractions);
            py::dict d;
            d["window"] = g.window;
            d["stride"] = g.stride;
            d["count"] = g.count;
            d["size"] = g.size();
            return d;
        },
        py::arg("shape"), py::arg("fractions"));

    m.def(
        "synth_generate",
        [](const std::string& spec, const fs::path& out) {
            const auto s = spec == "benchmark" ? synth::SynthSpec::benchmark() : synth::SynthSpec::load(spec);
            return synth::generate(s, out).entries().size();
        },
        py::arg("spec"), py::arg("out"), "Write a synthetic dataset; `spec` is a JSON file or \"benchmark\".");

    m.def(
        "train",
        [](const fs::path& config_path, int fold, const std::string& novel_institution, uint64_t seed,
           const fs::path& checkpoint, const std::optional<fs::path>& data_root, std::optional<int64_t> iterations) {
            auto cfg = RunConfig::load(config_path);
            if (data_root) cfg.data_root = *data_root;
            if (iterations) cfg.iterations = *iterations;
            cfg.fold = fold;
            cfg.novel_institution = novel_institution;
            cfg.seed = seed;
            const auto catalog = Catalog::read(cfg.catalog_path(), cfg.data_root);
            const auto split = make_split(catalog, fold, novel_institution, seed);
            CaseStore store(catalog, cfg.grid);
            TrainState state;
            {
                py::gil_scoped_release release;
                state = protoreg::train(split, cfg, store);
            }
            state.save(checkpoint);
            py::dict d;
            d["iterations"] = state.iteration;
            d["losses"] = state.losses;
            d["best_score"] = state.best_score;
            d["best_iteration"] = state.best_iteration;
            return d;
        },
        py::arg("config"), py::arg("fold"), py::arg("novel_institution"), py::arg("seed"), py::arg("checkpoint"),
        py::arg("data_root") = py::none(), py::arg("iterations") = py::none());

    m.def(
        "evaluate",
        [](const fs::path& checkpoint, int shots, const std::optional<fs::path>& data_root,
           const std::optional<fs::path>& rows_out) {
            auto state = TrainState::load(checkpoint);
            if (data_root) state.config.data_root = *data_root;
            const auto catalog = Catalog::read(state.config.catalog_path(), state.config.data_root);
            CaseStore store(catalog, state.config.grid);
            EvalReport report;
            {
                py::gil_scoped_release release;
                report = protoreg::evaluate(state, store, shots);
            }
            if (rows_out) write_rows(report.rows, *rows_out);
            return report_dict(report);
        },
        py::arg("checkpoint"), py::arg("shots"), py::arg("data_root") = py::none(), py::arg("rows_out") = py::none());

    m.def(
        "report",
        [](const fs::path& rows) {
            EvalReport r;
            r.rows = read_rows(rows);
            r.aggregate();
            auto d = report_dict(r);
            d["summary"] = summarize(r);
            return d;
        },
        py::arg("rows"), "Aggregate an evaluation rows file.");
}
