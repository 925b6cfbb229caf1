#pragma once

#include "helpers.hpp"
#include "protoreg/config.hpp"
#include "protoreg/synthbench.hpp"

namespace testing {

/// Three institutions on a 16 x 16 x 8 grid with two 2-class folds.
inline protoreg::synth::SynthSpec tiny_synth_spec() {
    using namespace protoreg::synth;
    SynthSpec s;
    s.shape = {16, 16, 8};
    s.seed = 3;
    s.institutions = {{"A", {0, 0, 0}, 0.0, 0.2, 6}, {"B", {1, -1, 0}, 0.2, 0.2, 6}, {"C", {-1, 1, 0}, -0.1, 0.2, 5}};
    s.classes = {{1, "one", "sphere", {4, 4, 4}, {1.5, 1.5, 1.5}, {2, 2, 2}, 1.0},
                 {2, "two", "box", {11, 4, 4}, {1, 1, 1}, {2, 2, 2}, 2.0},
                 {3, "three", "sphere", {4, 11, 4}, {1.5, 1.5, 1.5}, {2, 2, 2}, 3.0},
                 {4, "four", "box", {11, 11, 4}, {1, 1, 1}, {2, 2, 2}, 4.0}};
    s.folds = {{1, 2}, {3, 4}};
    return s;
}

inline protoreg::RunConfig tiny_run_config(const std::filesystem::path& root) {
    protoreg::RunConfig c;
    c.data_root = root;
    c.grid = {{16, 16, 8}, {0.75, 0.75, 2.5}};
    c.augmentation = {5.0, {1.0, 1.0, 0.0}, 0.95, 1.05};
    c.model.backbone.channels = {4, 8};
    c.model.backbone.feature_channels = 4;
    c.model.align_channels = {4, 4, 4, 4};
    c.model.window_fractions = {0.25, 0.25, 1.0};
    c.learning_rate = 1e-3;
    c.iterations = 4;
    c.validation_every = 2;
    c.fold = 1;
    c.novel_institution = "C";
    c.seed = 5;
    return c;
}

}  // namespace testing
