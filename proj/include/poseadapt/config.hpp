#pragma once

#include <string>

#include "poseadapt/engine.hpp"

namespace poseadapt {

struct PretrainConfig {
    double learning_rate = 1e-3;
    int batch_size = 32;
    int max_epochs = 120;
    int patience = 5;      // evaluations without improvement before stopping
    double val_fraction = 0.1;
    int hidden1 = 64;
    int hidden2 = 64;
};

// Everything a command needs, loadable from a sectioned key = value file.
// Paper-sourced values keep their published defaults; the learning rates are
// rescaled to this model size (see README).
struct ExperimentConfig {
    StreamConfig stream;
    PretrainConfig pretrain;
    RunConfig run;

    int ablate_seeds = 5;

    std::string out_dir = "out";
    std::string checkpoint = "out/model.ckpt";
    std::string streams_path = "out/streams.txt";
    bool clean_streams = false;  // gen-streams: zero noise, zero events
};

// Parse `key = value` pairs under [section] headers; '#' starts a comment.
// Unknown sections or keys are rejected with a UsageError.
ExperimentConfig parse_config_file(const std::string& path);

void apply_key(ExperimentConfig& cfg, const std::string& section, const std::string& key,
               const std::string& value);

std::string serialize_config(const ExperimentConfig& cfg);

const char* mode_name(PipelineModeKind mode);
PipelineModeKind mode_from_name(const std::string& name);

}  // namespace poseadapt
