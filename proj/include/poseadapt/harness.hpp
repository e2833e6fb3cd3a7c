#pragma once

#include <string>
#include <vector>

#include "poseadapt/config.hpp"

namespace poseadapt {

struct PretrainResult {
    RegressorState model;
    double val_mpjpe = 0.0;
    double initial_val_mpjpe = 0.0;
    int epochs = 0;
    std::vector<std::string> log_lines;
};

// Supervised regression on the synthetic source set until validation MPJPE
// stops improving. Deterministic in the config.
PretrainResult pretrain_model(const SkeletonTemplate& skel, const ExperimentConfig& cfg);

// One ablation arm: a label plus the config edits that define it.
struct AblationArm {
    std::string name;
    void (*tweak)(RunConfig&);
};

// The switch matrix exercised by `ablate` (baseline, single components,
// pseudo-label and sampling variants, stage-2 thresholds, similarity sweep).
std::vector<AblationArm> ablation_arms();

struct ArmResult {
    std::string name;
    std::uint64_t seed = 0;
    RunAggregates aggregates;
};

// CLI entry points; each returns the process exit code.
int cmd_pretrain(const ExperimentConfig& cfg);
int cmd_gen_streams(const ExperimentConfig& cfg);
int cmd_run(const ExperimentConfig& cfg);
int cmd_ablate(const ExperimentConfig& cfg);
int cmd_report(const ExperimentConfig& cfg);

}  // namespace poseadapt
