// Command-line front end: pretrain, gen-streams, run, ablate, report.
#include <CLI11.hpp>
#include <iostream>
#include <optional>
#include <string>

#include "poseadapt/harness.hpp"

namespace {

struct CommonOpts {
    std::string config_path;
    std::optional<long long> seed;
    std::optional<std::string> mode;
    std::optional<std::string> out_dir;
    std::optional<std::string> checkpoint;
    std::optional<std::string> streams;
    std::optional<int> ablate_seeds;
    bool clean = false;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_path, "configuration file (key = value sections)");
    cmd->add_option("--seed", o.seed, "override the experiment seed");
    cmd->add_option("--mode", o.mode, "pipeline mode: single|pervideo|full");
    cmd->add_option("--out", o.out_dir, "output directory");
    cmd->add_option("--checkpoint", o.checkpoint, "model checkpoint path");
    cmd->add_option("--streams", o.streams, "stream file path");
}

poseadapt::ExperimentConfig build_config(const CommonOpts& o) {
    poseadapt::ExperimentConfig cfg;
    if (!o.config_path.empty()) cfg = poseadapt::parse_config_file(o.config_path);
    if (o.seed) {
        cfg.stream.seed = static_cast<std::uint64_t>(*o.seed);
        cfg.run.seed = static_cast<std::uint64_t>(*o.seed);
    }
    if (o.mode) cfg.run.mode = poseadapt::mode_from_name(*o.mode);
    if (o.out_dir) cfg.out_dir = *o.out_dir;
    if (o.checkpoint) cfg.checkpoint = *o.checkpoint;
    if (o.streams) cfg.streams_path = *o.streams;
    if (o.ablate_seeds) cfg.ablate_seeds = *o.ablate_seeds;
    if (o.clean) cfg.clean_streams = true;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Streaming test-time adaptation for 3D pose on synthetic streams"};
    app.require_subcommand(1);

    CommonOpts pretrain_opts, gen_opts, run_opts, ablate_opts, report_opts;
    CLI::App* pretrain = app.add_subcommand("pretrain", "train the source-domain regressor");
    add_common(pretrain, pretrain_opts);
    CLI::App* gen = app.add_subcommand("gen-streams", "synthesize test streams");
    add_common(gen, gen_opts);
    gen->add_flag("--clean", gen_opts.clean, "zero estimator noise and event rate");
    CLI::App* run = app.add_subcommand("run", "adapt over a recorded stream and report metrics");
    add_common(run, run_opts);
    CLI::App* ablate = app.add_subcommand("ablate", "run the ablation switch matrix");
    add_common(ablate, ablate_opts);
    ablate->add_option("--seeds", ablate_opts.ablate_seeds, "number of seeds to sweep");
    CLI::App* report = app.add_subcommand("report", "render tables from saved outputs");
    add_common(report, report_opts);

    try {
        app.parse(argc, argv);
        if (pretrain->parsed()) return poseadapt::cmd_pretrain(build_config(pretrain_opts));
        if (gen->parsed()) return poseadapt::cmd_gen_streams(build_config(gen_opts));
        if (run->parsed()) return poseadapt::cmd_run(build_config(run_opts));
        if (ablate->parsed()) return poseadapt::cmd_ablate(build_config(ablate_opts));
        if (report->parsed()) return poseadapt::cmd_report(build_config(report_opts));
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const poseadapt::UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const poseadapt::Error& e) {
        std::cerr << "runtime abort: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
