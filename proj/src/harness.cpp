#include "poseadapt/harness.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

namespace poseadapt {

namespace {

namespace fs = std::filesystem;

void ensure_dir(const std::string& dir) {
    if (!dir.empty()) fs::create_directories(dir);
}

// Supervised pretraining target: squared parameter error plus mean squared
// 3D joint error.
LossEval pretrain_loss(const SkeletonTemplate& skel, const PoseParams& pred,
                       const PoseParams& gt, const Pose3D& gt_3d) {
    LossEval e;
    const int j = skel.joint_count();
    e.d_params = PoseParamGrad::zero(j);

    e.value += (pred.theta - gt.theta).squaredNorm();
    e.d_params.theta = 2.0 * (pred.theta - gt.theta);
    e.value += (pred.beta - gt.beta).squaredNorm();
    e.d_params.beta = 2.0 * (pred.beta - gt.beta);
    e.value += (pred.trans - gt.trans).squaredNorm();
    e.d_params.trans = 2.0 * (pred.trans - gt.trans);

    const FkWorkspace ws = fk_forward(skel, pred);
    const MatrixX3d diff = ws.positions - gt_3d.joints;
    e.value += diff.squaredNorm() / j;
    e.d_params.add_scaled(fk_backward(skel, pred, ws, (2.0 / j) * diff), 1.0);
    return e;
}

double validation_mpjpe(const SkeletonTemplate& skel, const RegressorState& model,
                        const std::vector<SourceSample>& samples,
                        const std::vector<Pose3D>& gt_poses, const std::vector<int>& idx) {
    double sum = 0.0;
    for (int i : idx) {
        const Pose3D pred = forward_kinematics(skel, predict(model, samples[i].features));
        sum += mpjpe(pred, gt_poses[i]);
    }
    return sum / idx.size();
}

}  // namespace

PretrainResult pretrain_model(const SkeletonTemplate& skel, const ExperimentConfig& cfg) {
    const std::vector<SourceSample> samples = generate_source(skel, cfg.stream);
    const int n = static_cast<int>(samples.size());
    std::vector<Pose3D> gt_poses;
    gt_poses.reserve(n);
    for (const SourceSample& s : samples) gt_poses.push_back(forward_kinematics(skel, s.params));

    const int n_val = std::max(1, static_cast<int>(n * cfg.pretrain.val_fraction));
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng split_rng(mix_seed(cfg.stream.seed, 0x9E7));
    split_rng.shuffle(order);
    const std::vector<int> val_idx(order.begin(), order.begin() + n_val);
    std::vector<int> train_idx(order.begin() + n_val, order.end());

    PretrainResult result;
    result.model = RegressorState::init(feature_dim(skel),
                                        {cfg.pretrain.hidden1, cfg.pretrain.hidden2},
                                        skel.joint_count(), cfg.stream.seed);
    AdamState adam = AdamState::init(result.model, cfg.pretrain.learning_rate, 0.9);

    result.initial_val_mpjpe = validation_mpjpe(skel, result.model, samples, gt_poses, val_idx);
    double best_val = result.initial_val_mpjpe;
    RegressorState best_model = result.model;
    int stale = 0;

    for (int epoch = 0; epoch < cfg.pretrain.max_epochs; ++epoch) {
        Rng epoch_rng(mix_seed(cfg.stream.seed, 0xE90C, static_cast<std::uint64_t>(epoch)));
        epoch_rng.shuffle(train_idx);

        double train_loss = 0.0;
        const int batch = std::max(1, cfg.pretrain.batch_size);
        for (std::size_t start = 0; start < train_idx.size(); start += batch) {
            const std::size_t end = std::min(train_idx.size(), start + batch);
            ParamGradients acc = ParamGradients::zero_like(result.model);
            const double inv = 1.0 / static_cast<double>(end - start);
            for (std::size_t i = start; i < end; ++i) {
                const SourceSample& s = samples[train_idx[i]];
                const Pose3D& g3d = gt_poses[train_idx[i]];
                const ParamLoss fn = [&](const PoseParams& p) {
                    return pretrain_loss(skel, p, s.params, g3d);
                };
                const GradientResult g = loss_gradient(result.model, s.features, fn);
                acc.add_scaled(g.grads, inv);
                train_loss += g.loss;
            }
            if (!std::isfinite(train_loss))
                throw GradientInvalid("pretraining diverged (non-finite loss) at epoch " +
                                      std::to_string(epoch));
            adam_step(result.model, adam, acc);
        }
        train_loss /= static_cast<double>(train_idx.size());

        const double val = validation_mpjpe(skel, result.model, samples, gt_poses, val_idx);
        result.log_lines.push_back("epoch " + std::to_string(epoch) + " train_loss " +
                                   format_double(train_loss) + " val_mpjpe_mm " +
                                   format_double(val));
        result.epochs = epoch + 1;
        if (val < best_val * (1.0 - 1e-3)) {
            best_val = val;
            best_model = result.model;
            stale = 0;
        } else if (++stale >= cfg.pretrain.patience) {
            break;
        }
    }
    result.model = best_model;
    result.val_mpjpe = best_val;
    return result;
}

// ---------------------------------------------------------------------------
// Ablation arms.
// ---------------------------------------------------------------------------

std::vector<AblationArm> ablation_arms() {
    const auto off = [](std::optional<bool>& s) { s = false; };
    (void)off;
    return {
        {"noadapt",
         [](RunConfig& c) {
             c.mode = PipelineModeKind::per_video_reset;
             c.switches.two_stage = false;
             c.two_stage.stage2_max_iters = 0;
         }},
        {"single", [](RunConfig& c) { c.mode = PipelineModeKind::single_stream; }},
        {"pervideo", [](RunConfig& c) { c.mode = PipelineModeKind::per_video_reset; }},
        {"pervideo+agg",
         [](RunConfig& c) {
             c.mode = PipelineModeKind::full_method;
             c.switches.aggregation = true;
             c.switches.local_aug = false;
             c.switches.two_stage = false;
         }},
        {"pervideo+local",
         [](RunConfig& c) {
             c.mode = PipelineModeKind::full_method;
             c.switches.aggregation = false;
             c.switches.local_aug = true;
             c.switches.two_stage = false;
         }},
        {"pervideo+twostage",
         [](RunConfig& c) {
             c.mode = PipelineModeKind::full_method;
             c.switches.aggregation = false;
             c.switches.local_aug = false;
             c.switches.two_stage = true;
         }},
        {"full", [](RunConfig& c) { c.mode = PipelineModeKind::full_method; }},
        {"full_pl_weak",
         [](RunConfig& c) {
             c.mode = PipelineModeKind::full_method;
             c.pl_mode = PseudoLabelMode::weak;
         }},
        {"full_pl_strong",
         [](RunConfig& c) {
             c.mode = PipelineModeKind::full_method;
             c.pl_mode = PseudoLabelMode::strong;
         }},
        {"full_sel_uniform",
         [](RunConfig& c) {
             c.mode = PipelineModeKind::full_method;
             c.selection = SelectionStrategy::uniform;
         }},
        {"full_sel_weighted",
         [](RunConfig& c) {
             c.mode = PipelineModeKind::full_method;
             c.selection = SelectionStrategy::weighted;
         }},
        {"full_sel_weighted_stochastic",
         [](RunConfig& c) {
             c.mode = PipelineModeKind::full_method;
             c.selection = SelectionStrategy::weighted_stochastic;
         }},
        {"full_sel_balanced",
         [](RunConfig& c) {
             c.mode = PipelineModeKind::full_method;
             c.selection = SelectionStrategy::balanced;
         }},
        {"full_thr10",
         [](RunConfig& c) {
             c.mode = PipelineModeKind::full_method;
             c.two_stage.stage2_epe_threshold_px = 10.0;
         }},
        {"full_thr30",
         [](RunConfig& c) {
             c.mode = PipelineModeKind::full_method;
             c.two_stage.stage2_epe_threshold_px = 30.0;
         }},
        {"plain_thr10",
         [](RunConfig& c) {
             c.mode = PipelineModeKind::per_video_reset;
             c.two_stage.stage2_epe_threshold_px = 10.0;
         }},
        {"plain_thr30",
         [](RunConfig& c) {
             c.mode = PipelineModeKind::per_video_reset;
             c.two_stage.stage2_epe_threshold_px = 30.0;
         }},
        {"full_cos0.9",
         [](RunConfig& c) {
             c.mode = PipelineModeKind::full_method;
             c.two_stage.cos_sim_stop_threshold = 0.9;
         }},
        {"full_cos0.999",
         [](RunConfig& c) {
             c.mode = PipelineModeKind::full_method;
             c.two_stage.cos_sim_stop_threshold = 0.999;
         }},
    };
}

// ---------------------------------------------------------------------------
// Commands.
// ---------------------------------------------------------------------------

int cmd_pretrain(const ExperimentConfig& cfg) {
    const SkeletonTemplate skel = SkeletonTemplate::humanoid15();
    ensure_dir(cfg.out_dir);
    ensure_dir(fs::path(cfg.checkpoint).parent_path().string());
    try {
        const PretrainResult r = pretrain_model(skel, cfg);
        save_checkpoint(cfg.checkpoint, r.model);
        std::ofstream log(fs::path(cfg.out_dir) / "pretrain_log.txt", std::ios::trunc);
        for (const std::string& line : r.log_lines) log << line << "\n";
        std::cout << "pretrained " << r.epochs << " epochs, val MPJPE "
                  << format_double(r.val_mpjpe) << " mm (untrained "
                  << format_double(r.initial_val_mpjpe) << " mm)\n";
        std::cout << "checkpoint written to " << cfg.checkpoint << "\n";
    } catch (const GradientInvalid& e) {
        std::cerr << "pretraining aborted: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

int cmd_gen_streams(const ExperimentConfig& cfg) {
    const SkeletonTemplate skel = SkeletonTemplate::humanoid15();
    ensure_dir(fs::path(cfg.streams_path).parent_path().string());
    StreamConfig sc = cfg.stream;
    if (cfg.clean_streams) {
        sc.noise_sigma_base = 0.0;
        sc.event_rate = 0.0;
    }
    const std::vector<Video> videos = generate_streams(skel, sc);
    write_stream(cfg.streams_path, videos, skel, config_digest(sc));
    std::size_t frames = 0;
    for (const Video& v : videos) frames += v.size();
    std::cout << "wrote " << videos.size() << " videos / " << frames << " frames to "
              << cfg.streams_path << "\n";
    return 0;
}

int cmd_run(const ExperimentConfig& cfg) {
    const SkeletonTemplate skel = SkeletonTemplate::humanoid15();
    if (!fs::exists(cfg.checkpoint))
        throw UsageError("checkpoint not found: " + cfg.checkpoint);
    if (!fs::exists(cfg.streams_path))
        throw UsageError("stream file not found: " + cfg.streams_path);
    ensure_dir(cfg.out_dir);

    const RegressorState model = load_checkpoint(cfg.checkpoint);
    const std::vector<Video> streams = read_stream(cfg.streams_path, skel);
    const RunReport report = run_stream(skel, model, streams, cfg.run);

    const fs::path out(cfg.out_dir);
    report.write_frames_csv((out / "frames.csv").string());
    report.write_split_csv((out / "split.csv").string());
    std::ofstream summary(out / "summary.txt", std::ios::trunc);
    summary << "mode " << mode_name(cfg.run.mode) << "\n" << report.summary();
    std::cout << "mode " << mode_name(cfg.run.mode) << "\n" << report.summary();
    return 0;
}

int cmd_ablate(const ExperimentConfig& cfg) {
    const SkeletonTemplate skel = SkeletonTemplate::humanoid15();
    ensure_dir(cfg.out_dir);
    const std::vector<AblationArm> arms = ablation_arms();

    std::vector<ArmResult> results;
    for (int s = 0; s < cfg.ablate_seeds; ++s) {
        const std::uint64_t seed = cfg.run.seed + static_cast<std::uint64_t>(s);
        ExperimentConfig seed_cfg = cfg;
        seed_cfg.stream.seed = seed;
        seed_cfg.run.seed = seed;

        const std::vector<Video> streams = generate_streams(skel, seed_cfg.stream);
        const PretrainResult pre = pretrain_model(skel, seed_cfg);
        std::cout << "seed " << seed << ": pretrain val MPJPE " << format_double(pre.val_mpjpe)
                  << " mm\n";

        for (const AblationArm& arm : arms) {
            RunConfig rc = seed_cfg.run;
            arm.tweak(rc);
            const RunReport report = run_stream(skel, pre.model, streams, rc);
            results.push_back(ArmResult{arm.name, seed, report.aggregates()});
            const RunAggregates& a = results.back().aggregates;
            std::cout << "  " << arm.name << ": MPJPE " << format_double(a.mpjpe_all) << " mm\n";
        }
    }

    const fs::path out(cfg.out_dir);
    std::ofstream csv(out / "ablate.csv", std::ios::trunc);
    csv << "arm,seed,frames,mpjpe_all,mpjpe_conf,mpjpe_nonconf,pa_all,pa_conf,pa_nonconf,"
           "epe_all,epe_conf,epe_nonconf\n";
    for (const ArmResult& r : results) {
        const RunAggregates& a = r.aggregates;
        csv << r.name << ',' << r.seed << ',' << a.frames << ',' << format_double(a.mpjpe_all)
            << ',' << format_double(a.mpjpe_conf) << ',' << format_double(a.mpjpe_nonconf) << ','
            << format_double(a.pa_all) << ',' << format_double(a.pa_conf) << ','
            << format_double(a.pa_nonconf) << ',' << format_double(a.epe_all) << ','
            << format_double(a.epe_conf) << ',' << format_double(a.epe_nonconf) << "\n";
    }
    // Per-arm means across seeds, preserving arm order.
    std::map<std::string, std::pair<RunAggregates, int>> sums;
    for (const ArmResult& r : results) {
        auto& [acc, count] = sums[r.name];
        acc.mpjpe_all += r.aggregates.mpjpe_all;
        acc.mpjpe_conf += r.aggregates.mpjpe_conf;
        acc.mpjpe_nonconf += r.aggregates.mpjpe_nonconf;
        acc.pa_all += r.aggregates.pa_all;
        acc.epe_all += r.aggregates.epe_all;
        count += 1;
    }
    for (const AblationArm& arm : arms) {
        const auto& [acc, count] = sums[arm.name];
        csv << arm.name << ",mean," << count << ',' << format_double(acc.mpjpe_all / count) << ','
            << format_double(acc.mpjpe_conf / count) << ','
            << format_double(acc.mpjpe_nonconf / count) << ',' << format_double(acc.pa_all / count)
            << ",,," << format_double(acc.epe_all / count) << ",,\n";
    }
    std::cout << "ablation table written to " << (out / "ablate.csv").string() << "\n";
    return 0;
}

int cmd_report(const ExperimentConfig& cfg) {
    const SkeletonTemplate skel = SkeletonTemplate::humanoid15();
    ensure_dir(cfg.out_dir);
    const fs::path out(cfg.out_dir);
    std::ofstream md(out / "report.md", std::ios::trunc);
    md << "# Run report\n\n";

    if (fs::exists(cfg.streams_path)) {
        // Confidence-vs-error bins over the stream itself.
        const std::vector<Video> videos = read_stream(cfg.streams_path, skel);
        const ConfidenceRule rule = cfg.run.rule;
        std::map<int, std::pair<double, int>> bins;  // confident-count -> (epe sum, n)
        for (const Video& v : videos) {
            for (const Frame& f : v) {
                int nc = 0;
                for (int k = 0; k < f.est_2d.confidence.size(); ++k)
                    if (f.est_2d.confidence(k) > rule.keypoint_threshold) ++nc;
                auto& [sum, n] = bins[nc];
                sum += epe_2d(f.est_2d, f.gt_2d);
                n += 1;
            }
        }
        std::ofstream bin_csv(out / "conf_vs_error.csv", std::ios::trunc);
        bin_csv << "confident_keypoints,frames,mean_epe_px\n";
        md << "## Estimator confidence vs. 2D error\n\n";
        md << "| confident keypoints | frames | mean 2D EPE (px) |\n|---|---|---|\n";
        for (const auto& [nc, entry] : bins) {
            const auto& [sum, n] = entry;
            bin_csv << nc << ',' << n << ',' << format_double(sum / n) << "\n";
            char buf[96];
            std::snprintf(buf, sizeof(buf), "| %d | %d | %.2f |\n", nc, n, sum / n);
            md << buf;
        }
        md << "\n";
    }

    const fs::path ablate_csv = out / "ablate.csv";
    if (fs::exists(ablate_csv)) {
        std::ifstream in(ablate_csv);
        std::string line;
        std::getline(in, line);  // header
        md << "## Pipeline comparison (per-arm means)\n\n";
        md << "| arm | MPJPE all | MPJPE conf. | MPJPE non-conf. | PA-MPJPE | 2D EPE |\n";
        md << "|---|---|---|---|---|---|\n";
        while (std::getline(in, line)) {
            std::stringstream ss(line);
            std::string field;
            std::vector<std::string> fields;
            while (std::getline(ss, field, ',')) fields.push_back(field);
            if (fields.size() < 10 || fields[1] != "mean") continue;
            const auto fmt = [](const std::string& s) {
                if (s.empty()) return std::string("-");
                char buf[32];
                std::snprintf(buf, sizeof(buf), "%.2f", std::strtod(s.c_str(), nullptr));
                return std::string(buf);
            };
            md << "| " << fields[0] << " | " << fmt(fields[3]) << " | " << fmt(fields[4]) << " | "
               << fmt(fields[5]) << " | " << fmt(fields[6]) << " | " << fmt(fields[9]) << " |\n";
        }
        md << "\n";
    }

    const fs::path split_csv = out / "split.csv";
    if (fs::exists(split_csv)) {
        std::ifstream in(split_csv);
        std::string line;
        std::getline(in, line);
        md << "## Last run (" << split_csv.string() << ")\n\n";
        md << "| scope | frames | MPJPE | PA-MPJPE | 2D EPE |\n|---|---|---|---|---|\n";
        while (std::getline(in, line)) {
            std::stringstream ss(line);
            std::string field;
            std::vector<std::string> fields;
            while (std::getline(ss, field, ',')) fields.push_back(field);
            if (fields.size() < 5) continue;
            char buf[160];
            std::snprintf(buf, sizeof(buf), "| %s | %s | %.2f | %.2f | %.2f |\n",
                          fields[0].c_str(), fields[1].c_str(),
                          std::strtod(fields[2].c_str(), nullptr),
                          std::strtod(fields[3].c_str(), nullptr),
                          std::strtod(fields[4].c_str(), nullptr));
            md << buf;
        }
        md << "\n";
    }

    std::cout << "report written to " << (out / "report.md").string() << "\n";
    return 0;
}

}  // namespace poseadapt
