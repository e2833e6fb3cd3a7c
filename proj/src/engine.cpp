#include "poseadapt/engine.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace poseadapt {

namespace {

constexpr double kThetaLimit = M_PI / 2.0;  // soft joint limit per component

Eigen::Matrix2d rot2(double angle) {
    Eigen::Matrix2d r;
    r << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
    return r;
}

int count_included(const std::vector<bool>& excluded) {
    int n = 0;
    for (bool e : excluded)
        if (!e) ++n;
    return n;
}

}  // namespace

// ---------------------------------------------------------------------------
// Transforms.
// ---------------------------------------------------------------------------

WeakTransform sample_weak(const AugmentRanges& ranges, Rng& rng) {
    WeakTransform t;
    t.rot = rng.uniform(-ranges.rot_max, ranges.rot_max);
    t.scale = rng.uniform(ranges.scale_min, ranges.scale_max);
    t.shift = {rng.uniform(-ranges.shift_max, ranges.shift_max),
               rng.uniform(-ranges.shift_max, ranges.shift_max)};
    if (!(t.scale > 0.0)) throw InvalidInput("augmentation scale must be positive");
    return t;
}

StrongAugment sample_strong(const AugmentRanges& ranges, const Camera& cam, int joint_count,
                            const std::vector<bool>& forced_occlusion, Rng& rng) {
    StrongAugment s;
    s.weak = sample_weak(ranges, rng);
    s.occlude.assign(joint_count, false);
    for (int k = 0; k < std::min<int>(joint_count, forced_occlusion.size()); ++k)
        s.occlude[k] = forced_occlusion[k];
    s.crop = true;
    s.crop_axis = rng.uniform_int(0, 1);
    s.crop_high = rng.uniform_int(0, 1) == 1;
    const double frac = rng.uniform(ranges.crop_min, ranges.crop_max);
    const double extent = s.crop_axis == 0 ? cam.image_size.x() : cam.image_size.y();
    s.crop_pos = s.crop_high ? extent * (1.0 - frac) : extent * frac;
    return s;
}

MatrixX2d transform_points(const WeakTransform& t, const MatrixX2d& points, const Camera& cam) {
    if (!(t.scale > 0.0)) throw InvalidInput("transform_points: scale must be positive");
    const Eigen::Matrix2d r = rot2(t.rot);
    MatrixX2d out(points.rows(), 2);
    for (int k = 0; k < points.rows(); ++k) {
        const Eigen::Vector2d c = points.row(k).transpose() - cam.principal;
        out.row(k) = (t.scale * (r * c) + cam.principal + t.shift).transpose();
    }
    return out;
}

MatrixX2d invert_points(const WeakTransform& t, const MatrixX2d& points, const Camera& cam) {
    if (!(t.scale > 0.0)) throw InvalidInput("invert_points: scale must be positive");
    const Eigen::Matrix2d r = rot2(-t.rot);
    MatrixX2d out(points.rows(), 2);
    for (int k = 0; k < points.rows(); ++k) {
        const Eigen::Vector2d c = points.row(k).transpose() - cam.principal - t.shift;
        out.row(k) = (r * c / t.scale + cam.principal).transpose();
    }
    return out;
}

MatrixX3d transform_joints(const WeakTransform& t, const MatrixX3d& joints, const Camera& cam) {
    // Rotation about the optical axis, depth scaling, and a depth-dependent
    // shear; chosen so projection and transform commute exactly per joint.
    if (!(t.scale > 0.0)) throw InvalidInput("transform_joints: scale must be positive");
    const Eigen::Matrix2d r = rot2(t.rot);
    MatrixX3d out(joints.rows(), 3);
    for (int k = 0; k < joints.rows(); ++k) {
        const Eigen::Vector2d xy = r * joints.row(k).head<2>().transpose();
        const double z = joints(k, 2) / t.scale;
        out(k, 0) = xy.x() + t.shift.x() * z / cam.focal;
        out(k, 1) = xy.y() + t.shift.y() * z / cam.focal;
        out(k, 2) = z;
    }
    return out;
}

MatrixX3d invert_joints(const WeakTransform& t, const MatrixX3d& joints, const Camera& cam) {
    if (!(t.scale > 0.0)) throw InvalidInput("invert_joints: scale must be positive");
    const Eigen::Matrix2d r = rot2(-t.rot);
    MatrixX3d out(joints.rows(), 3);
    for (int k = 0; k < joints.rows(); ++k) {
        const double z = joints(k, 2);
        Eigen::Vector2d xy(joints(k, 0) - t.shift.x() * z / cam.focal,
                           joints(k, 1) - t.shift.y() * z / cam.focal);
        xy = r * xy;
        out(k, 0) = xy.x();
        out(k, 1) = xy.y();
        out(k, 2) = z * t.scale;
    }
    return out;
}

namespace {

AugmentedView apply_view_impl(const Eigen::VectorXd& features, const Camera& cam,
                              const WeakTransform& weak, const std::vector<bool>* occlude,
                              const StrongAugment* crop_spec) {
    MatrixX2d points;
    std::vector<bool> visible;
    decode_features(features, cam, points, visible);
    const int j = static_cast<int>(visible.size());

    AugmentedView view;
    view.weak = weak;
    view.excluded.assign(j, false);
    MatrixX2d transformed = transform_points(weak, points, cam);

    std::vector<bool> out_visible(j);
    for (int k = 0; k < j; ++k) {
        bool vis = visible[k];
        bool excl = !visible[k];
        if (occlude && (*occlude)[k]) {
            vis = false;
            excl = true;
        }
        if (crop_spec && crop_spec->crop && vis) {
            const double coord = transformed(k, crop_spec->crop_axis);
            const bool removed =
                crop_spec->crop_high ? coord > crop_spec->crop_pos : coord < crop_spec->crop_pos;
            if (removed) {
                vis = false;
                excl = true;
            }
        }
        out_visible[k] = vis;
        view.excluded[k] = excl;
    }
    view.features = encode_features(transformed, out_visible, cam);
    return view;
}

}  // namespace

AugmentedView apply_weak_view(const Eigen::VectorXd& features, const Camera& cam,
                              const WeakTransform& t) {
    return apply_view_impl(features, cam, t, nullptr, nullptr);
}

AugmentedView apply_strong_view(const Eigen::VectorXd& features, const Camera& cam,
                                const StrongAugment& aug) {
    return apply_view_impl(features, cam, aug.weak, &aug.occlude, &aug);
}

// ---------------------------------------------------------------------------
// Losses.
// ---------------------------------------------------------------------------

double prior_penalty(const PoseParams& params) {
    double e_theta = 0.0;
    for (int i = 0; i < params.theta.size(); ++i) {
        const double excess = std::abs(params.theta(i)) - kThetaLimit;
        if (excess > 0.0) e_theta += excess * excess;
    }
    const double e_beta = (params.beta.array() - 1.0).matrix().squaredNorm();
    return e_theta + e_beta;
}

LossEval eval_prior(const PoseParams& params) {
    LossEval e;
    e.d_params = PoseParamGrad::zero(static_cast<int>(params.theta.size()) / 3);
    double e_theta = 0.0;
    for (int i = 0; i < params.theta.size(); ++i) {
        const double excess = std::abs(params.theta(i)) - kThetaLimit;
        if (excess > 0.0) {
            e_theta += excess * excess;
            e.d_params.theta(i) = 2.0 * excess * (params.theta(i) > 0.0 ? 1.0 : -1.0);
        }
    }
    e.value = e_theta + (params.beta.array() - 1.0).matrix().squaredNorm();
    e.d_params.beta = 2.0 * (params.beta.array() - 1.0);
    return e;
}

LossEval eval_loss_2d(const SkeletonTemplate& skel, const PoseParams& params,
                      const Keypoints2D& est_2d, const Camera& cam, double conf_threshold) {
    const int j = skel.joint_count();
    if (est_2d.points.rows() != j) throw InvalidInput("loss_2d: keypoint count mismatch");

    const FkWorkspace ws = fk_forward(skel, params);
    const Pose3D pose{ws.positions};
    const Keypoints2D proj = project(pose, cam);

    int n_conf = 0;
    for (int k = 0; k < j; ++k)
        if (est_2d.confidence(k) > conf_threshold) ++n_conf;

    MatrixX2d d_pixels = MatrixX2d::Zero(j, 2);
    double value = 0.0;
    if (n_conf > 0) {
        for (int k = 0; k < j; ++k) {
            if (est_2d.confidence(k) <= conf_threshold) continue;
            const Eigen::RowVector2d r = proj.points.row(k) - est_2d.points.row(k);
            value += r.squaredNorm() / n_conf;
            d_pixels.row(k) = 2.0 * r / n_conf;
        }
    } else {
        // No keypoint passes the threshold: weight everything by confidence.
        const double total = est_2d.confidence.sum();
        const double denom = total > 0.0 ? total : static_cast<double>(j);
        for (int k = 0; k < j; ++k) {
            const double c = total > 0.0 ? est_2d.confidence(k) : 1.0;
            const Eigen::RowVector2d r = proj.points.row(k) - est_2d.points.row(k);
            value += c * r.squaredNorm() / denom;
            d_pixels.row(k) = 2.0 * c * r / denom;
        }
    }

    LossEval e;
    e.value = value;
    e.d_params = fk_backward(skel, params, ws, project_backward(pose, cam, d_pixels));
    return e;
}

double loss_2d(const SkeletonTemplate& skel, const PoseParams& params, const Keypoints2D& est_2d,
               const Camera& cam, double conf_threshold) {
    return eval_loss_2d(skel, params, est_2d, cam, conf_threshold).value;
}

LossEval eval_loss_proj(const SkeletonTemplate& skel, const PoseParams& params,
                        const Keypoints2D& est_2d, const Camera& cam, const LossWeights& w,
                        double conf_threshold) {
    LossEval e = eval_loss_2d(skel, params, est_2d, cam, conf_threshold);
    const LossEval prior = eval_prior(params);
    e.value += w.lambda1 * prior.value;
    e.d_params.add_scaled(prior.d_params, w.lambda1);
    return e;
}

double loss_proj(const SkeletonTemplate& skel, const PoseParams& params, const Keypoints2D& est_2d,
                 const Camera& cam, const LossWeights& w, double conf_threshold) {
    return eval_loss_proj(skel, params, est_2d, cam, w, conf_threshold).value;
}

LossEval eval_consistency(const SkeletonTemplate& skel, const PoseParams& params,
                          const Camera& cam, const WeakTransform& weak,
                          const std::vector<bool>& excluded_2d, const Keypoints2D& est_2d,
                          bool include_3d, const std::vector<bool>* excluded_3d,
                          const MatrixX3d& pseudo_3d, double lambda2) {
    const int j = skel.joint_count();
    const FkWorkspace ws = fk_forward(skel, params);
    const Pose3D pose{ws.positions};
    const Keypoints2D proj = project(pose, cam);

    MatrixX2d d_pixels = MatrixX2d::Zero(j, 2);
    MatrixX3d d_joints = MatrixX3d::Zero(j, 3);
    double value = 0.0;

    // 2D term: undo the transform on the prediction, compare in the original
    // frame, and push the gradient back through the inverse map.
    const int n2 = count_included(excluded_2d);
    if (n2 > 0) {
        const MatrixX2d back = invert_points(weak, proj.points, cam);
        const Eigen::Matrix2d jac_t = rot2(weak.rot) / weak.scale;  // (dBack/dProj)^T
        for (int k = 0; k < j; ++k) {
            if (excluded_2d[k]) continue;
            const Eigen::Vector2d r = (back.row(k) - est_2d.points.row(k)).transpose();
            value += r.squaredNorm() / n2;
            d_pixels.row(k) += (jac_t * (2.0 * r / n2)).transpose();
        }
    }

    if (include_3d) {
        int n3 = j;
        if (excluded_3d) n3 = count_included(*excluded_3d);
        if (n3 > 0) {
            const MatrixX3d back = invert_joints(weak, pose.joints, cam);
            const Eigen::Matrix2d r_inv = rot2(-weak.rot);
            const Eigen::Vector2d shear = r_inv * (-weak.shift / cam.focal);
            const double s2 = kConsistency3DScale * kConsistency3DScale;
            for (int k = 0; k < j; ++k) {
                if (excluded_3d && (*excluded_3d)[k]) continue;
                const Eigen::Vector3d r = (back.row(k) - pseudo_3d.row(k)).transpose();
                value += lambda2 * s2 * r.squaredNorm() / n3;
                const Eigen::Vector3d g = 2.0 * lambda2 * s2 * r / n3;
                // Transpose of the inverse-transform Jacobian.
                d_joints(k, 0) += r_inv(0, 0) * g.x() + r_inv(1, 0) * g.y();
                d_joints(k, 1) += r_inv(0, 1) * g.x() + r_inv(1, 1) * g.y();
                d_joints(k, 2) += shear.dot(g.head<2>()) + weak.scale * g.z();
            }
        }
    }

    d_joints += project_backward(pose, cam, d_pixels);

    LossEval e;
    e.value = value;
    e.d_params = fk_backward(skel, params, ws, d_joints);
    return e;
}

double loss_aug(const SkeletonTemplate& skel, const RegressorState& model, const Camera& cam,
                const Frame& confident_frame, const MatrixX3d& stored_pred_3d,
                const StrongAugment& aug, const LossWeights& w) {
    const AugmentedView view = apply_strong_view(confident_frame.features, cam, aug);
    const PoseParams params = predict(model, view.features);
    return eval_consistency(skel, params, cam, view.weak, view.excluded,
                            confident_frame.est_2d, true, &view.excluded, stored_pred_3d,
                            w.lambda2)
        .value;
}

double loss_adapt(const SkeletonTemplate& skel, const RegressorState& model, const Camera& cam,
                  const SampleRecord& record, const WeakTransform& aug, const LossWeights& w) {
    const AugmentedView view = apply_weak_view(record.features, cam, aug);
    const PoseParams params = predict(model, view.features);
    std::vector<bool> excluded_2d = view.excluded;
    LossEval e = eval_consistency(skel, params, cam, view.weak, excluded_2d, record.est_2d,
                                  record.confident, nullptr, record.pseudo_3d, w.lambda2);
    return e.value + w.lambda1 * prior_penalty(params);
}

// ---------------------------------------------------------------------------
// Adaptation stages.
// ---------------------------------------------------------------------------

namespace {

ParamLoss make_proj_loss(const SkeletonTemplate& skel, const Keypoints2D& est_2d,
                         const Camera& cam, const LossWeights& w, const ConfidenceRule& rule) {
    return [&skel, &est_2d, &cam, w, rule](const PoseParams& p) {
        return eval_loss_proj(skel, p, est_2d, cam, w, rule.keypoint_threshold);
    };
}

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const double na = a.norm();
    const double nb = b.norm();
    if (na < 1e-300 || nb < 1e-300) return 1.0;
    return a.dot(b) / (na * nb);
}

int resolve_similarity_layer(const RegressorState& state, const TwoStageConfig& cfg) {
    if (cfg.similarity_layer >= 0) return cfg.similarity_layer;
    return state.hidden_count() - 1;
}

}  // namespace

double confident_epe(const SkeletonTemplate& skel, const RegressorState& state,
                     const Eigen::VectorXd& features, const Keypoints2D& est_2d,
                     const Camera& cam, const ConfidenceRule& rule) {
    const PoseParams p = predict(state, features);
    const Keypoints2D proj = project(forward_kinematics(skel, p), cam);
    const int j = skel.joint_count();
    double sum = 0.0;
    int n = 0;
    for (int k = 0; k < j; ++k) {
        if (est_2d.confidence(k) > rule.keypoint_threshold) {
            sum += (proj.points.row(k) - est_2d.points.row(k)).norm();
            ++n;
        }
    }
    if (n == 0) {
        for (int k = 0; k < j; ++k) sum += (proj.points.row(k) - est_2d.points.row(k)).norm();
        n = j;
    }
    return sum / n;
}

StageResult stage1_adapt(const SkeletonTemplate& skel, RegressorState& state, AdamState& adam,
                         const Eigen::VectorXd& features, const Keypoints2D& est_2d,
                         const Camera& cam, const LossWeights& w, const ConfidenceRule& rule,
                         const TwoStageConfig& cfg, TeacherState* teacher) {
    StageResult res;
    const ParamLoss fn = make_proj_loss(skel, est_2d, cam, w, rule);
    const int layer = resolve_similarity_layer(state, cfg);
    for (int it = 0; it < cfg.stage1_max_iters; ++it) {
        const Eigen::VectorXd before = feature_at_layer(state, features, layer);
        const GradientResult g = loss_gradient(state, features, fn);
        if (g.grads.squared_norm() == 0.0) break;  // converged, nothing to apply
        adam_step(state, adam, g.grads);
        if (teacher) ema_update(*teacher, state);
        res.iters += 1;
        const Eigen::VectorXd after = feature_at_layer(state, features, layer);
        if (cosine_similarity(before, after) < cfg.cos_sim_stop_threshold) break;
    }
    res.final_epe = confident_epe(skel, state, features, est_2d, cam, rule);
    return res;
}

Stage2Result stage2_adapt(const SkeletonTemplate& skel, const RegressorState& after_stage1,
                          const AdamState& adam, const Eigen::VectorXd& features,
                          const Keypoints2D& est_2d, const Camera& cam, const LossWeights& w,
                          const ConfidenceRule& rule, const TwoStageConfig& cfg) {
    RegressorState work = after_stage1;
    AdamState work_adam = adam;
    const ParamLoss fn = make_proj_loss(skel, est_2d, cam, w, rule);

    Stage2Result res;
    res.prediction = predict(work, features);
    res.final_epe = confident_epe(skel, work, features, est_2d, cam, rule);
    while (res.final_epe > cfg.stage2_epe_threshold_px && res.iters < cfg.stage2_max_iters) {
        const GradientResult g = loss_gradient(work, features, fn);
        if (g.grads.squared_norm() == 0.0) break;
        adam_step(work, work_adam, g.grads);
        res.iters += 1;
        const double epe = confident_epe(skel, work, features, est_2d, cam, rule);
        if (epe < res.final_epe) {
            res.final_epe = epe;
            res.prediction = predict(work, features);
        }
    }
    return res;
}

StageResult plain_adapt(const SkeletonTemplate& skel, RegressorState& state, AdamState& adam,
                        const Eigen::VectorXd& features, const Keypoints2D& est_2d,
                        const Camera& cam, const LossWeights& w, const ConfidenceRule& rule,
                        const TwoStageConfig& cfg, TeacherState* teacher) {
    StageResult res;
    const ParamLoss fn = make_proj_loss(skel, est_2d, cam, w, rule);
    res.final_epe = confident_epe(skel, state, features, est_2d, cam, rule);
    while (res.final_epe > cfg.stage2_epe_threshold_px && res.iters < cfg.stage2_max_iters) {
        const GradientResult g = loss_gradient(state, features, fn);
        if (g.grads.squared_norm() == 0.0) break;
        adam_step(state, adam, g.grads);
        if (teacher) ema_update(*teacher, state);
        res.iters += 1;
        res.final_epe = confident_epe(skel, state, features, est_2d, cam, rule);
    }
    return res;
}

int local_augmentation(const SkeletonTemplate& skel, RegressorState& state, AdamState& adam,
                       const std::deque<WindowEntry>& window, const Frame& current,
                       const Camera& cam, const AugmentRanges& ranges, const ConfidenceRule& rule,
                       const LossWeights& w, TeacherState* teacher, Rng& rng) {
    const int j = skel.joint_count();
    int steps = 0;
    for (const WindowEntry& entry : window) {
        if (!is_confident(entry.frame->est_2d.confidence, rule)) continue;
        // Occlude what this neighbor sees but the current frame does not.
        std::vector<bool> forced(j, false);
        for (int k = 0; k < j; ++k)
            forced[k] = entry.frame->est_2d.confidence(k) > rule.keypoint_threshold &&
                        current.est_2d.confidence(k) <= rule.keypoint_threshold;
        const StrongAugment aug = sample_strong(ranges, cam, j, forced, rng);
        const AugmentedView view = apply_strong_view(entry.frame->features, cam, aug);
        const Keypoints2D& target_2d = entry.frame->est_2d;
        const MatrixX3d& target_3d = entry.student_pred_3d;
        const ParamLoss fn = [&](const PoseParams& p) {
            return eval_consistency(skel, p, cam, view.weak, view.excluded, target_2d, true,
                                    &view.excluded, target_3d, w.lambda2);
        };
        const GradientResult g = loss_gradient(state, view.features, fn);
        adam_step(state, adam, g.grads);
        if (teacher) ema_update(*teacher, state);
        ++steps;
    }
    return steps;
}

int adaptive_aggregation(const SkeletonTemplate& skel, RegressorState& state,
                         AdamState& stream_adam, TeacherState* teacher,
                         const Snapshot& video_start, MemoryBank& bank,
                         const AggregationConfig& agg, const Camera& cam,
                         const AugmentRanges& ranges, const LossWeights& w, std::uint64_t seed) {
    restore(video_start, state, stream_adam);
    if (bank.empty()) return 0;

    const std::vector<std::size_t> drawn = bank_draw(bank, agg.n_draw, mix_seed(seed, 0xD1));
    AdamState opt = AdamState::init(state, agg.learning_rate, agg.momentum);
    Rng rng(mix_seed(seed, 0xD2));

    int steps = 0;
    const int batch = std::max(1, agg.batch_size);
    for (std::size_t start = 0; start < drawn.size(); start += batch) {
        const std::size_t end = std::min(drawn.size(), start + batch);
        ParamGradients acc = ParamGradients::zero_like(state);
        double batch_loss = 0.0;
        const double inv = 1.0 / static_cast<double>(end - start);
        for (std::size_t i = start; i < end; ++i) {
            const SampleRecord& rec = bank.records[drawn[i]];
            const WeakTransform weak = sample_weak(ranges, rng);
            const AugmentedView view = apply_weak_view(rec.features, cam, weak);
            bool include_3d = rec.confident;
            if (agg.pl_mode == PseudoLabelMode::weak) include_3d = false;
            if (agg.pl_mode == PseudoLabelMode::strong) include_3d = true;
            const ParamLoss fn = [&](const PoseParams& p) {
                LossEval e = eval_consistency(skel, p, cam, view.weak, view.excluded, rec.est_2d,
                                              include_3d, nullptr, rec.pseudo_3d, w.lambda2);
                const LossEval prior = eval_prior(p);
                e.value += w.lambda1 * prior.value;
                e.d_params.add_scaled(prior.d_params, w.lambda1);
                return e;
            };
            const GradientResult g = loss_gradient(state, view.features, fn);
            acc.add_scaled(g.grads, inv);
            batch_loss += inv * g.loss;
        }
        if (!std::isfinite(batch_loss)) throw GradientInvalid("aggregation loss not finite");
        adam_step(state, opt, acc);
        if (teacher) ema_update(*teacher, state);
        ++steps;
    }
    return steps;
}

// ---------------------------------------------------------------------------
// Pipelines.
// ---------------------------------------------------------------------------

bool RunConfig::aggregation_on() const {
    return switches.aggregation.value_or(mode == PipelineModeKind::full_method);
}
bool RunConfig::local_aug_on() const {
    return switches.local_aug.value_or(mode == PipelineModeKind::full_method);
}
bool RunConfig::two_stage_on() const {
    return switches.two_stage.value_or(mode == PipelineModeKind::full_method);
}

RunReport run_stream(const SkeletonTemplate& skel, const RegressorState& pretrained,
                     const std::vector<Video>& streams, const RunConfig& cfg) {
    const Camera cam = Camera::default_desk();
    const bool agg_on = cfg.aggregation_on();
    const bool local_on = cfg.local_aug_on();
    const bool two_stage_on = cfg.two_stage_on();

    RegressorState state = pretrained;
    AdamState adam = AdamState::init(state, cfg.lr_stream, cfg.momentum_stream);
    TeacherState teacher = TeacherState::init(state, cfg.ema_decay);
    MemoryBank bank;
    Rng aug_rng(mix_seed(cfg.seed, 0xA06));

    RunReport report;
    Snapshot prev_handoff;  // state that should enter the next frame
    bool have_handoff = false;

    for (std::size_t v = 0; v < streams.size(); ++v) {
        const Video& video = streams[v];
        if (v > 0) {
            const bool resets = cfg.mode == PipelineModeKind::per_video_reset ||
                                (cfg.mode == PipelineModeKind::full_method && !agg_on);
            if (resets) {
                state = pretrained;
                adam = AdamState::init(state, cfg.lr_stream, cfg.momentum_stream);
            }
        }
        const Snapshot video_start = snapshot(state, adam);
        have_handoff = false;

        std::deque<WindowEntry> window;
        std::vector<MatrixX3d> selection_preds;
        selection_preds.reserve(video.size());

        for (const Frame& frame : video) {
            if (cfg.instrument_isolation && have_handoff &&
                !states_equal(state, prev_handoff.model))
                report.isolation_violations += 1;

            const Snapshot pre_frame = snapshot(state, adam);
            const bool confident = is_confident(frame.est_2d.confidence, cfg.rule);

            FrameRow row;
            row.video_id = frame.video_id;
            row.frame_id = frame.frame_id;
            row.confident = confident;

            PoseParams pred_params;
            try {
                if (local_on && !confident && cfg.mode == PipelineModeKind::full_method)
                    row.localaug_steps = local_augmentation(skel, state, adam, window, frame, cam,
                                                            cfg.aug, cfg.rule, cfg.weights,
                                                            &teacher, aug_rng);
                if (two_stage_on) {
                    const StageResult s1 =
                        stage1_adapt(skel, state, adam, frame.features, frame.est_2d, cam,
                                     cfg.weights, cfg.rule, cfg.two_stage, &teacher);
                    row.stage1_iters = s1.iters;
                    prev_handoff = snapshot(state, adam);
                    have_handoff = true;
                    const Stage2Result s2 =
                        stage2_adapt(skel, state, adam, frame.features, frame.est_2d, cam,
                                     cfg.weights, cfg.rule, cfg.two_stage);
                    row.stage2_iters = s2.iters;
                    pred_params = s2.prediction;
                } else {
                    const StageResult s =
                        plain_adapt(skel, state, adam, frame.features, frame.est_2d, cam,
                                    cfg.weights, cfg.rule, cfg.two_stage, &teacher);
                    row.stage1_iters = s.iters;
                    prev_handoff = snapshot(state, adam);
                    have_handoff = true;
                    pred_params = predict(state, frame.features);
                }
            } catch (const Error&) {
                // Frame-level failure: roll back and score with the pre-frame model.
                restore(pre_frame, state, adam);
                pred_params = predict(state, frame.features);
                row.aborted = true;
                report.aborted_frames += 1;
                prev_handoff = snapshot(state, adam);
                have_handoff = true;
            }

            const Pose3D pred_pose = forward_kinematics(skel, pred_params);
            row.mpjpe_mm = mpjpe(pred_pose, frame.gt_3d);
            row.pa_mpjpe_mm = pa_mpjpe(pred_pose, frame.gt_3d);
            row.epe2d_px = epe_2d(project(pred_pose, cam), frame.gt_2d);
            report.rows.push_back(row);

            if (local_on && cfg.mode == PipelineModeKind::full_method) {
                window.push_back(WindowEntry{&frame, pred_pose.joints});
                while (static_cast<int>(window.size()) > cfg.window) window.pop_front();
            }
            if (agg_on && cfg.mode == PipelineModeKind::full_method) {
                if (cfg.pl_source == PseudoLabelSource::teacher) {
                    const PoseParams tp = predict(teacher.shadow, frame.features);
                    selection_preds.push_back(forward_kinematics(skel, tp).joints);
                } else {
                    selection_preds.push_back(pred_pose.joints);
                }
            }
        }

        if (agg_on && cfg.mode == PipelineModeKind::full_method && !video.empty()) {
            std::vector<SampleRecord> records =
                select_with_strategy(video, selection_preds, cfg.rule, cfg.n_per_video,
                                     cfg.n_clusters, cfg.selection,
                                     mix_seed(cfg.seed, 0x5E7, static_cast<std::uint64_t>(v)));
            bank.records.insert(bank.records.end(), std::make_move_iterator(records.begin()),
                                std::make_move_iterator(records.end()));
            AggregationConfig agg;
            agg.learning_rate = cfg.lr_agg;
            agg.momentum = cfg.momentum_agg;
            agg.batch_size = cfg.batch_agg;
            agg.n_draw = cfg.n_per_video;
            agg.pl_mode = cfg.pl_mode;
            adaptive_aggregation(skel, state, adam, &teacher, video_start, bank, agg, cam,
                                 cfg.aug, cfg.weights,
                                 mix_seed(cfg.seed, 0xA99, static_cast<std::uint64_t>(v)));
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Reporting.
// ---------------------------------------------------------------------------

RunAggregates RunReport::aggregates() const {
    RunAggregates a;
    double sums[3][3] = {};  // metric x (all, conf, nonconf)
    for (const FrameRow& r : rows) {
        const double m[3] = {r.mpjpe_mm, r.pa_mpjpe_mm, r.epe2d_px};
        for (int i = 0; i < 3; ++i) {
            sums[i][0] += m[i];
            sums[i][r.confident ? 1 : 2] += m[i];
        }
        a.frames += 1;
        (r.confident ? a.conf_frames : a.nonconf_frames) += 1;
    }
    const auto mean = [](double s, int n) { return n > 0 ? s / n : 0.0; };
    a.mpjpe_all = mean(sums[0][0], a.frames);
    a.mpjpe_conf = mean(sums[0][1], a.conf_frames);
    a.mpjpe_nonconf = mean(sums[0][2], a.nonconf_frames);
    a.pa_all = mean(sums[1][0], a.frames);
    a.pa_conf = mean(sums[1][1], a.conf_frames);
    a.pa_nonconf = mean(sums[1][2], a.nonconf_frames);
    a.epe_all = mean(sums[2][0], a.frames);
    a.epe_conf = mean(sums[2][1], a.conf_frames);
    a.epe_nonconf = mean(sums[2][2], a.nonconf_frames);
    return a;
}

void RunReport::write_frames_csv(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw UsageError("cannot open report CSV for writing: " + path);
    out << "video_id,frame_id,confident_flag,mpjpe_mm,pa_mpjpe_mm,epe2d_px,"
           "stage1_iters,stage2_iters,localaug_steps\n";
    for (const FrameRow& r : rows) {
        out << r.video_id << ',' << r.frame_id << ',' << (r.confident ? 1 : 0) << ','
            << format_double(r.mpjpe_mm) << ',' << format_double(r.pa_mpjpe_mm) << ','
            << format_double(r.epe2d_px) << ',' << r.stage1_iters << ',' << r.stage2_iters << ','
            << r.localaug_steps << "\n";
    }
    const RunAggregates a = aggregates();
    out << "agg,all,frames," << a.frames << "\n";
    out << "agg,all,mpjpe_mm," << format_double(a.mpjpe_all) << "\n";
    out << "agg,all,pa_mpjpe_mm," << format_double(a.pa_all) << "\n";
    out << "agg,all,epe2d_px," << format_double(a.epe_all) << "\n";
    out << "agg,all,aborted_frames," << aborted_frames << "\n";
}

void RunReport::write_split_csv(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw UsageError("cannot open split CSV for writing: " + path);
    const RunAggregates a = aggregates();
    out << "scope,frames,mpjpe_mm,pa_mpjpe_mm,epe2d_px\n";
    out << "all," << a.frames << ',' << format_double(a.mpjpe_all) << ','
        << format_double(a.pa_all) << ',' << format_double(a.epe_all) << "\n";
    out << "confident," << a.conf_frames << ',' << format_double(a.mpjpe_conf) << ','
        << format_double(a.pa_conf) << ',' << format_double(a.epe_conf) << "\n";
    out << "nonconfident," << a.nonconf_frames << ',' << format_double(a.mpjpe_nonconf) << ','
        << format_double(a.pa_nonconf) << ',' << format_double(a.epe_nonconf) << "\n";
}

std::string RunReport::summary() const {
    const RunAggregates a = aggregates();
    std::ostringstream os;
    os << "frames " << a.frames << " (conf " << a.conf_frames << ", non-conf " << a.nonconf_frames
       << ")\n";
    char buf[160];
    std::snprintf(buf, sizeof(buf), "MPJPE    all %8.2f  conf %8.2f  non-conf %8.2f mm\n",
                  a.mpjpe_all, a.mpjpe_conf, a.mpjpe_nonconf);
    os << buf;
    std::snprintf(buf, sizeof(buf), "PA-MPJPE all %8.2f  conf %8.2f  non-conf %8.2f mm\n",
                  a.pa_all, a.pa_conf, a.pa_nonconf);
    os << buf;
    std::snprintf(buf, sizeof(buf), "2D EPE   all %8.2f  conf %8.2f  non-conf %8.2f px\n",
                  a.epe_all, a.epe_conf, a.epe_nonconf);
    os << buf;
    if (aborted_frames > 0) os << "aborted frames " << aborted_frames << "\n";
    return os.str();
}

}  // namespace poseadapt
