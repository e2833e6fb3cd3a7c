#pragma once

#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "poseadapt/diffmodel.hpp"
#include "poseadapt/selection.hpp"
#include "poseadapt/streamgen.hpp"

namespace poseadapt {

struct LossWeights {
    double lambda1 = 1e-4;  // prior weight
    double lambda2 = 10.0;  // 3D consistency weight
};

// 3D consistency terms are measured in centimeters so they sit on the same
// numeric scale as the pixel terms at the default scene depth.
inline constexpr double kConsistency3DScale = 100.0;

struct TwoStageConfig {
    double cos_sim_stop_threshold = 0.995;
    int stage1_max_iters = 10;
    double stage2_epe_threshold_px = 15.0;
    int stage2_max_iters = 30;
    int similarity_layer = -1;  // -1 selects the last hidden layer
};

// ---------------------------------------------------------------------------
// Augmentations. Weak transforms are invertible 2D similarities (rotation
// about the principal point, uniform scale, pixel shift) with an exact 3D
// counterpart that commutes with the projection. Strong transforms add a
// truncation crop and keypoint occlusion, both recorded as loss masks.
// ---------------------------------------------------------------------------

struct AugmentRanges {
    double rot_max = 0.5;     // radians
    double scale_min = 0.8;
    double scale_max = 1.25;
    double shift_max = 20.0;  // pixels
    double crop_min = 0.30;   // fraction of the image removed by a crop
    double crop_max = 0.55;
};

struct WeakTransform {
    double rot = 0.0;
    double scale = 1.0;
    Eigen::Vector2d shift{0.0, 0.0};
};

struct StrongAugment {
    WeakTransform weak;
    std::vector<bool> occlude;  // per keypoint
    bool crop = false;
    int crop_axis = 0;
    bool crop_high = true;
    double crop_pos = 0.0;  // pixel boundary of the surviving region
};

WeakTransform sample_weak(const AugmentRanges& ranges, Rng& rng);
StrongAugment sample_strong(const AugmentRanges& ranges, const Camera& cam, int joint_count,
                            const std::vector<bool>& forced_occlusion, Rng& rng);

MatrixX2d transform_points(const WeakTransform& t, const MatrixX2d& points, const Camera& cam);
MatrixX2d invert_points(const WeakTransform& t, const MatrixX2d& points, const Camera& cam);
MatrixX3d transform_joints(const WeakTransform& t, const MatrixX3d& joints, const Camera& cam);
MatrixX3d invert_joints(const WeakTransform& t, const MatrixX3d& joints, const Camera& cam);

// A frame as the model sees it after augmentation: transformed features plus
// the keypoints that consistency losses must skip.
struct AugmentedView {
    Eigen::VectorXd features;
    std::vector<bool> excluded;
    WeakTransform weak;
};

AugmentedView apply_weak_view(const Eigen::VectorXd& features, const Camera& cam,
                              const WeakTransform& t);
AugmentedView apply_strong_view(const Eigen::VectorXd& features, const Camera& cam,
                                const StrongAugment& aug);

// ---------------------------------------------------------------------------
// Losses. Each has a plain value form and an eval form carrying the exact
// gradient with respect to the pose parameters.
// ---------------------------------------------------------------------------

double prior_penalty(const PoseParams& params);
LossEval eval_prior(const PoseParams& params);

double loss_2d(const SkeletonTemplate& skel, const PoseParams& params, const Keypoints2D& est_2d,
               const Camera& cam, double conf_threshold);
LossEval eval_loss_2d(const SkeletonTemplate& skel, const PoseParams& params,
                      const Keypoints2D& est_2d, const Camera& cam, double conf_threshold);

double loss_proj(const SkeletonTemplate& skel, const PoseParams& params, const Keypoints2D& est_2d,
                 const Camera& cam, const LossWeights& w, double conf_threshold);
LossEval eval_loss_proj(const SkeletonTemplate& skel, const PoseParams& params,
                        const Keypoints2D& est_2d, const Camera& cam, const LossWeights& w,
                        double conf_threshold);

// Consistency of a prediction made on an augmented view against the stored
// original-frame targets, after undoing the geometric transform.
LossEval eval_consistency(const SkeletonTemplate& skel, const PoseParams& params,
                          const Camera& cam, const WeakTransform& weak,
                          const std::vector<bool>& excluded_2d, const Keypoints2D& est_2d,
                          bool include_3d, const std::vector<bool>* excluded_3d,
                          const MatrixX3d& pseudo_3d, double lambda2);

double loss_aug(const SkeletonTemplate& skel, const RegressorState& model, const Camera& cam,
                const Frame& confident_frame, const MatrixX3d& stored_pred_3d,
                const StrongAugment& aug, const LossWeights& w);

double loss_adapt(const SkeletonTemplate& skel, const RegressorState& model, const Camera& cam,
                  const SampleRecord& record, const WeakTransform& aug, const LossWeights& w);

// ---------------------------------------------------------------------------
// Per-frame adaptation stages and the streaming pipelines.
// ---------------------------------------------------------------------------

struct StageResult {
    int iters = 0;
    double final_epe = 0.0;
};

// Mean 2D pixel error of the current prediction on confident keypoints
// (falls back to all keypoints when none pass the threshold).
double confident_epe(const SkeletonTemplate& skel, const RegressorState& state,
                     const Eigen::VectorXd& features, const Keypoints2D& est_2d,
                     const Camera& cam, const ConfidenceRule& rule);

// Stage 1: persisted projection fitting with the feature-similarity brake.
// The caller snapshots the result as the next frame's initialization.
StageResult stage1_adapt(const SkeletonTemplate& skel, RegressorState& state, AdamState& adam,
                         const Eigen::VectorXd& features, const Keypoints2D& est_2d,
                         const Camera& cam, const LossWeights& w, const ConfidenceRule& rule,
                         const TwoStageConfig& cfg, TeacherState* teacher);

struct Stage2Result {
    PoseParams prediction;
    int iters = 0;
    double final_epe = 0.0;
};

// Stage 2: continues fitting on a discarded copy until the confident-keypoint
// EPE reaches the threshold; returns the best-fitting prediction.
Stage2Result stage2_adapt(const SkeletonTemplate& skel, const RegressorState& after_stage1,
                          const AdamState& adam, const Eigen::VectorXd& features,
                          const Keypoints2D& est_2d, const Camera& cam, const LossWeights& w,
                          const ConfidenceRule& rule, const TwoStageConfig& cfg);

// Single-stage persisted fitting to the EPE threshold (the two-stage-off
// baseline behavior).
StageResult plain_adapt(const SkeletonTemplate& skel, RegressorState& state, AdamState& adam,
                        const Eigen::VectorXd& features, const Keypoints2D& est_2d,
                        const Camera& cam, const LossWeights& w, const ConfidenceRule& rule,
                        const TwoStageConfig& cfg, TeacherState* teacher);

struct WindowEntry {
    const Frame* frame = nullptr;
    MatrixX3d student_pred_3d;
};

// One consistency step per confident frame in the preceding window, with the
// occlusion mask mirroring the current frame's low-confidence keypoints.
int local_augmentation(const SkeletonTemplate& skel, RegressorState& state, AdamState& adam,
                       const std::deque<WindowEntry>& window, const Frame& current,
                       const Camera& cam, const AugmentRanges& ranges, const ConfidenceRule& rule,
                       const LossWeights& w, TeacherState* teacher, Rng& rng);

enum class PseudoLabelMode { weak, strong, adaptive };
enum class PseudoLabelSource { teacher, student };

struct AggregationConfig {
    double learning_rate = 3e-3;
    double momentum = 0.7;
    int batch_size = 8;
    int n_draw = 160;
    PseudoLabelMode pl_mode = PseudoLabelMode::adaptive;
};

// Restore the video-start snapshot, then run one epoch of adaptive
// pseudo-labeling over records drawn from the bank. Returns optimizer steps.
int adaptive_aggregation(const SkeletonTemplate& skel, RegressorState& state,
                         AdamState& stream_adam, TeacherState* teacher,
                         const Snapshot& video_start, MemoryBank& bank,
                         const AggregationConfig& agg, const Camera& cam,
                         const AugmentRanges& ranges, const LossWeights& w, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Pipelines.
// ---------------------------------------------------------------------------

enum class PipelineModeKind { single_stream, per_video_reset, full_method };

struct PipelineSwitches {
    std::optional<bool> aggregation;
    std::optional<bool> local_aug;
    std::optional<bool> two_stage;
};

struct RunConfig {
    PipelineModeKind mode = PipelineModeKind::full_method;
    PipelineSwitches switches;
    PseudoLabelMode pl_mode = PseudoLabelMode::adaptive;
    PseudoLabelSource pl_source = PseudoLabelSource::teacher;
    SelectionStrategy selection = SelectionStrategy::balanced_clustered;
    LossWeights weights;
    TwoStageConfig two_stage;
    ConfidenceRule rule;
    AugmentRanges aug;
    double lr_stream = 3e-4;
    double momentum_stream = 0.5;
    double lr_agg = 3e-3;
    double momentum_agg = 0.7;
    int batch_agg = 8;
    int batch_stream = 1;
    int n_clusters = 15;
    int n_per_video = 160;
    int window = 5;
    double ema_decay = 0.99;
    std::uint64_t seed = 22;
    bool instrument_isolation = false;

    bool aggregation_on() const;
    bool local_aug_on() const;
    bool two_stage_on() const;
};

struct FrameRow {
    int video_id = 0;
    int frame_id = 0;
    bool confident = false;
    double mpjpe_mm = 0.0;
    double pa_mpjpe_mm = 0.0;
    double epe2d_px = 0.0;
    int stage1_iters = 0;
    int stage2_iters = 0;
    int localaug_steps = 0;
    bool aborted = false;
};

struct RunAggregates {
    double mpjpe_all = 0.0, mpjpe_conf = 0.0, mpjpe_nonconf = 0.0;
    double pa_all = 0.0, pa_conf = 0.0, pa_nonconf = 0.0;
    double epe_all = 0.0, epe_conf = 0.0, epe_nonconf = 0.0;
    int frames = 0, conf_frames = 0, nonconf_frames = 0;
};

struct RunReport {
    std::vector<FrameRow> rows;
    int isolation_violations = 0;
    int aborted_frames = 0;

    RunAggregates aggregates() const;
    void write_frames_csv(const std::string& path) const;
    void write_split_csv(const std::string& path) const;
    std::string summary() const;
};

RunReport run_stream(const SkeletonTemplate& skel, const RegressorState& pretrained,
                     const std::vector<Video>& streams, const RunConfig& cfg);

}  // namespace poseadapt
