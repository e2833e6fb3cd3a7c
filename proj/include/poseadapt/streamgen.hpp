#pragma once

#include <string>
#include <vector>

#include "poseadapt/kinematics.hpp"

namespace poseadapt {

enum class Vis : std::uint8_t { visible = 0, occluded = 1, truncated = 2 };
using EventMask = std::vector<Vis>;

// Everything the generator needs to synthesize a source dataset and a set of
// domain-shifted test streams. Generation is a pure function of this struct.
struct StreamConfig {
    int video_count = 8;
    int frames_per_video = 300;
    int source_sample_count = 3000;

    // Pose distributions. Source angles are centered at zero; target angles
    // sit at target_mean_shift times an alternating +/- pattern.
    double source_angle_range = 0.5;   // radians, uniform half-width
    double target_angle_range = 0.5;
    double target_mean_shift = 0.25;
    double walk_step = 0.03;           // per-frame joint-angle step bound
    double trans_walk_step = 0.02;     // meters per frame

    // Domain shift: a shared feature bias for the whole target domain plus a
    // smaller per-video component, and the same structure on the focal length.
    double domain_shift_mag = 0.25;
    double per_video_shift_frac = 0.5;
    double focal_jitter = 0.08;

    // Simulated 2D estimator.
    double noise_sigma_base = 2.5;        // pixels
    double event_rate = 0.25;             // per-frame occlusion/truncation prob
    double event_noise_multiplier = 8.0;
    double conf_scale = 25.0;             // s in c = exp(-sigma / s)
    double conf_jitter = 0.05;
    bool student_t_noise = false;         // heavy-tailed variant, unvalidated
    double student_t_dof = 3.0;

    double feature_noise = 0.01;          // normalized-coordinate units

    std::uint64_t seed = 22;

    void validate() const;
};

struct Frame {
    Eigen::VectorXd features;  // 3 per keypoint: x_norm, y_norm, visibility
    PoseParams gt_params;
    Pose3D gt_3d;
    Keypoints2D gt_2d;   // confidence all ones
    Keypoints2D est_2d;  // simulated estimator output with confidences
    EventMask mask;
    int video_id = 0;
    int frame_id = 0;
};

using Video = std::vector<Frame>;

struct SourceSample {
    Eigen::VectorXd features;
    PoseParams params;
};

int feature_dim(const SkeletonTemplate& skel);

// Normalized-pixel feature encoding. Invisible keypoints have all three of
// their slots zeroed; the caller applies noise/bias before the zeroing.
Eigen::VectorXd encode_features(const MatrixX2d& points, const std::vector<bool>& visible,
                                const Camera& cam);
void decode_features(const Eigen::VectorXd& features, const Camera& cam, MatrixX2d& points,
                     std::vector<bool>& visible);

std::vector<SourceSample> generate_source(const SkeletonTemplate& skel, const StreamConfig& cfg);

std::vector<Video> generate_streams(const SkeletonTemplate& skel, const StreamConfig& cfg);

// Per-keypoint noisy estimate with a confidence that decays in the noise
// regime. Truncated keypoints are additionally pushed outside the image.
Keypoints2D simulate_estimator(const Keypoints2D& gt_2d, const EventMask& mask,
                               const StreamConfig& cfg, const Camera& cam, Rng& rng);

std::uint64_t config_digest(const StreamConfig& cfg);

void write_stream(const std::string& path, const std::vector<Video>& videos,
                  const SkeletonTemplate& skel, std::uint64_t config_hash);
std::vector<Video> read_stream(const std::string& path, const SkeletonTemplate& skel);

}  // namespace poseadapt
