#pragma once

#include <string>
#include <vector>

#include "poseadapt/streamgen.hpp"

namespace poseadapt {

struct ConfidenceRule {
    double keypoint_threshold = 0.8;
    int min_confident_count = 10;
};

// A pose is confident iff strictly more than min_confident_count keypoints
// exceed the threshold.
bool is_confident(const Eigen::VectorXd& confidence, const ConfidenceRule& rule);

// Mean keypoint confidence.
double sampling_weight(const Eigen::VectorXd& confidence);

// One representative sample kept across videos.
struct SampleRecord {
    Eigen::VectorXd features;
    Keypoints2D est_2d;
    MatrixX3d pseudo_3d;  // model prediction at the time of recording
    double weight = 0.0;
    bool confident = false;
    int times_chosen = 0;
    int video_id = 0;
    int frame_id = 0;
};

struct MemoryBank {
    std::vector<SampleRecord> records;

    bool empty() const { return records.empty(); }
    std::size_t size() const { return records.size(); }
};

struct ClusterModel {
    Eigen::MatrixXd centroids;        // K x D, unit rows
    std::vector<int> assignment;      // per input row
    std::vector<double> objective_history;  // sum of cosines, per iteration
    int iterations = 0;
};

// Root-center each pose, flatten, and scale to unit norm. Throws on an
// all-zero pose vector.
Eigen::MatrixXd normalize_poses_for_clustering(const std::vector<MatrixX3d>& poses);

// Classic spherical K-means on unit rows: assign to the max-cosine centroid,
// recompute centroids as normalized means, reseed empty clusters from the
// farthest point. Deterministic in (rows, k, seed).
ClusterModel spherical_kmeans(const Eigen::MatrixXd& unit_rows, int k, std::uint64_t seed);

// Largest-remainder rounding of size_i * quota / total, capped at size_i,
// ties broken toward the larger cluster (then lower index).
std::vector<int> allocate_quota(const std::vector<int>& cluster_sizes, int quota);

enum class SelectionStrategy {
    uniform,             // random frames
    weighted,            // top sampling-weight frames
    weighted_stochastic, // weight-proportional random draw
    balanced,            // top-weight, split between confident/non-confident
    balanced_clustered,  // the full method: balanced + per-cluster quotas
};

// Pick up to n_per_video representative records from a finished video using
// the full balanced+clustered scheme described above.
std::vector<SampleRecord> select_representatives(const Video& frames,
                                                 const std::vector<MatrixX3d>& predictions,
                                                 const ConfidenceRule& rule, int n_per_video,
                                                 int n_clusters, std::uint64_t seed);

// Strategy-switchable variant used by the ablations; balanced_clustered
// matches select_representatives exactly.
std::vector<SampleRecord> select_with_strategy(const Video& frames,
                                               const std::vector<MatrixX3d>& predictions,
                                               const ConfidenceRule& rule, int n_per_video,
                                               int n_clusters, SelectionStrategy strategy,
                                               std::uint64_t seed);

// Weighted draw without replacement; probability of each record is
// proportional to 1 / (1 + times_chosen) as of the start of the call.
// Increments times_chosen on the drawn records. If n >= bank size, returns
// every record.
std::vector<std::size_t> bank_draw(MemoryBank& bank, int n, std::uint64_t seed);

void dump_bank(const std::string& path, const MemoryBank& bank);

}  // namespace poseadapt
