#pragma once

// Independent reference implementations used only to check the library.
// They deliberately take different computational routes from the code under
// test: Eigen::AngleAxis for rotations, explicit recursion for the kinematic
// tree, exhaustive search for alignment/partitions/quotas, and central
// finite differences for gradients.

#include <functional>
#include <vector>

#include "poseadapt/diffmodel.hpp"
#include "poseadapt/kinematics.hpp"

namespace oracles {

// Recursive forward kinematics built on Eigen::AngleAxisd.
poseadapt::MatrixX3d naive_fk(const poseadapt::SkeletonTemplate& skel,
                              const poseadapt::PoseParams& params);

// Dense rotation-grid similarity alignment. Minimizes the summed squared
// distance over a coarse SO(3) grid with local refinement and returns the
// mean (unsquared) distance in millimeters of the best transform.
struct GridAlignResult {
    double mean_distance_mm = 0.0;
    double squared_objective = 0.0;  // sum of squared distances, meters^2
};
GridAlignResult grid_procrustes(const poseadapt::MatrixX3d& pred,
                                const poseadapt::MatrixX3d& gt);

// Central finite differences of loss(predict(state)) over every weight/bias.
poseadapt::ParamGradients finite_difference_gradient(
    const poseadapt::RegressorState& state, const Eigen::VectorXd& features,
    const std::function<double(const poseadapt::RegressorState&)>& loss_value, double step);

// Largest relative component error between two gradients, with a floor on
// the denominator so near-zero components compare absolutely.
double max_relative_error(const poseadapt::ParamGradients& a, const poseadapt::ParamGradients& b,
                          double denom_floor);

// All feasible integer allocations (0 <= n_i <= size_i, sum = target) with
// minimal L1 deviation from the ideal real-valued quota.
std::vector<std::vector<int>> quota_minimizers(const std::vector<int>& sizes, int quota);

// Best 2-partition of unit rows by the spherical k-means objective
// (sum of cosines to the normalized partition means). Returns assignments.
std::vector<int> best_two_partition(const Eigen::MatrixXd& unit_rows);

double spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace oracles
