#pragma once

#include <Eigen/Dense>
#include <vector>

#include "poseadapt/common.hpp"

namespace poseadapt {

inline constexpr int kShapeDim = 10;

using MatrixX3d = Eigen::Matrix<double, Eigen::Dynamic, 3>;
using MatrixX2d = Eigen::Matrix<double, Eigen::Dynamic, 2>;

// Articulated skeleton: a tree of joints, each non-root joint connected to
// its parent by a rest offset scaled by one of kShapeDim shape coefficients.
struct SkeletonTemplate {
    std::vector<int> parent;    // parent[0] == -1; parent[i] < i
    MatrixX3d rest_offset;      // J x 3, meters in the parent frame; row 0 zero
    std::vector<int> scale_group;  // per-joint shape-group id; root entry -1

    int joint_count() const { return static_cast<int>(parent.size()); }
    void validate() const;

    // 15-joint humanoid used throughout: pelvis, neck, head, two 3-joint
    // arms, two 3-joint legs. Shape groups mirror left/right limbs except
    // for arms, giving exactly kShapeDim groups.
    static SkeletonTemplate humanoid15();
};

struct PoseParams {
    Eigen::VectorXd theta;   // 3J axis-angle components, radians
    Eigen::VectorXd beta;    // kShapeDim bone-scale coefficients
    Eigen::Vector3d trans;   // root translation, meters, camera frame
};

struct Pose3D {
    MatrixX3d joints;  // J x 3, camera-frame meters
};

struct Camera {
    double focal = 500.0;                          // pixels
    Eigen::Vector2d principal{128.0, 128.0};       // pixels
    Eigen::Vector2d image_size{256.0, 256.0};      // pixels

    static Camera default_desk() { return Camera{}; }
};

struct Keypoints2D {
    MatrixX2d points;            // J x 2, pixels
    Eigen::VectorXd confidence;  // J, in [0, 1]
};

// ---------------------------------------------------------------------------
// Core operations.
// ---------------------------------------------------------------------------

Pose3D forward_kinematics(const SkeletonTemplate& skel, const PoseParams& params);

// Pinhole projection; confidence of the result is all ones.
// Throws ProjectionDegenerate if any joint depth <= 1e-3 m.
Keypoints2D project(const Pose3D& pose, const Camera& cam);

// Root-relative mean per-joint position error, millimeters.
double mpjpe(const Pose3D& pred, const Pose3D& gt);

// MPJPE after optimal similarity (rotation/translation/uniform scale)
// alignment of pred onto gt, millimeters.
double pa_mpjpe(const Pose3D& pred, const Pose3D& gt);

// Mean per-keypoint pixel distance.
double epe_2d(const Keypoints2D& pred, const Keypoints2D& ref);

// ---------------------------------------------------------------------------
// Reverse-mode plumbing. The forward pass caches enough to pull a loss
// gradient on joint positions back to (theta, beta, trans).
// ---------------------------------------------------------------------------

struct FkWorkspace {
    MatrixX3d positions;                    // J x 3
    std::vector<Eigen::Matrix3d> local_rot; // R(theta_j)
    std::vector<Eigen::Matrix3d> cum_rot;   // cumulative rotation at joint j
    std::vector<Eigen::Vector3d> bone;      // scaled rest offset, parent frame
};

struct PoseParamGrad {
    Eigen::VectorXd theta;   // 3J
    Eigen::VectorXd beta;    // kShapeDim
    Eigen::Vector3d trans;

    static PoseParamGrad zero(int joint_count);

    void add_scaled(const PoseParamGrad& other, double factor) {
        theta += factor * other.theta;
        beta += factor * other.beta;
        trans += factor * other.trans;
    }
};

FkWorkspace fk_forward(const SkeletonTemplate& skel, const PoseParams& params);

PoseParamGrad fk_backward(const SkeletonTemplate& skel, const PoseParams& params,
                          const FkWorkspace& ws, const MatrixX3d& d_joints);

// d(loss)/d(pixels) -> d(loss)/d(joints) for the projection above.
MatrixX3d project_backward(const Pose3D& pose, const Camera& cam, const MatrixX2d& d_pixels);

// Axis-angle rotation matrix (Rodrigues), with series fallbacks near zero.
Eigen::Matrix3d rodrigues(const Eigen::Vector3d& v);

// Given adjoint A = dL/dR, returns dL/dv for R = rodrigues(v).
Eigen::Vector3d rodrigues_backward(const Eigen::Vector3d& v, const Eigen::Matrix3d& adjoint);

}  // namespace poseadapt
