#include "poseadapt/kinematics.hpp"

#include <Eigen/SVD>
#include <cmath>

namespace poseadapt {

namespace {

constexpr double kMinProjectionDepth = 1e-3;

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
    Eigen::Matrix3d m;
    m << 0.0, -v.z(), v.y(),
         v.z(), 0.0, -v.x(),
        -v.y(), v.x(), 0.0;
    return m;
}

// Extract w such that <A, skew(e_k)> = w_k.
Eigen::Vector3d skew_extract(const Eigen::Matrix3d& a) {
    return {a(2, 1) - a(1, 2), a(0, 2) - a(2, 0), a(1, 0) - a(0, 1)};
}

// Rodrigues series coefficients and their radial derivatives:
//   R = I + a*K + b*K^2,  a = sin t / t,  b = (1 - cos t) / t^2
//   c1 = a'(t)/t, c2 = b'(t)/t  (both finite at t = 0).
struct RotCoeffs {
    double a, b, c1, c2;
};

RotCoeffs rot_coeffs(double t) {
    RotCoeffs c{};
    if (t < 1e-4) {
        const double t2 = t * t;
        c.a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0;
        c.b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0;
        c.c1 = -1.0 / 3.0 + t2 / 30.0;
        c.c2 = -1.0 / 12.0 + t2 / 180.0;
    } else {
        const double s = std::sin(t);
        const double co = std::cos(t);
        c.a = s / t;
        c.b = (1.0 - co) / (t * t);
        c.c1 = (t * co - s) / (t * t * t);
        c.c2 = (t * s - 2.0 * (1.0 - co)) / (t * t * t * t);
    }
    return c;
}

void check_params(const SkeletonTemplate& skel, const PoseParams& params) {
    const int j = skel.joint_count();
    if (params.theta.size() != 3 * j)
        throw InvalidInput("PoseParams.theta has size " + std::to_string(params.theta.size()) +
                           ", expected " + std::to_string(3 * j));
    if (params.beta.size() != kShapeDim)
        throw InvalidInput("PoseParams.beta has size " + std::to_string(params.beta.size()) +
                           ", expected " + std::to_string(kShapeDim));
}

void check_same_joints(const Pose3D& a, const Pose3D& b, const char* what) {
    if (a.joints.rows() != b.joints.rows())
        throw InvalidInput(std::string(what) + ": joint counts differ");
}

}  // namespace

void SkeletonTemplate::validate() const {
    const int j = joint_count();
    if (j < 12) throw InvalidInput("skeleton must have at least 12 joints");
    if (rest_offset.rows() != j || static_cast<int>(scale_group.size()) != j)
        throw InvalidInput("skeleton field sizes disagree");
    if (parent[0] != -1) throw InvalidInput("joint 0 must be the root");
    if (rest_offset.row(0).norm() != 0.0) throw InvalidInput("root rest offset must be zero");
    for (int i = 1; i < j; ++i) {
        if (parent[i] < 0 || parent[i] >= i)
            throw InvalidInput("parents must form a tree with parent[i] < i");
        if (scale_group[i] < 0 || scale_group[i] >= kShapeDim)
            throw InvalidInput("scale_group out of range");
    }
}

SkeletonTemplate SkeletonTemplate::humanoid15() {
    // Joints: 0 pelvis, 1 neck, 2 head, 3-5 left arm, 6-8 right arm,
    // 9-11 left leg, 12-14 right leg. Camera frame: +x right, +y down,
    // +z away from the camera; the rest pose is a T-pose facing the camera.
    SkeletonTemplate s;
    s.parent = {-1, 0, 1, 1, 3, 4, 1, 6, 7, 0, 9, 10, 0, 12, 13};
    s.rest_offset.resize(15, 3);
    s.rest_offset << 0.00, 0.00, 0.00,   // pelvis
                     0.00, -0.50, 0.00,  // neck
                     0.00, -0.25, 0.00,  // head
                     0.20, 0.03, 0.00,   // L shoulder
                     0.28, 0.00, 0.00,   // L elbow
                     0.25, 0.00, 0.00,   // L wrist
                    -0.20, 0.03, 0.00,   // R shoulder
                    -0.28, 0.00, 0.00,   // R elbow
                    -0.25, 0.00, 0.00,   // R wrist
                     0.11, 0.03, 0.00,   // L hip
                     0.00, 0.42, 0.00,   // L knee
                     0.00, 0.40, 0.00,   // L ankle
                    -0.11, 0.03, 0.00,   // R hip
                     0.00, 0.42, 0.00,   // R knee
                     0.00, 0.40, 0.00;   // R ankle
    // Groups: 0 torso, 1 head, 2 clavicles, 3/4 upper arms L/R,
    // 5/6 forearms L/R, 7 hips, 8 thighs, 9 shins.
    s.scale_group = {-1, 0, 1, 2, 3, 5, 2, 4, 6, 7, 8, 9, 7, 8, 9};
    s.validate();
    return s;
}

PoseParamGrad PoseParamGrad::zero(int joint_count) {
    PoseParamGrad g;
    g.theta = Eigen::VectorXd::Zero(3 * joint_count);
    g.beta = Eigen::VectorXd::Zero(kShapeDim);
    g.trans.setZero();
    return g;
}

Eigen::Matrix3d rodrigues(const Eigen::Vector3d& v) {
    const double t = v.norm();
    const RotCoeffs c = rot_coeffs(t);
    const Eigen::Matrix3d k = skew(v);
    return Eigen::Matrix3d::Identity() + c.a * k + c.b * (k * k);
}

Eigen::Vector3d rodrigues_backward(const Eigen::Vector3d& v, const Eigen::Matrix3d& adjoint) {
    // dR/dv_k = c1*v_k*K + a*E_k + c2*v_k*K^2 + b*(E_k K + K E_k).
    // Contracting with the adjoint and using <A, E_k M + M' E_k> identities
    // collapses everything to two traces and two skew extractions.
    const double t = v.norm();
    const RotCoeffs c = rot_coeffs(t);
    const Eigen::Matrix3d k = skew(v);
    const double t1 = adjoint.cwiseProduct(k).sum();
    const double t2 = adjoint.cwiseProduct(k * k).sum();
    const Eigen::Matrix3d cross = -(adjoint * k) - (k * adjoint);
    return (c.c1 * t1 + c.c2 * t2) * v + c.a * skew_extract(adjoint) + c.b * skew_extract(cross);
}

FkWorkspace fk_forward(const SkeletonTemplate& skel, const PoseParams& params) {
    check_params(skel, params);
    const int j = skel.joint_count();
    FkWorkspace ws;
    ws.positions.resize(j, 3);
    ws.local_rot.resize(j);
    ws.cum_rot.resize(j);
    ws.bone.resize(j);
    for (int i = 0; i < j; ++i) {
        ws.local_rot[i] = rodrigues(params.theta.segment<3>(3 * i));
        if (i == 0) {
            ws.cum_rot[0] = ws.local_rot[0];
            ws.bone[0].setZero();
            ws.positions.row(0) = params.trans.transpose();
        } else {
            const int p = skel.parent[i];
            const double scale = params.beta(skel.scale_group[i]);
            ws.bone[i] = scale * skel.rest_offset.row(i).transpose();
            ws.cum_rot[i] = ws.cum_rot[p] * ws.local_rot[i];
            ws.positions.row(i) =
                ws.positions.row(p) + (ws.cum_rot[p] * ws.bone[i]).transpose();
        }
    }
    return ws;
}

Pose3D forward_kinematics(const SkeletonTemplate& skel, const PoseParams& params) {
    return Pose3D{fk_forward(skel, params).positions};
}

PoseParamGrad fk_backward(const SkeletonTemplate& skel, const PoseParams& params,
                          const FkWorkspace& ws, const MatrixX3d& d_joints) {
    check_params(skel, params);
    const int j = skel.joint_count();
    if (d_joints.rows() != j) throw InvalidInput("fk_backward: gradient shape mismatch");

    PoseParamGrad g = PoseParamGrad::zero(j);
    // Position adjoints accumulate subtree sums as we sweep leaves-to-root;
    // rotation adjoints collect both the child-bone and child-rotation terms.
    std::vector<Eigen::Vector3d> d_pos(j);
    std::vector<Eigen::Matrix3d> d_rot(j, Eigen::Matrix3d::Zero());
    for (int i = 0; i < j; ++i) d_pos[i] = d_joints.row(i).transpose();

    for (int i = j - 1; i >= 1; --i) {
        const int p = skel.parent[i];
        d_pos[p] += d_pos[i];
        d_rot[p] += d_pos[i] * ws.bone[i].transpose();
        d_rot[p] += d_rot[i] * ws.local_rot[i].transpose();

        const Eigen::Vector3d d_bone = ws.cum_rot[p].transpose() * d_pos[i];
        g.beta(skel.scale_group[i]) += skel.rest_offset.row(i).dot(d_bone);

        const Eigen::Matrix3d d_local = ws.cum_rot[p].transpose() * d_rot[i];
        g.theta.segment<3>(3 * i) =
            rodrigues_backward(params.theta.segment<3>(3 * i), d_local);
    }
    g.trans = d_pos[0];
    g.theta.segment<3>(0) = rodrigues_backward(params.theta.segment<3>(0), d_rot[0]);
    return g;
}

Keypoints2D project(const Pose3D& pose, const Camera& cam) {
    const int j = static_cast<int>(pose.joints.rows());
    Keypoints2D out;
    out.points.resize(j, 2);
    out.confidence = Eigen::VectorXd::Ones(j);
    for (int i = 0; i < j; ++i) {
        const double z = pose.joints(i, 2);
        if (!(z > kMinProjectionDepth))
            throw ProjectionDegenerate("joint " + std::to_string(i) + " depth " +
                                       std::to_string(z) + " <= " +
                                       std::to_string(kMinProjectionDepth));
        out.points(i, 0) = cam.focal * pose.joints(i, 0) / z + cam.principal.x();
        out.points(i, 1) = cam.focal * pose.joints(i, 1) / z + cam.principal.y();
    }
    return out;
}

MatrixX3d project_backward(const Pose3D& pose, const Camera& cam, const MatrixX2d& d_pixels) {
    const int j = static_cast<int>(pose.joints.rows());
    if (d_pixels.rows() != j) throw InvalidInput("project_backward: shape mismatch");
    MatrixX3d d_joints(j, 3);
    for (int i = 0; i < j; ++i) {
        const double x = pose.joints(i, 0);
        const double y = pose.joints(i, 1);
        const double z = pose.joints(i, 2);
        const double du = d_pixels(i, 0);
        const double dv = d_pixels(i, 1);
        d_joints(i, 0) = cam.focal / z * du;
        d_joints(i, 1) = cam.focal / z * dv;
        d_joints(i, 2) = -cam.focal * (x * du + y * dv) / (z * z);
    }
    return d_joints;
}

double mpjpe(const Pose3D& pred, const Pose3D& gt) {
    check_same_joints(pred, gt, "mpjpe");
    const int j = static_cast<int>(pred.joints.rows());
    const Eigen::RowVector3d pr = pred.joints.row(0);
    const Eigen::RowVector3d gr = gt.joints.row(0);
    double sum = 0.0;
    for (int i = 0; i < j; ++i)
        sum += ((pred.joints.row(i) - pr) - (gt.joints.row(i) - gr)).norm();
    return sum / j * 1000.0;
}

double pa_mpjpe(const Pose3D& pred, const Pose3D& gt) {
    check_same_joints(pred, gt, "pa_mpjpe");
    const int j = static_cast<int>(pred.joints.rows());
    const Eigen::RowVector3d mu_p = pred.joints.colwise().mean();
    const Eigen::RowVector3d mu_g = gt.joints.colwise().mean();
    const MatrixX3d pc = pred.joints.rowwise() - mu_p;
    const MatrixX3d gc = gt.joints.rowwise() - mu_g;

    const double var_p = pc.squaredNorm() / j;
    const double var_g = gc.squaredNorm() / j;
    if (var_g < 1e-18 || var_p < 1e-18)
        throw AlignmentDegenerate("pa_mpjpe: zero-variance point set");

    // Umeyama: least-squares similarity transform mapping pred onto gt,
    // reflection disallowed.
    const Eigen::Matrix3d cov = (gc.transpose() * pc) / j;
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Vector3d d = Eigen::Vector3d::Ones();
    if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) d(2) = -1.0;
    const Eigen::Matrix3d rot =
        svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();
    const double scale = svd.singularValues().dot(d) / var_p;

    double sum = 0.0;
    for (int i = 0; i < j; ++i) {
        const Eigen::Vector3d aligned =
            scale * (rot * pc.row(i).transpose()) + mu_g.transpose();
        sum += (aligned - gt.joints.row(i).transpose()).norm();
    }
    return sum / j * 1000.0;
}

double epe_2d(const Keypoints2D& pred, const Keypoints2D& ref) {
    if (pred.points.rows() != ref.points.rows())
        throw InvalidInput("epe_2d: keypoint counts differ");
    const int j = static_cast<int>(pred.points.rows());
    double sum = 0.0;
    for (int i = 0; i < j; ++i) sum += (pred.points.row(i) - ref.points.row(i)).norm();
    return sum / j;
}

}  // namespace poseadapt
