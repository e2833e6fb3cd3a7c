#include "oracles.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <numeric>

namespace oracles {

using namespace poseadapt;

namespace {

Eigen::Matrix3d axis_angle_matrix(const Eigen::Vector3d& v) {
    const double angle = v.norm();
    if (angle < 1e-14) return Eigen::Matrix3d::Identity();
    return Eigen::AngleAxisd(angle, v / angle).toRotationMatrix();
}

// Positions of joint i and recursively of its subtree.
void fk_recurse(const SkeletonTemplate& skel, const PoseParams& params, int joint,
                const Eigen::Vector3d& parent_pos, const Eigen::Matrix3d& parent_rot,
                MatrixX3d& out) {
    Eigen::Vector3d pos;
    Eigen::Matrix3d rot;
    if (joint == 0) {
        pos = params.trans;
        rot = axis_angle_matrix(params.theta.segment<3>(0));
    } else {
        const double scale = params.beta(skel.scale_group[joint]);
        pos = parent_pos + parent_rot * (scale * skel.rest_offset.row(joint).transpose());
        rot = parent_rot * axis_angle_matrix(params.theta.segment<3>(3 * joint));
    }
    out.row(joint) = pos.transpose();
    for (int child = joint + 1; child < skel.joint_count(); ++child)
        if (skel.parent[child] == joint) fk_recurse(skel, params, child, pos, rot, out);
}

// Optimal scale/translation for a fixed rotation, then the squared objective.
double objective_for_rotation(const MatrixX3d& pc, const MatrixX3d& gc, double var_p,
                              const Eigen::Matrix3d& rot) {
    double dot = 0.0;
    for (int i = 0; i < pc.rows(); ++i) dot += gc.row(i).dot((rot * pc.row(i).transpose()));
    const double scale = std::max(0.0, dot / (var_p * pc.rows()));
    double obj = 0.0;
    for (int i = 0; i < pc.rows(); ++i)
        obj += (scale * (rot * pc.row(i).transpose()) - gc.row(i).transpose()).squaredNorm();
    return obj;
}

Eigen::Matrix3d euler_zyz(double a, double b, double c) {
    return (Eigen::AngleAxisd(a, Eigen::Vector3d::UnitZ()) *
            Eigen::AngleAxisd(b, Eigen::Vector3d::UnitY()) *
            Eigen::AngleAxisd(c, Eigen::Vector3d::UnitZ()))
        .toRotationMatrix();
}

}  // namespace

MatrixX3d naive_fk(const SkeletonTemplate& skel, const PoseParams& params) {
    MatrixX3d out(skel.joint_count(), 3);
    fk_recurse(skel, params, 0, Eigen::Vector3d::Zero(), Eigen::Matrix3d::Identity(), out);
    return out;
}

GridAlignResult grid_procrustes(const MatrixX3d& pred, const MatrixX3d& gt) {
    const int n = static_cast<int>(pred.rows());
    const Eigen::RowVector3d mu_p = pred.colwise().mean();
    const Eigen::RowVector3d mu_g = gt.colwise().mean();
    const MatrixX3d pc = pred.rowwise() - mu_p;
    const MatrixX3d gc = gt.rowwise() - mu_g;
    const double var_p = pc.squaredNorm() / n;

    struct Candidate {
        double obj, a, b, c;
    };

    // Coarse pass over ZYZ Euler angles.
    const int na = 24, nb = 12;
    std::vector<Candidate> coarse;
    coarse.reserve(na * (nb + 1) * na);
    for (int ia = 0; ia < na; ++ia)
        for (int ib = 0; ib <= nb; ++ib)
            for (int ic = 0; ic < na; ++ic) {
                const double a = 2.0 * M_PI * ia / na;
                const double b = M_PI * ib / nb;
                const double c = 2.0 * M_PI * ic / na;
                coarse.push_back({objective_for_rotation(pc, gc, var_p, euler_zyz(a, b, c)), a, b, c});
            }
    std::partial_sort(coarse.begin(), coarse.begin() + 16, coarse.end(),
                      [](const Candidate& x, const Candidate& y) { return x.obj < y.obj; });

    // Shrinking local refinement from each of the best coarse cells; the
    // global basin is not always the single best coarse sample.
    Candidate best = coarse[0];
    for (int seed = 0; seed < 16; ++seed) {
        Candidate cur = coarse[seed];
        double span = 2.0 * M_PI / na;
        for (int level = 0; level < 5; ++level) {
            Candidate local = cur;
            for (int ia = -3; ia <= 3; ++ia)
                for (int ib = -3; ib <= 3; ++ib)
                    for (int ic = -3; ic <= 3; ++ic) {
                        const double a = cur.a + span * ia / 3.0;
                        const double b = cur.b + span * ib / 3.0;
                        const double c = cur.c + span * ic / 3.0;
                        const double obj = objective_for_rotation(pc, gc, var_p, euler_zyz(a, b, c));
                        if (obj < local.obj) local = {obj, a, b, c};
                    }
            cur = local;
            span /= 3.0;
        }
        if (cur.obj < best.obj) best = cur;
    }

    GridAlignResult res;
    res.squared_objective = best.obj;
    const Eigen::Matrix3d rot = euler_zyz(best.a, best.b, best.c);
    double dot = 0.0;
    for (int i = 0; i < n; ++i) dot += gc.row(i).dot(rot * pc.row(i).transpose());
    const double scale = std::max(0.0, dot / (var_p * n));
    double sum = 0.0;
    for (int i = 0; i < n; ++i)
        sum += (scale * (rot * pc.row(i).transpose()) - gc.row(i).transpose()).norm();
    res.mean_distance_mm = sum / n * 1000.0;
    return res;
}

ParamGradients finite_difference_gradient(
    const RegressorState& state, const Eigen::VectorXd& features,
    const std::function<double(const RegressorState&)>& loss_value, double step) {
    ParamGradients g = ParamGradients::zero_like(state);
    RegressorState work = state;
    for (int l = 0; l < state.layer_count(); ++l) {
        for (int idx = 0; idx < state.weights[l].size(); ++idx) {
            const double saved = work.weights[l].data()[idx];
            work.weights[l].data()[idx] = saved + step;
            const double up = loss_value(work);
            work.weights[l].data()[idx] = saved - step;
            const double down = loss_value(work);
            work.weights[l].data()[idx] = saved;
            g.d_weights[l].data()[idx] = (up - down) / (2.0 * step);
        }
        for (int idx = 0; idx < state.biases[l].size(); ++idx) {
            const double saved = work.biases[l](idx);
            work.biases[l](idx) = saved + step;
            const double up = loss_value(work);
            work.biases[l](idx) = saved - step;
            const double down = loss_value(work);
            work.biases[l](idx) = saved;
            g.d_biases[l](idx) = (up - down) / (2.0 * step);
        }
    }
    (void)features;
    return g;
}

double max_relative_error(const ParamGradients& a, const ParamGradients& b, double denom_floor) {
    double worst = 0.0;
    for (std::size_t l = 0; l < a.d_weights.size(); ++l) {
        for (int idx = 0; idx < a.d_weights[l].size(); ++idx) {
            const double x = a.d_weights[l].data()[idx];
            const double y = b.d_weights[l].data()[idx];
            worst = std::max(worst,
                             std::abs(x - y) / std::max({denom_floor, std::abs(x), std::abs(y)}));
        }
        for (int idx = 0; idx < a.d_biases[l].size(); ++idx) {
            const double x = a.d_biases[l](idx);
            const double y = b.d_biases[l](idx);
            worst = std::max(worst,
                             std::abs(x - y) / std::max({denom_floor, std::abs(x), std::abs(y)}));
        }
    }
    return worst;
}

namespace {

void enumerate_allocations(const std::vector<int>& sizes, int target, std::size_t pos,
                           std::vector<int>& current, int used,
                           const std::function<void(const std::vector<int>&)>& emit) {
    if (pos == sizes.size()) {
        if (used == target) emit(current);
        return;
    }
    const int remaining_cap =
        std::accumulate(sizes.begin() + pos, sizes.end(), 0);
    if (used + remaining_cap < target) return;
    for (int take = 0; take <= std::min(sizes[pos], target - used); ++take) {
        current[pos] = take;
        enumerate_allocations(sizes, target, pos + 1, current, used + take, emit);
    }
    current[pos] = 0;
}

}  // namespace

std::vector<std::vector<int>> quota_minimizers(const std::vector<int>& sizes, int quota) {
    const long total = std::accumulate(sizes.begin(), sizes.end(), 0L);
    const int target = static_cast<int>(std::min<long>(quota, total));
    std::vector<double> ideal(sizes.size(), 0.0);
    if (total > 0)
        for (std::size_t i = 0; i < sizes.size(); ++i)
            ideal[i] = static_cast<double>(sizes[i]) * target / total;

    double best = std::numeric_limits<double>::infinity();
    std::vector<std::vector<int>> minimizers;
    std::vector<int> current(sizes.size(), 0);
    enumerate_allocations(sizes, target, 0, current, 0, [&](const std::vector<int>& alloc) {
        double dev = 0.0;
        for (std::size_t i = 0; i < alloc.size(); ++i) dev += std::abs(alloc[i] - ideal[i]);
        if (dev < best - 1e-12) {
            best = dev;
            minimizers.assign(1, alloc);
        } else if (dev < best + 1e-12) {
            minimizers.push_back(alloc);
        }
    });
    if (minimizers.empty()) minimizers.push_back(std::vector<int>(sizes.size(), 0));
    return minimizers;
}

std::vector<int> best_two_partition(const Eigen::MatrixXd& unit_rows) {
    const int n = static_cast<int>(unit_rows.rows());
    double best = -std::numeric_limits<double>::infinity();
    std::vector<int> best_assign(n, 0);
    for (unsigned long pattern = 1; pattern + 1 < (1ul << n); ++pattern) {
        Eigen::VectorXd sum0 = Eigen::VectorXd::Zero(unit_rows.cols());
        Eigen::VectorXd sum1 = Eigen::VectorXd::Zero(unit_rows.cols());
        for (int i = 0; i < n; ++i)
            ((pattern >> i) & 1 ? sum1 : sum0) += unit_rows.row(i).transpose();
        // Sum of cosines to a normalized mean equals the mean-sum's norm.
        const double obj = sum0.norm() + sum1.norm();
        if (obj > best) {
            best = obj;
            for (int i = 0; i < n; ++i) best_assign[i] = (pattern >> i) & 1;
        }
    }
    return best_assign;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    const std::size_t n = a.size();
    const auto ranks = [n](const std::vector<double>& v) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
            return v[x] < v[y];
        });
        std::vector<double> r(n);
        std::size_t i = 0;
        while (i < n) {
            std::size_t jend = i;
            while (jend + 1 < n && v[order[jend + 1]] == v[order[i]]) ++jend;
            const double avg = (static_cast<double>(i) + jend) / 2.0 + 1.0;
            for (std::size_t k = i; k <= jend; ++k) r[order[k]] = avg;
            i = jend + 1;
        }
        return r;
    };
    const std::vector<double> ra = ranks(a);
    const std::vector<double> rb = ranks(b);
    const double mean = (n + 1) / 2.0;
    double num = 0.0, da = 0.0, db = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        num += (ra[i] - mean) * (rb[i] - mean);
        da += (ra[i] - mean) * (ra[i] - mean);
        db += (rb[i] - mean) * (rb[i] - mean);
    }
    return num / std::sqrt(da * db);
}

}  // namespace oracles
