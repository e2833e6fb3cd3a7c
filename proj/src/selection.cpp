#include "poseadapt/selection.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

namespace poseadapt {

bool is_confident(const Eigen::VectorXd& confidence, const ConfidenceRule& rule) {
    int count = 0;
    for (int i = 0; i < confidence.size(); ++i)
        if (confidence(i) > rule.keypoint_threshold) ++count;
    return count > rule.min_confident_count;
}

double sampling_weight(const Eigen::VectorXd& confidence) {
    if (confidence.size() == 0) throw InvalidInput("sampling_weight: empty confidence vector");
    return confidence.mean();
}

Eigen::MatrixXd normalize_poses_for_clustering(const std::vector<MatrixX3d>& poses) {
    if (poses.empty()) throw InvalidInput("normalize_poses_for_clustering: no poses");
    const int j = static_cast<int>(poses[0].rows());
    Eigen::MatrixXd rows(poses.size(), 3 * j);
    for (std::size_t i = 0; i < poses.size(); ++i) {
        if (poses[i].rows() != j) throw InvalidInput("pose joint counts differ");
        MatrixX3d centered = poses[i].rowwise() - poses[i].row(0);
        Eigen::Map<const Eigen::VectorXd> flat(centered.data(), 3 * j);
        const double norm = flat.norm();
        if (norm < 1e-12)
            throw InvalidInput("cannot normalize an all-zero pose vector (row " +
                               std::to_string(i) + ")");
        rows.row(i) = flat.transpose() / norm;
    }
    return rows;
}

ClusterModel spherical_kmeans(const Eigen::MatrixXd& unit_rows, int k, std::uint64_t seed) {
    const int n = static_cast<int>(unit_rows.rows());
    if (n == 0) throw InvalidInput("spherical_kmeans: empty input");
    if (k < 1) throw InvalidInput("spherical_kmeans: k must be >= 1");
    for (int i = 0; i < n; ++i)
        if (std::abs(unit_rows.row(i).norm() - 1.0) > 1e-6)
            throw InvalidInput("spherical_kmeans: row " + std::to_string(i) + " is not unit norm");
    k = std::min(k, n);

    ClusterModel model;
    model.centroids.resize(k, unit_rows.cols());
    model.assignment.assign(n, 0);

    // Seed centroids from k distinct input rows.
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(seed, 0x5C3));
    rng.shuffle(order);
    for (int c = 0; c < k; ++c) model.centroids.row(c) = unit_rows.row(order[c]);

    constexpr int kMaxIters = 100;
    for (int iter = 0; iter < kMaxIters; ++iter) {
        // Assign to the highest-cosine centroid.
        bool changed = iter == 0;
        Eigen::MatrixXd sims = unit_rows * model.centroids.transpose();  // n x k
        for (int i = 0; i < n; ++i) {
            int best = 0;
            sims.row(i).maxCoeff(&best);
            if (best != model.assignment[i]) {
                model.assignment[i] = best;
                changed = true;
            }
        }

        // Recompute centroids as normalized member means; reseed empty
        // clusters from the point farthest from its current centroid.
        std::vector<int> sizes(k, 0);
        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, unit_rows.cols());
        for (int i = 0; i < n; ++i) {
            sums.row(model.assignment[i]) += unit_rows.row(i);
            ++sizes[model.assignment[i]];
        }
        for (int c = 0; c < k; ++c) {
            if (sizes[c] == 0) {
                int farthest = 0;
                double worst = 2.0;
                for (int i = 0; i < n; ++i) {
                    const double s = unit_rows.row(i).dot(model.centroids.row(model.assignment[i]));
                    if (s < worst) {
                        worst = s;
                        farthest = i;
                    }
                }
                model.centroids.row(c) = unit_rows.row(farthest);
                continue;
            }
            const double norm = sums.row(c).norm();
            if (norm < 1e-12) {
                // Members cancel exactly; keep the previous centroid.
                continue;
            }
            model.centroids.row(c) = sums.row(c) / norm;
        }

        double objective = 0.0;
        for (int i = 0; i < n; ++i)
            objective += unit_rows.row(i).dot(model.centroids.row(model.assignment[i]));
        model.objective_history.push_back(objective);
        model.iterations = iter + 1;
        if (!changed) break;
    }
    return model;
}

std::vector<int> allocate_quota(const std::vector<int>& cluster_sizes, int quota) {
    for (int s : cluster_sizes)
        if (s < 0) throw InvalidInput("allocate_quota: negative cluster size");
    if (quota < 0) throw InvalidInput("allocate_quota: negative quota");
    const int k = static_cast<int>(cluster_sizes.size());
    std::vector<int> counts(k, 0);
    const long total = std::accumulate(cluster_sizes.begin(), cluster_sizes.end(), 0L);
    if (total == 0 || quota == 0) return counts;
    const int target = static_cast<int>(std::min<long>(quota, total));

    std::vector<double> remainder(k, 0.0);
    int assigned = 0;
    for (int i = 0; i < k; ++i) {
        const double ideal = static_cast<double>(cluster_sizes[i]) * target / total;
        counts[i] = static_cast<int>(std::floor(ideal));
        remainder[i] = ideal - counts[i];
        assigned += counts[i];
    }

    std::vector<int> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (remainder[a] != remainder[b]) return remainder[a] > remainder[b];
        if (cluster_sizes[a] != cluster_sizes[b]) return cluster_sizes[a] > cluster_sizes[b];
        return a < b;
    });
    // Bump by largest remainder; wrap in case caps force a second pass.
    for (std::size_t pos = 0; assigned < target; pos = (pos + 1) % order.size()) {
        const int i = order[pos];
        if (counts[i] < cluster_sizes[i]) {
            ++counts[i];
            ++assigned;
        }
    }
    return counts;
}

namespace {

SampleRecord make_record(const Frame& frame, const MatrixX3d& prediction,
                         const ConfidenceRule& rule) {
    SampleRecord r;
    r.features = frame.features;
    r.est_2d = frame.est_2d;
    r.pseudo_3d = prediction;
    r.weight = sampling_weight(frame.est_2d.confidence);
    r.confident = is_confident(frame.est_2d.confidence, rule);
    r.video_id = frame.video_id;
    r.frame_id = frame.frame_id;
    return r;
}

// Top-weight members per cluster, quota-limited.
std::vector<int> pick_clustered(const std::vector<int>& subset, const std::vector<double>& weight,
                                const std::vector<MatrixX3d>& predictions, int want, int n_clusters,
                                std::uint64_t seed) {
    std::vector<int> picked;
    if (subset.empty() || want <= 0) return picked;

    std::vector<MatrixX3d> poses;
    poses.reserve(subset.size());
    for (int idx : subset) poses.push_back(predictions[idx]);
    const Eigen::MatrixXd rows = normalize_poses_for_clustering(poses);
    const int k = std::min<int>(n_clusters, static_cast<int>(subset.size()));
    const ClusterModel model = spherical_kmeans(rows, k, seed);

    std::vector<std::vector<int>> members(k);
    for (std::size_t i = 0; i < subset.size(); ++i)
        members[model.assignment[i]].push_back(subset[i]);

    std::vector<int> sizes(k);
    for (int c = 0; c < k; ++c) sizes[c] = static_cast<int>(members[c].size());
    const std::vector<int> quota = allocate_quota(sizes, want);

    for (int c = 0; c < k; ++c) {
        std::sort(members[c].begin(), members[c].end(), [&](int a, int b) {
            if (weight[a] != weight[b]) return weight[a] > weight[b];
            return a < b;
        });
        for (int i = 0; i < quota[c]; ++i) picked.push_back(members[c][i]);
    }
    return picked;
}

std::vector<int> pick_top_weight(std::vector<int> subset, const std::vector<double>& weight,
                                 int want) {
    std::sort(subset.begin(), subset.end(), [&](int a, int b) {
        if (weight[a] != weight[b]) return weight[a] > weight[b];
        return a < b;
    });
    if (static_cast<int>(subset.size()) > want) subset.resize(want);
    return subset;
}

}  // namespace

std::vector<SampleRecord> select_representatives(const Video& frames,
                                                 const std::vector<MatrixX3d>& predictions,
                                                 const ConfidenceRule& rule, int n_per_video,
                                                 int n_clusters, std::uint64_t seed) {
    return select_with_strategy(frames, predictions, rule, n_per_video, n_clusters,
                                SelectionStrategy::balanced_clustered, seed);
}

std::vector<SampleRecord> select_with_strategy(const Video& frames,
                                               const std::vector<MatrixX3d>& predictions,
                                               const ConfidenceRule& rule, int n_per_video,
                                               int n_clusters, SelectionStrategy strategy,
                                               std::uint64_t seed) {
    if (frames.size() != predictions.size())
        throw InvalidInput("select_representatives: predictions not aligned with frames");
    const int n = static_cast<int>(frames.size());
    std::vector<SampleRecord> out;
    if (n == 0 || n_per_video <= 0) return out;
    const int want = std::min(n_per_video, n);

    std::vector<double> weight(n);
    std::vector<int> conf_idx, nonconf_idx, all_idx(n);
    std::iota(all_idx.begin(), all_idx.end(), 0);
    for (int i = 0; i < n; ++i) {
        weight[i] = sampling_weight(frames[i].est_2d.confidence);
        if (is_confident(frames[i].est_2d.confidence, rule))
            conf_idx.push_back(i);
        else
            nonconf_idx.push_back(i);
    }

    std::vector<int> picked;
    switch (strategy) {
        case SelectionStrategy::uniform: {
            Rng rng(mix_seed(seed, 0x5E1));
            std::vector<int> idx = all_idx;
            rng.shuffle(idx);
            idx.resize(want);
            picked = idx;
            break;
        }
        case SelectionStrategy::weighted:
            picked = pick_top_weight(all_idx, weight, want);
            break;
        case SelectionStrategy::weighted_stochastic: {
            Rng rng(mix_seed(seed, 0x5E2));
            std::vector<int> pool = all_idx;
            std::vector<double> w(n);
            for (int i = 0; i < n; ++i) w[i] = std::max(weight[i], 1e-9);
            while (static_cast<int>(picked.size()) < want && !pool.empty()) {
                double total = 0.0;
                for (int i : pool) total += w[i];
                double r = rng.unit() * total;
                std::size_t chosen = pool.size() - 1;
                for (std::size_t p = 0; p < pool.size(); ++p) {
                    r -= w[pool[p]];
                    if (r <= 0.0) {
                        chosen = p;
                        break;
                    }
                }
                picked.push_back(pool[chosen]);
                pool.erase(pool.begin() + static_cast<long>(chosen));
            }
            break;
        }
        case SelectionStrategy::balanced:
        case SelectionStrategy::balanced_clustered: {
            // Half the budget per subset; shortfall backfills the other side.
            int want_conf = want / 2;
            int want_nonconf = want - want_conf;
            const int avail_conf = static_cast<int>(conf_idx.size());
            const int avail_nonconf = static_cast<int>(nonconf_idx.size());
            if (avail_conf < want_conf) {
                want_nonconf += want_conf - avail_conf;
                want_conf = avail_conf;
            }
            if (avail_nonconf < want_nonconf) {
                want_conf = std::min(avail_conf, want_conf + want_nonconf - avail_nonconf);
                want_nonconf = avail_nonconf;
            }
            if (strategy == SelectionStrategy::balanced) {
                auto a = pick_top_weight(conf_idx, weight, want_conf);
                auto b = pick_top_weight(nonconf_idx, weight, want_nonconf);
                picked = a;
                picked.insert(picked.end(), b.begin(), b.end());
            } else {
                auto a = pick_clustered(conf_idx, weight, predictions, want_conf, n_clusters,
                                        mix_seed(seed, 0xC0F));
                auto b = pick_clustered(nonconf_idx, weight, predictions, want_nonconf, n_clusters,
                                        mix_seed(seed, 0xA0C));
                picked = a;
                picked.insert(picked.end(), b.begin(), b.end());
            }
            break;
        }
    }

    std::sort(picked.begin(), picked.end());
    out.reserve(picked.size());
    for (int idx : picked) out.push_back(make_record(frames[idx], predictions[idx], rule));
    return out;
}

std::vector<std::size_t> bank_draw(MemoryBank& bank, int n, std::uint64_t seed) {
    if (bank.empty()) throw InvalidInput("bank_draw: bank is empty");
    if (n < 1) throw InvalidInput("bank_draw: n must be >= 1");

    std::vector<std::size_t> drawn;
    if (static_cast<std::size_t>(n) >= bank.size()) {
        drawn.resize(bank.size());
        std::iota(drawn.begin(), drawn.end(), std::size_t{0});
        for (std::size_t i : drawn) bank.records[i].times_chosen += 1;
        return drawn;
    }

    // Weights are fixed at call start; removal implements without-replacement.
    Rng rng(mix_seed(seed, 0xBDA));
    std::vector<std::size_t> pool(bank.size());
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    std::vector<double> w(bank.size());
    for (std::size_t i = 0; i < bank.size(); ++i)
        w[i] = 1.0 / (1.0 + bank.records[i].times_chosen);

    drawn.reserve(n);
    for (int d = 0; d < n; ++d) {
        double total = 0.0;
        for (std::size_t i : pool) total += w[i];
        double r = rng.unit() * total;
        std::size_t chosen_pos = pool.size() - 1;
        for (std::size_t p = 0; p < pool.size(); ++p) {
            r -= w[pool[p]];
            if (r <= 0.0) {
                chosen_pos = p;
                break;
            }
        }
        drawn.push_back(pool[chosen_pos]);
        pool.erase(pool.begin() + static_cast<long>(chosen_pos));
    }
    for (std::size_t i : drawn) bank.records[i].times_chosen += 1;
    return drawn;
}

void dump_bank(const std::string& path, const MemoryBank& bank) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw UsageError("cannot open bank dump for writing: " + path);
    out << "poseadapt-bank v1 records=" << bank.size() << "\n";
    for (const SampleRecord& r : bank.records) {
        const int j = static_cast<int>(r.est_2d.points.rows());
        out << "v=" << r.video_id << " f=" << r.frame_id << " W=" << format_double(r.weight)
            << " confident=" << (r.confident ? 1 : 0) << " times_chosen=" << r.times_chosen;
        out << " feat=";
        for (int i = 0; i < r.features.size(); ++i) {
            if (i) out << ',';
            out << format_double(r.features(i));
        }
        out << " est2d=";
        for (int k = 0; k < j; ++k) {
            if (k) out << ',';
            out << format_double(r.est_2d.points(k, 0)) << ',' << format_double(r.est_2d.points(k, 1));
        }
        out << " conf=";
        for (int k = 0; k < j; ++k) {
            if (k) out << ',';
            out << format_double(r.est_2d.confidence(k));
        }
        out << " pseudo3d=";
        for (int k = 0; k < static_cast<int>(r.pseudo_3d.rows()); ++k) {
            if (k) out << ',';
            out << format_double(r.pseudo_3d(k, 0)) << ',' << format_double(r.pseudo_3d(k, 1))
                << ',' << format_double(r.pseudo_3d(k, 2));
        }
        out << "\n";
    }
}

}  // namespace poseadapt
