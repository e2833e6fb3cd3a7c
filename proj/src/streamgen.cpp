#include "poseadapt/streamgen.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

namespace poseadapt {

namespace {

constexpr int kMinEventKeypoints = 5;

double clamp(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }

// Draw a theta vector component-wise uniform around the given means.
Eigen::VectorXd draw_angles(const Eigen::VectorXd& mean, double range, Rng& rng) {
    Eigen::VectorXd v(mean.size());
    for (int i = 0; i < v.size(); ++i) v(i) = mean(i) + rng.uniform(-range, range);
    return v;
}

Eigen::VectorXd target_angle_means(int joint_count, const StreamConfig& cfg) {
    Eigen::VectorXd mean(3 * joint_count);
    for (int i = 0; i < mean.size(); ++i)
        mean(i) = cfg.target_mean_shift * ((i % 2 == 0) ? 1.0 : -1.0);
    return mean;
}

void add_feature_perturbation(Eigen::VectorXd& features, const std::vector<bool>& visible,
                              double noise, const Eigen::VectorXd* bias, Rng& rng) {
    const int j = static_cast<int>(visible.size());
    for (int k = 0; k < j; ++k) {
        if (!visible[k]) continue;
        for (int c = 0; c < 2; ++c) {
            double v = features(3 * k + c) + rng.normal(0.0, noise);
            if (bias) v += (*bias)(3 * k + c);
            features(3 * k + c) = v;
        }
    }
}

std::string join_doubles(const double* p, int n) {
    std::string s;
    for (int i = 0; i < n; ++i) {
        if (i) s += ',';
        s += format_double(p[i]);
    }
    return s;
}

std::vector<double> split_doubles(const std::string& s, std::size_t record) {
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos < s.size()) {
        std::size_t next = s.find(',', pos);
        if (next == std::string::npos) next = s.size();
        const std::string tok = s.substr(pos, next - pos);
        char* end = nullptr;
        const double v = std::strtod(tok.c_str(), &end);
        if (end == tok.c_str() || *end != '\0')
            throw ParseError("bad numeric field '" + tok + "'", record);
        out.push_back(v);
        pos = next + 1;
    }
    return out;
}

// "key=value" field with a mandatory label.
std::string expect_field(std::istringstream& in, const std::string& key, std::size_t record) {
    std::string tok;
    if (!(in >> tok)) throw ParseError("missing field '" + key + "'", record);
    const std::string prefix = key + "=";
    if (tok.rfind(prefix, 0) != 0)
        throw ParseError("expected field '" + key + "', got '" + tok + "'", record);
    return tok.substr(prefix.size());
}

}  // namespace

void StreamConfig::validate() const {
    if (video_count < 1) throw InvalidInput("video_count must be >= 1");
    if (frames_per_video < 2) throw InvalidInput("frames_per_video must be >= 2");
    if (source_sample_count < 1) throw InvalidInput("source_sample_count must be >= 1");
    if (event_rate < 0.0 || event_rate > 1.0) throw InvalidInput("event_rate must be in [0,1]");
    if (noise_sigma_base < 0.0 || feature_noise < 0.0)
        throw InvalidInput("noise magnitudes must be >= 0");
    if (event_noise_multiplier < 1.0) throw InvalidInput("event_noise_multiplier must be >= 1");
    if (conf_scale <= 0.0) throw InvalidInput("conf_scale must be positive");
    if (conf_jitter < 0.0 || conf_jitter > 0.5) throw InvalidInput("conf_jitter must be in [0,0.5]");
}

int feature_dim(const SkeletonTemplate& skel) { return 3 * skel.joint_count(); }

Eigen::VectorXd encode_features(const MatrixX2d& points, const std::vector<bool>& visible,
                                const Camera& cam) {
    const int j = static_cast<int>(points.rows());
    if (static_cast<int>(visible.size()) != j)
        throw InvalidInput("encode_features: visibility size mismatch");
    Eigen::VectorXd f = Eigen::VectorXd::Zero(3 * j);
    for (int k = 0; k < j; ++k) {
        if (!visible[k]) continue;
        f(3 * k + 0) = (points(k, 0) - cam.principal.x()) / (cam.image_size.x() / 2.0);
        f(3 * k + 1) = (points(k, 1) - cam.principal.y()) / (cam.image_size.y() / 2.0);
        f(3 * k + 2) = 1.0;
    }
    return f;
}

void decode_features(const Eigen::VectorXd& features, const Camera& cam, MatrixX2d& points,
                     std::vector<bool>& visible) {
    const int j = static_cast<int>(features.size()) / 3;
    points.resize(j, 2);
    visible.assign(j, false);
    for (int k = 0; k < j; ++k) {
        points(k, 0) = features(3 * k + 0) * (cam.image_size.x() / 2.0) + cam.principal.x();
        points(k, 1) = features(3 * k + 1) * (cam.image_size.y() / 2.0) + cam.principal.y();
        visible[k] = features(3 * k + 2) > 0.5;
    }
}

std::vector<SourceSample> generate_source(const SkeletonTemplate& skel, const StreamConfig& cfg) {
    cfg.validate();
    const int j = skel.joint_count();
    const Camera cam = Camera::default_desk();
    Rng rng(mix_seed(cfg.seed, 0x50C));
    const Eigen::VectorXd zero_mean = Eigen::VectorXd::Zero(3 * j);
    const std::vector<bool> all_visible(j, true);

    std::vector<SourceSample> out;
    out.reserve(cfg.source_sample_count);
    for (int i = 0; i < cfg.source_sample_count; ++i) {
        SourceSample s;
        s.params.theta = draw_angles(zero_mean, cfg.source_angle_range, rng);
        s.params.beta.resize(kShapeDim);
        for (int k = 0; k < kShapeDim; ++k)
            s.params.beta(k) = std::exp2(rng.uniform(-0.3, 0.3));
        s.params.trans = {rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(4.5, 6.0)};
        const Keypoints2D gt2d = project(forward_kinematics(skel, s.params), cam);
        s.features = encode_features(gt2d.points, all_visible, cam);
        add_feature_perturbation(s.features, all_visible, cfg.feature_noise, nullptr, rng);
        out.push_back(std::move(s));
    }
    return out;
}

Keypoints2D simulate_estimator(const Keypoints2D& gt_2d, const EventMask& mask,
                               const StreamConfig& cfg, const Camera& cam, Rng& rng) {
    const int j = static_cast<int>(gt_2d.points.rows());
    if (static_cast<int>(mask.size()) != j)
        throw InvalidInput("simulate_estimator: mask size mismatch");
    Keypoints2D est;
    est.points.resize(j, 2);
    est.confidence.resize(j);
    for (int k = 0; k < j; ++k) {
        double sigma = cfg.noise_sigma_base;
        if (mask[k] == Vis::occluded) sigma *= cfg.event_noise_multiplier;
        if (mask[k] == Vis::truncated) sigma *= cfg.event_noise_multiplier * 1.5;
        for (int c = 0; c < 2; ++c) {
            const double n = cfg.student_t_noise ? rng.student_t(cfg.student_t_dof) : rng.normal();
            est.points(k, c) = gt_2d.points(k, c) + sigma * n;
        }
        if (mask[k] == Vis::truncated) {
            // The crop removed this keypoint; the simulated estimator places
            // it beyond the nearest image border.
            const double x = gt_2d.points(k, 0);
            const double y = gt_2d.points(k, 1);
            const double margin = 1.0 + std::abs(rng.normal(0.0, cfg.noise_sigma_base + 1.0));
            const double d_left = x, d_right = cam.image_size.x() - x;
            const double d_top = y, d_bot = cam.image_size.y() - y;
            const double m = std::min({d_left, d_right, d_top, d_bot});
            if (m == d_left) est.points(k, 0) = -margin;
            else if (m == d_right) est.points(k, 0) = cam.image_size.x() + margin;
            else if (m == d_top) est.points(k, 1) = -margin;
            else est.points(k, 1) = cam.image_size.y() + margin;
        }
        est.confidence(k) = clamp(std::exp(-sigma / cfg.conf_scale) +
                                      rng.uniform(-cfg.conf_jitter, cfg.conf_jitter),
                                  0.0, 1.0);
    }
    return est;
}

std::vector<Video> generate_streams(const SkeletonTemplate& skel, const StreamConfig& cfg) {
    cfg.validate();
    const int j = skel.joint_count();
    Rng shared_rng(mix_seed(cfg.seed, 0x57A));
    Eigen::VectorXd shared_bias = Eigen::VectorXd::Zero(3 * j);
    for (int k = 0; k < j; ++k)
        for (int c = 0; c < 2; ++c)
            shared_bias(3 * k + c) = shared_rng.normal(0.0, cfg.domain_shift_mag);
    const double shared_focal = shared_rng.uniform(-cfg.focal_jitter, cfg.focal_jitter);
    const Eigen::VectorXd angle_mean = target_angle_means(j, cfg);

    std::vector<Video> videos;
    videos.reserve(cfg.video_count);
    for (int v = 0; v < cfg.video_count; ++v) {
        Rng rng(mix_seed(cfg.seed, 0x71D, static_cast<std::uint64_t>(v)));

        Camera cam = Camera::default_desk();
        const double pv_focal =
            rng.uniform(-cfg.focal_jitter, cfg.focal_jitter) * cfg.per_video_shift_frac;
        cam.focal *= 1.0 + shared_focal + pv_focal;

        Eigen::VectorXd bias = shared_bias;
        for (int k = 0; k < j; ++k)
            for (int c = 0; c < 2; ++c)
                bias(3 * k + c) +=
                    rng.normal(0.0, cfg.domain_shift_mag * cfg.per_video_shift_frac);

        PoseParams p;
        p.theta = draw_angles(angle_mean, cfg.target_angle_range, rng);
        p.beta.resize(kShapeDim);
        for (int k = 0; k < kShapeDim; ++k) p.beta(k) = std::exp2(rng.uniform(-0.4, 0.4));
        p.trans = {rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(4.5, 6.0)};

        Video video;
        video.reserve(cfg.frames_per_video);
        for (int f = 0; f < cfg.frames_per_video; ++f) {
            if (f > 0) {
                for (int i = 0; i < p.theta.size(); ++i) {
                    const double step = rng.uniform(-cfg.walk_step, cfg.walk_step);
                    p.theta(i) = clamp(p.theta(i) + step, angle_mean(i) - cfg.target_angle_range,
                                       angle_mean(i) + cfg.target_angle_range);
                }
                p.trans.x() = clamp(p.trans.x() + rng.uniform(-cfg.trans_walk_step, cfg.trans_walk_step), -0.3, 0.3);
                p.trans.y() = clamp(p.trans.y() + rng.uniform(-cfg.trans_walk_step, cfg.trans_walk_step), -0.3, 0.3);
                p.trans.z() = clamp(p.trans.z() + rng.uniform(-cfg.trans_walk_step, cfg.trans_walk_step), 4.5, 6.0);
            }

            Frame frame;
            frame.video_id = v;
            frame.frame_id = f;
            frame.gt_params = p;
            frame.gt_3d = forward_kinematics(skel, p);
            frame.gt_2d = project(frame.gt_3d, cam);
            frame.mask.assign(j, Vis::visible);

            if (rng.unit() < cfg.event_rate) {
                if (rng.unit() < 0.5) {
                    // Occlusion: hide enough keypoints to break confidence.
                    const int count = rng.uniform_int(kMinEventKeypoints, 10);
                    std::vector<int> idx(j);
                    std::iota(idx.begin(), idx.end(), 0);
                    rng.shuffle(idx);
                    for (int i = 0; i < count; ++i) frame.mask[idx[i]] = Vis::occluded;
                } else {
                    // Truncation: crop away the k outermost keypoints along a
                    // random axis/side.
                    const int count = rng.uniform_int(kMinEventKeypoints, 9);
                    const int axis = rng.uniform_int(0, 1);
                    const bool high_side = rng.uniform_int(0, 1) == 1;
                    std::vector<double> coords(j);
                    for (int k = 0; k < j; ++k) coords[k] = frame.gt_2d.points(k, axis);
                    std::vector<double> sorted = coords;
                    std::sort(sorted.begin(), sorted.end());
                    const double cut = high_side ? sorted[j - count] : sorted[count - 1];
                    for (int k = 0; k < j; ++k) {
                        const bool beyond = high_side ? coords[k] >= cut : coords[k] <= cut;
                        if (beyond) frame.mask[k] = Vis::truncated;
                    }
                }
            }

            frame.est_2d = simulate_estimator(frame.gt_2d, frame.mask, cfg, cam, rng);

            std::vector<bool> visible(j);
            for (int k = 0; k < j; ++k) visible[k] = frame.mask[k] == Vis::visible;
            frame.features = encode_features(frame.gt_2d.points, visible, Camera::default_desk());
            add_feature_perturbation(frame.features, visible, cfg.feature_noise, &bias, rng);

            video.push_back(std::move(frame));
        }
        videos.push_back(std::move(video));
    }
    return videos;
}

std::uint64_t config_digest(const StreamConfig& cfg) {
    std::string s;
    const double fields[] = {
        static_cast<double>(cfg.video_count), static_cast<double>(cfg.frames_per_video),
        static_cast<double>(cfg.source_sample_count), cfg.source_angle_range,
        cfg.target_angle_range, cfg.target_mean_shift, cfg.walk_step, cfg.trans_walk_step,
        cfg.domain_shift_mag, cfg.per_video_shift_frac, cfg.focal_jitter, cfg.noise_sigma_base,
        cfg.event_rate, cfg.event_noise_multiplier, cfg.conf_scale, cfg.conf_jitter,
        cfg.student_t_noise ? 1.0 : 0.0, cfg.student_t_dof, cfg.feature_noise,
        static_cast<double>(cfg.seed)};
    for (double f : fields) {
        s += format_double(f);
        s += '|';
    }
    return fnv1a(s);
}

void write_stream(const std::string& path, const std::vector<Video>& videos,
                  const SkeletonTemplate& skel, std::uint64_t config_hash) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw UsageError("cannot open stream file for writing: " + path);
    const int j = skel.joint_count();
    char hex[32];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(config_hash));
    out << "poseadapt-stream v1 J=" << j << " feat=" << feature_dim(skel)
        << " params=" << (3 * j + kShapeDim + 3) << " videos=" << videos.size()
        << " confhash=" << hex << "\n";
    for (const Video& video : videos) {
        for (const Frame& f : video) {
            Eigen::VectorXd gtp(3 * j + kShapeDim + 3);
            gtp << f.gt_params.theta, f.gt_params.beta, f.gt_params.trans;
            out << "v=" << f.video_id << " f=" << f.frame_id;
            out << " feat=" << join_doubles(f.features.data(), static_cast<int>(f.features.size()));
            out << " gtp=" << join_doubles(gtp.data(), static_cast<int>(gtp.size()));
            Eigen::VectorXd flat2d(2 * j);
            for (int k = 0; k < j; ++k) {
                flat2d(2 * k) = f.gt_2d.points(k, 0);
                flat2d(2 * k + 1) = f.gt_2d.points(k, 1);
            }
            out << " gt2d=" << join_doubles(flat2d.data(), 2 * j);
            for (int k = 0; k < j; ++k) {
                flat2d(2 * k) = f.est_2d.points(k, 0);
                flat2d(2 * k + 1) = f.est_2d.points(k, 1);
            }
            out << " est2d=" << join_doubles(flat2d.data(), 2 * j);
            out << " conf=" << join_doubles(f.est_2d.confidence.data(), j);
            out << " mask=";
            for (int k = 0; k < j; ++k) {
                if (k) out << ',';
                out << static_cast<int>(f.mask[k]);
            }
            out << "\n";
        }
    }
    if (!out) throw UsageError("error while writing stream file: " + path);
}

std::vector<Video> read_stream(const std::string& path, const SkeletonTemplate& skel) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open stream file: " + path);
    const int j = skel.joint_count();

    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty stream file", 0);
    {
        std::istringstream hdr(line);
        std::string magic, version;
        hdr >> magic >> version;
        if (magic != "poseadapt-stream" || version != "v1")
            throw ParseError("bad stream header", 0);
        const int file_j = std::stoi(expect_field(hdr, "J", 0));
        if (file_j != j)
            throw ParseError("stream J=" + std::to_string(file_j) + " does not match skeleton J=" +
                                 std::to_string(j),
                             0);
    }

    std::vector<Video> videos;
    std::size_t record = 0;
    while (std::getline(in, line)) {
        ++record;
        if (line.empty()) continue;
        std::istringstream ls(line);
        Frame f;
        f.video_id = std::stoi(expect_field(ls, "v", record));
        f.frame_id = std::stoi(expect_field(ls, "f", record));

        const std::vector<double> feat = split_doubles(expect_field(ls, "feat", record), record);
        if (static_cast<int>(feat.size()) != 3 * j)
            throw ParseError("feat has " + std::to_string(feat.size()) + " values, expected " +
                                 std::to_string(3 * j),
                             record);
        f.features = Eigen::Map<const Eigen::VectorXd>(feat.data(), feat.size());

        const std::vector<double> gtp = split_doubles(expect_field(ls, "gtp", record), record);
        if (static_cast<int>(gtp.size()) != 3 * j + kShapeDim + 3)
            throw ParseError("gtp has wrong length", record);
        f.gt_params.theta = Eigen::Map<const Eigen::VectorXd>(gtp.data(), 3 * j);
        f.gt_params.beta = Eigen::Map<const Eigen::VectorXd>(gtp.data() + 3 * j, kShapeDim);
        f.gt_params.trans = Eigen::Vector3d(gtp[3 * j + kShapeDim], gtp[3 * j + kShapeDim + 1],
                                            gtp[3 * j + kShapeDim + 2]);

        const auto read2d = [&](const char* key) {
            const std::vector<double> flat = split_doubles(expect_field(ls, key, record), record);
            if (static_cast<int>(flat.size()) != 2 * j)
                throw ParseError(std::string(key) + " has wrong length", record);
            MatrixX2d pts(j, 2);
            for (int k = 0; k < j; ++k) {
                pts(k, 0) = flat[2 * k];
                pts(k, 1) = flat[2 * k + 1];
            }
            return pts;
        };
        f.gt_2d.points = read2d("gt2d");
        f.gt_2d.confidence = Eigen::VectorXd::Ones(j);
        f.est_2d.points = read2d("est2d");

        const std::vector<double> conf = split_doubles(expect_field(ls, "conf", record), record);
        if (static_cast<int>(conf.size()) != j) throw ParseError("conf has wrong length", record);
        f.est_2d.confidence = Eigen::Map<const Eigen::VectorXd>(conf.data(), j);

        const std::vector<double> mask = split_doubles(expect_field(ls, "mask", record), record);
        if (static_cast<int>(mask.size()) != j) throw ParseError("mask has wrong length", record);
        f.mask.resize(j);
        for (int k = 0; k < j; ++k) {
            const int m = static_cast<int>(mask[k]);
            if (m < 0 || m > 2) throw ParseError("mask value out of range", record);
            f.mask[k] = static_cast<Vis>(m);
        }

        f.gt_3d = forward_kinematics(skel, f.gt_params);

        if (f.video_id < 0) throw ParseError("negative video id", record);
        if (static_cast<std::size_t>(f.video_id) >= videos.size())
            videos.resize(f.video_id + 1);
        videos[f.video_id].push_back(std::move(f));
    }
    return videos;
}

}  // namespace poseadapt
