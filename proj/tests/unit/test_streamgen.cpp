#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "poseadapt/selection.hpp"
#include "poseadapt/streamgen.hpp"

using namespace poseadapt;

namespace {

const SkeletonTemplate& skel() {
    static const SkeletonTemplate s = SkeletonTemplate::humanoid15();
    return s;
}

StreamConfig small_config(std::uint64_t seed = 22) {
    StreamConfig c;
    c.video_count = 3;
    c.frames_per_video = 60;
    c.source_sample_count = 200;
    c.seed = seed;
    return c;
}

}  // namespace

TEST_CASE("generate_source: determinism and feature decoding") {
    const StreamConfig cfg = small_config();
    const auto a = generate_source(skel(), cfg);
    const auto b = generate_source(skel(), cfg);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].features == b[i].features);
        CHECK(a[i].params.theta == b[i].params.theta);
    }

    // Decoded features reproduce the projected pose within the noise bound.
    const Camera cam = Camera::default_desk();
    for (int i = 0; i < 20; ++i) {
        const Keypoints2D gt2d = project(forward_kinematics(skel(), a[i].params), cam);
        MatrixX2d decoded;
        std::vector<bool> vis;
        decode_features(a[i].features, cam, decoded, vis);
        for (int k = 0; k < skel().joint_count(); ++k) {
            CHECK(vis[k]);
            // 5 sigma of feature noise, in pixels.
            const double bound = 5.0 * cfg.feature_noise * cam.image_size.x() / 2.0;
            CHECK((decoded.row(k) - gt2d.points.row(k)).norm() < bound);
        }
    }
}

TEST_CASE("generate_source: empirical joint-angle means match the configured means") {
    StreamConfig cfg = small_config();
    cfg.source_sample_count = 10000;
    const auto samples = generate_source(skel(), cfg);
    // Each component is U(-range, range): mean 0, sd = range/sqrt(3).
    const double sd = cfg.source_angle_range / std::sqrt(3.0);
    const double tol = 3.0 * sd / std::sqrt(static_cast<double>(cfg.source_sample_count));
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(3 * skel().joint_count());
    for (const SourceSample& s : samples) mean += s.params.theta;
    mean /= static_cast<double>(samples.size());
    for (int i = 0; i < mean.size(); ++i) CHECK(std::abs(mean(i)) < tol);
}

TEST_CASE("generate_streams: no events means no masked keypoints") {
    StreamConfig cfg = small_config();
    cfg.event_rate = 0.0;
    for (const Video& v : generate_streams(skel(), cfg))
        for (const Frame& f : v)
            for (Vis m : f.mask) CHECK(m == Vis::visible);
}

TEST_CASE("generate_streams: consecutive joint angles respect the walk bound") {
    const StreamConfig cfg = small_config();
    for (const Video& v : generate_streams(skel(), cfg)) {
        for (std::size_t i = 1; i < v.size(); ++i) {
            const Eigen::VectorXd diff = v[i].gt_params.theta - v[i - 1].gt_params.theta;
            CHECK(diff.cwiseAbs().maxCoeff() <= cfg.walk_step + 1e-12);
        }
    }
}

TEST_CASE("generate_streams: frame invariants hold") {
    const StreamConfig cfg = small_config();
    const auto videos = generate_streams(skel(), cfg);
    const ConfidenceRule rule;
    int nonconf = 0, total = 0;
    for (const Video& v : videos) {
        for (const Frame& f : v) {
            // gt_3d is the forward kinematics of gt_params.
            CHECK((f.gt_3d.joints - forward_kinematics(skel(), f.gt_params).joints)
                      .cwiseAbs()
                      .maxCoeff() < 1e-12);
            // Truncated keypoints lie outside the image bounds.
            for (int k = 0; k < skel().joint_count(); ++k) {
                if (f.mask[k] == Vis::truncated) {
                    const double x = f.est_2d.points(k, 0);
                    const double y = f.est_2d.points(k, 1);
                    CHECK((x < 0.0 || x > 256.0 || y < 0.0 || y > 256.0));
                }
            }
            total += 1;
            if (!is_confident(f.est_2d.confidence, rule)) nonconf += 1;
        }
    }
    // Event frames are exactly the non-confident ones by construction;
    // their fraction tracks the event rate within +/- 50%.
    const double frac = static_cast<double>(nonconf) / total;
    CHECK(frac > 0.5 * cfg.event_rate);
    CHECK(frac < 1.5 * cfg.event_rate);
}

TEST_CASE("simulate_estimator: zero-noise limit is exact with near-1 confidence") {
    StreamConfig cfg = small_config();
    cfg.noise_sigma_base = 0.0;
    cfg.event_rate = 0.0;
    const Camera cam = Camera::default_desk();
    Rng rng(5);
    Keypoints2D gt;
    gt.points = MatrixX2d::Constant(15, 2, 100.0);
    gt.confidence = Eigen::VectorXd::Ones(15);
    const EventMask mask(15, Vis::visible);
    const Keypoints2D est = simulate_estimator(gt, mask, cfg, cam, rng);
    CHECK((est.points - gt.points).cwiseAbs().maxCoeff() == 0.0);
    CHECK(est.confidence.minCoeff() >= 0.95);
    CHECK(est.confidence.maxCoeff() <= 1.0);
}

TEST_CASE("simulate_estimator: occluded keypoints get strictly lower confidence") {
    const StreamConfig cfg = small_config();
    const double vis_floor = std::exp(-cfg.noise_sigma_base / cfg.conf_scale) - cfg.conf_jitter;
    const double occ_ceil =
        std::exp(-cfg.noise_sigma_base * cfg.event_noise_multiplier / cfg.conf_scale) +
        cfg.conf_jitter;
    REQUIRE(occ_ceil < vis_floor);  // the confidence model separates the regimes

    const Camera cam = Camera::default_desk();
    Rng rng(6);
    Keypoints2D gt;
    gt.points = MatrixX2d::Constant(15, 2, 128.0);
    gt.confidence = Eigen::VectorXd::Ones(15);
    EventMask mask(15, Vis::visible);
    mask[3] = Vis::occluded;
    for (int trial = 0; trial < 50; ++trial) {
        const Keypoints2D est = simulate_estimator(gt, mask, cfg, cam, rng);
        CHECK(est.confidence(3) <= occ_ceil);
        CHECK(est.confidence(0) >= vis_floor);
    }
}

TEST_CASE("simulate_estimator: confidence anti-correlates with pixel error") {
    const StreamConfig cfg = small_config();
    const auto videos = generate_streams(skel(), cfg);
    std::vector<double> conf, err;
    for (const Video& v : videos) {
        for (const Frame& f : v) {
            for (int k = 0; k < skel().joint_count(); ++k) {
                conf.push_back(f.est_2d.confidence(k));
                err.push_back((f.est_2d.points.row(k) - f.gt_2d.points.row(k)).norm());
            }
            if (conf.size() >= 5000) break;
        }
    }
    REQUIRE(conf.size() >= 2000);
    CHECK(oracles::spearman(conf, err) < -0.3);
}

TEST_CASE("confident frames have strictly lower mean 2D estimator error") {
    for (std::uint64_t seed : {22ull, 23ull, 24ull}) {
        const StreamConfig cfg = small_config(seed);
        const ConfidenceRule rule;
        double conf_sum = 0.0, nonconf_sum = 0.0;
        int conf_n = 0, nonconf_n = 0;
        for (const Video& v : generate_streams(skel(), cfg)) {
            for (const Frame& f : v) {
                const double epe = epe_2d(f.est_2d, f.gt_2d);
                if (is_confident(f.est_2d.confidence, rule)) {
                    conf_sum += epe;
                    conf_n += 1;
                } else {
                    nonconf_sum += epe;
                    nonconf_n += 1;
                }
            }
        }
        REQUIRE(conf_n > 0);
        REQUIRE(nonconf_n > 0);
        CHECK(conf_sum / conf_n < nonconf_sum / nonconf_n);
    }
}

TEST_CASE("stream files: round-trip, determinism, and parse errors") {
    const StreamConfig cfg = small_config();
    const auto videos = generate_streams(skel(), cfg);
    const std::string path_a = "stream_a.txt";
    const std::string path_b = "stream_b.txt";
    write_stream(path_a, videos, skel(), config_digest(cfg));
    write_stream(path_b, generate_streams(skel(), cfg), skel(), config_digest(cfg));

    // Equal seeds produce byte-identical files.
    std::ifstream fa(path_a, std::ios::binary), fb(path_b, std::ios::binary);
    const std::string bytes_a((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    const std::string bytes_b((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(bytes_a == bytes_b);

    const auto loaded = read_stream(path_a, skel());
    REQUIRE(loaded.size() == videos.size());
    for (std::size_t v = 0; v < videos.size(); ++v) {
        REQUIRE(loaded[v].size() == videos[v].size());
        for (std::size_t i = 0; i < videos[v].size(); ++i) {
            CHECK(loaded[v][i].features == videos[v][i].features);
            CHECK(loaded[v][i].gt_params.theta == videos[v][i].gt_params.theta);
            CHECK(loaded[v][i].gt_2d.points == videos[v][i].gt_2d.points);
            CHECK(loaded[v][i].est_2d.points == videos[v][i].est_2d.points);
            CHECK(loaded[v][i].est_2d.confidence == videos[v][i].est_2d.confidence);
            CHECK(loaded[v][i].mask == videos[v][i].mask);
        }
    }

    // A truncated record names its index.
    std::ofstream out(path_a, std::ios::trunc);
    out << "poseadapt-stream v1 J=15 feat=45 params=58 videos=1 confhash=0\n";
    out << "v=0 f=0 feat=1,2,3\n";
    out.close();
    try {
        read_stream(path_a, skel());
        CHECK(false);
    } catch (const ParseError& e) {
        CHECK(e.record_index == 1);
    }
    std::remove(path_a.c_str());
    std::remove(path_b.c_str());
}

TEST_CASE("config validation rejects bad values") {
    StreamConfig cfg = small_config();
    cfg.event_rate = 1.5;
    CHECK_THROWS_AS(cfg.validate(), InvalidInput);
    cfg = small_config();
    cfg.frames_per_video = 1;
    CHECK_THROWS_AS(cfg.validate(), InvalidInput);
    cfg = small_config();
    cfg.noise_sigma_base = -1.0;
    CHECK_THROWS_AS(cfg.validate(), InvalidInput);
}
