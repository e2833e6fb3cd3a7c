#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "oracles.hpp"
#include "poseadapt/diffmodel.hpp"

using namespace poseadapt;

namespace {

Eigen::VectorXd random_features(int dim, Rng& rng) {
    Eigen::VectorXd f(dim);
    for (int i = 0; i < dim; ++i) f(i) = rng.uniform(-1.0, 1.0);
    return f;
}

RegressorState small_model(std::uint64_t seed) {
    return RegressorState::init(12, {8, 8}, 15, seed);
}

}  // namespace

TEST_CASE("predict: zero parameters give the neutral head outputs") {
    RegressorState s = RegressorState::init(6, {4}, 15, 1);
    for (auto& w : s.weights) w.setZero();
    for (auto& b : s.biases) b.setZero();
    const PoseParams p = predict(s, Eigen::VectorXd::Ones(6));
    CHECK(p.theta.cwiseAbs().maxCoeff() == 0.0);
    for (int i = 0; i < kShapeDim; ++i) CHECK(p.beta(i) == doctest::Approx(1.0));  // squash(0)
    CHECK(p.trans.x() == 0.0);
    CHECK(p.trans.y() == 0.0);
    CHECK(p.trans.z() == doctest::Approx(kMinDepth + std::log(2.0)));  // softplus(0)
}

TEST_CASE("predict is pure and beta stays inside its range") {
    Rng rng(2);
    const RegressorState s = small_model(3);
    const Eigen::VectorXd f = random_features(12, rng);
    const PoseParams a = predict(s, f);
    const PoseParams b = predict(s, f);
    CHECK(a.theta == b.theta);
    CHECK(a.beta == b.beta);
    CHECK(a.trans == b.trans);
    for (int trial = 0; trial < 50; ++trial) {
        const PoseParams p = predict(s, random_features(12, rng));
        CHECK(p.beta.minCoeff() > 0.5);
        CHECK(p.beta.maxCoeff() < 2.0);
        CHECK(p.trans.z() > 0.0);
    }
    CHECK_THROWS_AS(predict(s, Eigen::VectorXd::Zero(5)), InvalidInput);
}

TEST_CASE("loss_gradient: constant loss has zero gradient") {
    const RegressorState s = small_model(4);
    Rng rng(4);
    const auto fn = [&](const PoseParams&) {
        LossEval e;
        e.value = 3.5;
        e.d_params = PoseParamGrad::zero(15);
        return e;
    };
    const GradientResult g = loss_gradient(s, random_features(12, rng), fn);
    CHECK(g.loss == 3.5);
    CHECK(g.grads.squared_norm() == 0.0);
}

TEST_CASE("loss_gradient: closed form for a linear model with quadratic loss") {
    // No hidden layers: raw = Wx + b; loss over the theta block is
    // sum (theta_i - y_i)^2 with gradient 2 (Wx + b - y) x^T on those rows.
    RegressorState s = RegressorState::init(5, {}, 15, 6);
    Rng rng(6);
    const Eigen::VectorXd x = random_features(5, rng);
    Eigen::VectorXd y(45);
    for (int i = 0; i < 45; ++i) y(i) = rng.uniform(-1.0, 1.0);

    const auto fn = [&](const PoseParams& p) {
        LossEval e;
        e.d_params = PoseParamGrad::zero(15);
        e.value = (p.theta - y).squaredNorm();
        e.d_params.theta = 2.0 * (p.theta - y);
        return e;
    };
    const GradientResult g = loss_gradient(s, x, fn);
    const Eigen::VectorXd raw = s.weights[0] * x + s.biases[0];
    for (int r = 0; r < 45; ++r) {
        const Eigen::VectorXd expect_row = 2.0 * (raw(r) - y(r)) * x;
        CHECK((g.grads.d_weights[0].row(r).transpose() - expect_row).cwiseAbs().maxCoeff() < 1e-12);
        CHECK(g.grads.d_biases[0](r) == doctest::Approx(2.0 * (raw(r) - y(r))));
    }
    // Rows beyond theta get nothing from this loss.
    CHECK(g.grads.d_weights[0].bottomRows(13).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("loss_gradient matches finite differences through the head maps") {
    Rng rng(8);
    for (int trial = 0; trial < 5; ++trial) {
        const RegressorState s = small_model(100 + trial);
        const Eigen::VectorXd f = random_features(12, rng);
        Eigen::VectorXd target(45);
        for (int i = 0; i < 45; ++i) target(i) = rng.uniform(-0.5, 0.5);

        // Touches theta, beta, and the depth map all at once.
        const auto fn = [&](const PoseParams& p) {
            LossEval e;
            e.d_params = PoseParamGrad::zero(15);
            e.value = (p.theta - target).squaredNorm() + 2.0 * (p.beta.array() - 1.2).matrix().squaredNorm() +
                      (p.trans.z() - 5.0) * (p.trans.z() - 5.0);
            e.d_params.theta = 2.0 * (p.theta - target);
            e.d_params.beta = 4.0 * (p.beta.array() - 1.2);
            e.d_params.trans.z() = 2.0 * (p.trans.z() - 5.0);
            return e;
        };
        const GradientResult g = loss_gradient(s, f, fn);
        const auto value = [&](const RegressorState& m) { return fn(predict(m, f)).value; };
        const ParamGradients fd = oracles::finite_difference_gradient(s, f, value, 1e-5);
        CHECK(oracles::max_relative_error(g.grads, fd, 1e-2) < 1e-4);
    }
}

TEST_CASE("loss_gradient rejects non-finite losses") {
    const RegressorState s = small_model(5);
    Rng rng(5);
    const auto fn = [&](const PoseParams&) {
        LossEval e;
        e.value = std::numeric_limits<double>::quiet_NaN();
        e.d_params = PoseParamGrad::zero(15);
        return e;
    };
    CHECK_THROWS_AS(loss_gradient(s, random_features(12, rng), fn), GradientInvalid);
}

TEST_CASE("adam_step: zero gradient leaves parameters unchanged") {
    RegressorState s = small_model(7);
    const RegressorState before = s;
    AdamState adam = AdamState::init(s, 0.1, 0.9);
    adam_step(s, adam, ParamGradients::zero_like(s));
    CHECK(states_equal(s, before));
    CHECK(adam.step_count == 1);
}

TEST_CASE("adam_step: bias-corrected first step moves by about the learning rate") {
    RegressorState s = RegressorState::init(1, {}, 15, 8);
    s.weights[0].setZero();
    s.biases[0].setZero();
    AdamState adam = AdamState::init(s, 0.1, 0.9);
    ParamGradients g = ParamGradients::zero_like(s);
    g.d_biases[0](0) = 1.0;
    adam_step(s, adam, g);
    CHECK(s.biases[0](0) == doctest::Approx(-0.1).epsilon(1e-3));
}

TEST_CASE("adam_step: two identical gradients match the unrolled recurrence") {
    RegressorState s = RegressorState::init(1, {}, 15, 9);
    s.weights[0].setZero();
    s.biases[0].setZero();
    const double lr = 0.05, b1 = 0.5, b2 = AdamState::kBeta2, eps = AdamState::kEpsilon;
    AdamState adam = AdamState::init(s, lr, b1);
    ParamGradients g = ParamGradients::zero_like(s);
    const double grad = 0.7;
    g.d_biases[0](0) = grad;
    adam_step(s, adam, g);
    adam_step(s, adam, g);

    // Hand-unrolled two steps for a scalar parameter.
    double m = 0.0, v = 0.0, x = 0.0;
    for (int t = 1; t <= 2; ++t) {
        m = b1 * m + (1 - b1) * grad;
        v = b2 * v + (1 - b2) * grad * grad;
        const double mhat = m / (1 - std::pow(b1, t));
        const double vhat = v / (1 - std::pow(b2, t));
        x -= lr * mhat / (std::sqrt(vhat) + eps);
    }
    CHECK(s.biases[0](0) == doctest::Approx(x).epsilon(1e-12));
    CHECK(adam.step_count == 2);
}

TEST_CASE("one adam step on a nonzero-gradient loss changes the output") {
    RegressorState s = small_model(10);
    Rng rng(10);
    const Eigen::VectorXd f = random_features(12, rng);
    const PoseParams before = predict(s, f);
    const auto fn = [&](const PoseParams& p) {
        LossEval e;
        e.d_params = PoseParamGrad::zero(15);
        e.value = p.theta.squaredNorm();
        e.d_params.theta = 2.0 * p.theta;
        return e;
    };
    AdamState adam = AdamState::init(s, 1e-3, 0.5);
    const GradientResult g = loss_gradient(s, f, fn);
    REQUIRE(g.grads.squared_norm() > 0.0);
    adam_step(s, adam, g.grads);
    const PoseParams after = predict(s, f);
    CHECK((after.theta - before.theta).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("ema_update: decay endpoints and two-step blend") {
    RegressorState student = small_model(11);
    TeacherState t1 = TeacherState::init(student, 1.0);
    RegressorState moved = student;
    moved.weights[0].array() += 0.5;
    ema_update(t1, moved);
    CHECK(states_equal(t1.shadow, student));  // decay 1: unchanged

    TeacherState t0 = TeacherState::init(student, 0.0);
    ema_update(t0, moved);
    CHECK(states_equal(t0.shadow, moved));  // decay 0: copies the student

    TeacherState t = TeacherState::init(student, 0.99);
    RegressorState s1 = student, s2 = student;
    s1.biases[0](0) = 1.0;
    s2.biases[0](0) = 2.0;
    ema_update(t, s1);
    ema_update(t, s2);
    const double expect = 0.99 * (0.99 * student.biases[0](0) + 0.01 * 1.0) + 0.01 * 2.0;
    CHECK(t.shadow.biases[0](0) == doctest::Approx(expect).epsilon(1e-15));
}

TEST_CASE("snapshot/restore is exact, including optimizer moments") {
    RegressorState s = small_model(12);
    AdamState adam = AdamState::init(s, 1e-2, 0.5);
    Rng rng(12);
    const Eigen::VectorXd f = random_features(12, rng);
    const auto fn = [&](const PoseParams& p) {
        LossEval e;
        e.d_params = PoseParamGrad::zero(15);
        e.value = p.theta.squaredNorm() + p.trans.squaredNorm();
        e.d_params.theta = 2.0 * p.theta;
        e.d_params.trans = 2.0 * p.trans;
        return e;
    };
    adam_step(s, adam, loss_gradient(s, f, fn).grads);

    const Snapshot snap = snapshot(s, adam);
    const std::uint64_t digest_before = state_digest(s);
    for (int i = 0; i < 10; ++i) adam_step(s, adam, loss_gradient(s, f, fn).grads);
    CHECK(!states_equal(s, snap.model));
    CHECK(state_digest(snap.model) != state_digest(s));

    restore(snap, s, adam);
    CHECK(states_equal(s, snap.model));
    CHECK(state_digest(s) == digest_before);
    CHECK(adam.step_count == snap.adam.step_count);
    for (std::size_t l = 0; l < adam.m_w.size(); ++l) {
        CHECK(adam.m_w[l] == snap.adam.m_w[l]);
        CHECK(adam.v_w[l] == snap.adam.v_w[l]);
    }

    // Re-snapshotting reproduces identical bytes.
    const Snapshot snap2 = snapshot(s, adam);
    CHECK(state_digest(snap2.model) == state_digest(snap.model));
}

TEST_CASE("feature_at_layer: identity first layer applies tanh(x + b)") {
    RegressorState s = RegressorState::init(4, {4}, 15, 13);
    s.weights[0].setIdentity();
    s.biases[0] << 0.1, -0.2, 0.3, 0.0;
    Eigen::VectorXd f(4);
    f << 0.5, -0.5, 0.25, 1.0;
    const Eigen::VectorXd h = feature_at_layer(s, f, 0);
    for (int i = 0; i < 4; ++i) CHECK(h(i) == doctest::Approx(std::tanh(f(i) + s.biases[0](i))));
    CHECK(feature_at_layer(s, f, 0) == h);  // purity
    CHECK_THROWS_AS(feature_at_layer(s, f, 1), InvalidInput);

    // Different states generically give different activations.
    RegressorState other = s;
    other.weights[0](0, 1) += 0.7;
    const Eigen::VectorXd h2 = feature_at_layer(other, f, 0);
    const double cos = h.dot(h2) / (h.norm() * h2.norm());
    CHECK(cos < 1.0);
}

TEST_CASE("checkpoint round-trip preserves predictions exactly") {
    const RegressorState s = RegressorState::init(45, {16, 16}, 15, 14);
    const std::string path = "ckpt_test.bin";
    save_checkpoint(path, s);
    const RegressorState loaded = load_checkpoint(path);
    CHECK(states_equal(s, loaded));
    Rng rng(14);
    const Eigen::VectorXd f = random_features(45, rng);
    CHECK(predict(s, f).theta == predict(loaded, f).theta);

    // A truncated file is a parse error.
    const auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size / 2);
    CHECK_THROWS_AS(load_checkpoint(path), ParseError);
    std::remove(path.c_str());
}
