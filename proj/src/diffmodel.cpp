#include "poseadapt/diffmodel.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace poseadapt {

namespace {

constexpr double kLn2 = 0.6931471805599453;

void check_feature_dim(const RegressorState& state, const Eigen::VectorXd& features) {
    if (features.size() != state.input_dim)
        throw InvalidInput("feature vector has size " + std::to_string(features.size()) +
                           ", expected " + std::to_string(state.input_dim));
}

void check_shapes_match(const RegressorState& state, const ParamGradients& grads) {
    if (static_cast<int>(grads.d_weights.size()) != state.layer_count())
        throw InvalidInput("gradient layer count mismatch");
    for (int l = 0; l < state.layer_count(); ++l) {
        if (grads.d_weights[l].rows() != state.weights[l].rows() ||
            grads.d_weights[l].cols() != state.weights[l].cols() ||
            grads.d_biases[l].size() != state.biases[l].size())
            throw InvalidInput("gradient shape mismatch at layer " + std::to_string(l));
    }
}

}  // namespace

int packed_param_dim(int joint_count) { return 3 * joint_count + kShapeDim + 3; }

RegressorState RegressorState::init(int input_dim, const std::vector<int>& hidden_dims,
                                    int joint_count, std::uint64_t seed) {
    RegressorState s;
    s.input_dim = input_dim;
    s.joint_count = joint_count;
    s.output_dim = packed_param_dim(joint_count);
    Rng rng(mix_seed(seed, 0x1717));
    int in = input_dim;
    std::vector<int> outs = hidden_dims;
    outs.push_back(s.output_dim);
    for (int out : outs) {
        const double bound = std::sqrt(6.0 / (in + out));
        Eigen::MatrixXd w(out, in);
        for (int r = 0; r < out; ++r)
            for (int c = 0; c < in; ++c) w(r, c) = rng.uniform(-bound, bound);
        s.weights.push_back(std::move(w));
        s.biases.push_back(Eigen::VectorXd::Zero(out));
        in = out;
    }
    return s;
}

PoseParams decode_params(const Eigen::VectorXd& raw, int joint_count) {
    if (raw.size() != packed_param_dim(joint_count))
        throw InvalidInput("raw output size mismatch in decode_params");
    const int nt = 3 * joint_count;
    PoseParams p;
    p.theta = raw.head(nt);
    p.beta.resize(kShapeDim);
    // 2^tanh(x): smooth squash onto (0.5, 2.0) with neutral scale at x = 0.
    for (int i = 0; i < kShapeDim; ++i) p.beta(i) = std::exp(kLn2 * std::tanh(raw(nt + i)));
    p.trans.x() = raw(nt + kShapeDim);
    p.trans.y() = raw(nt + kShapeDim + 1);
    p.trans.z() = kMinDepth + softplus(raw(nt + kShapeDim + 2));
    return p;
}

Eigen::VectorXd head_backward(const Eigen::VectorXd& raw, int joint_count,
                              const PoseParamGrad& d_params) {
    const int nt = 3 * joint_count;
    Eigen::VectorXd d_raw(raw.size());
    d_raw.head(nt) = d_params.theta;
    for (int i = 0; i < kShapeDim; ++i) {
        const double th = std::tanh(raw(nt + i));
        const double beta = std::exp(kLn2 * th);
        d_raw(nt + i) = d_params.beta(i) * beta * kLn2 * (1.0 - th * th);
    }
    d_raw(nt + kShapeDim) = d_params.trans.x();
    d_raw(nt + kShapeDim + 1) = d_params.trans.y();
    d_raw(nt + kShapeDim + 2) = d_params.trans.z() * sigmoid(raw(nt + kShapeDim + 2));
    return d_raw;
}

ForwardCache forward_cached(const RegressorState& state, const Eigen::VectorXd& features) {
    check_feature_dim(state, features);
    ForwardCache cache;
    cache.input = features;
    Eigen::VectorXd x = features;
    for (int l = 0; l < state.layer_count(); ++l) {
        Eigen::VectorXd z = state.weights[l] * x + state.biases[l];
        if (l + 1 < state.layer_count()) {
            z = z.array().tanh();
            cache.hidden.push_back(z);
            x = z;
        } else {
            cache.raw = std::move(z);
        }
    }
    return cache;
}

PoseParams predict(const RegressorState& state, const Eigen::VectorXd& features) {
    return decode_params(forward_cached(state, features).raw, state.joint_count);
}

Eigen::VectorXd feature_at_layer(const RegressorState& state, const Eigen::VectorXd& features,
                                 int layer_index) {
    if (layer_index < 0 || layer_index >= state.hidden_count())
        throw InvalidInput("feature_at_layer: index " + std::to_string(layer_index) +
                           " out of range");
    return forward_cached(state, features).hidden[layer_index];
}

ParamGradients ParamGradients::zero_like(const RegressorState& state) {
    ParamGradients g;
    for (int l = 0; l < state.layer_count(); ++l) {
        g.d_weights.emplace_back(
            Eigen::MatrixXd::Zero(state.weights[l].rows(), state.weights[l].cols()));
        g.d_biases.emplace_back(Eigen::VectorXd::Zero(state.biases[l].size()));
    }
    return g;
}

void ParamGradients::add_scaled(const ParamGradients& other, double factor) {
    for (std::size_t l = 0; l < d_weights.size(); ++l) {
        d_weights[l] += factor * other.d_weights[l];
        d_biases[l] += factor * other.d_biases[l];
    }
}

void ParamGradients::scale(double factor) {
    for (std::size_t l = 0; l < d_weights.size(); ++l) {
        d_weights[l] *= factor;
        d_biases[l] *= factor;
    }
}

double ParamGradients::squared_norm() const {
    double s = 0.0;
    for (std::size_t l = 0; l < d_weights.size(); ++l)
        s += d_weights[l].squaredNorm() + d_biases[l].squaredNorm();
    return s;
}

bool ParamGradients::finite() const {
    for (std::size_t l = 0; l < d_weights.size(); ++l)
        if (!d_weights[l].allFinite() || !d_biases[l].allFinite()) return false;
    return true;
}

GradientResult loss_gradient(const RegressorState& state, const Eigen::VectorXd& features,
                             const ParamLoss& loss_fn) {
    const ForwardCache cache = forward_cached(state, features);
    GradientResult res;
    res.params = decode_params(cache.raw, state.joint_count);
    const LossEval eval = loss_fn(res.params);
    if (!std::isfinite(eval.value)) throw GradientInvalid("loss is not finite");
    res.loss = eval.value;

    Eigen::VectorXd delta = head_backward(cache.raw, state.joint_count, eval.d_params);
    res.grads.d_weights.resize(state.layer_count());
    res.grads.d_biases.resize(state.layer_count());
    for (int l = state.layer_count() - 1; l >= 0; --l) {
        const Eigen::VectorXd& in = (l == 0) ? cache.input : cache.hidden[l - 1];
        res.grads.d_weights[l] = delta * in.transpose();
        res.grads.d_biases[l] = delta;
        if (l > 0) {
            delta = state.weights[l].transpose() * delta;
            delta.array() *= 1.0 - cache.hidden[l - 1].array().square();
        }
    }
    if (!res.grads.finite()) throw GradientInvalid("gradient is not finite");
    return res;
}

AdamState AdamState::init(const RegressorState& state, double learning_rate, double beta1) {
    AdamState a;
    a.learning_rate = learning_rate;
    a.beta1 = beta1;
    for (int l = 0; l < state.layer_count(); ++l) {
        a.m_w.emplace_back(Eigen::MatrixXd::Zero(state.weights[l].rows(), state.weights[l].cols()));
        a.v_w.emplace_back(Eigen::MatrixXd::Zero(state.weights[l].rows(), state.weights[l].cols()));
        a.m_b.emplace_back(Eigen::VectorXd::Zero(state.biases[l].size()));
        a.v_b.emplace_back(Eigen::VectorXd::Zero(state.biases[l].size()));
    }
    return a;
}

void adam_step(RegressorState& state, AdamState& adam, const ParamGradients& grads) {
    check_shapes_match(state, grads);
    if (static_cast<int>(adam.m_w.size()) != state.layer_count())
        throw InvalidInput("optimizer state does not match model");
    adam.step_count += 1;
    const double c1 = 1.0 - std::pow(adam.beta1, adam.step_count);
    const double c2 = 1.0 - std::pow(AdamState::kBeta2, adam.step_count);
    for (int l = 0; l < state.layer_count(); ++l) {
        adam.m_w[l] = adam.beta1 * adam.m_w[l] + (1.0 - adam.beta1) * grads.d_weights[l];
        adam.v_w[l] = AdamState::kBeta2 * adam.v_w[l] +
                      (1.0 - AdamState::kBeta2) * grads.d_weights[l].array().square().matrix();
        state.weights[l].array() -= adam.learning_rate * (adam.m_w[l].array() / c1) /
                                    ((adam.v_w[l].array() / c2).sqrt() + AdamState::kEpsilon);

        adam.m_b[l] = adam.beta1 * adam.m_b[l] + (1.0 - adam.beta1) * grads.d_biases[l];
        adam.v_b[l] = AdamState::kBeta2 * adam.v_b[l] +
                      (1.0 - AdamState::kBeta2) * grads.d_biases[l].array().square().matrix();
        state.biases[l].array() -= adam.learning_rate * (adam.m_b[l].array() / c1) /
                                   ((adam.v_b[l].array() / c2).sqrt() + AdamState::kEpsilon);
    }
}

TeacherState TeacherState::init(const RegressorState& student, double ema_decay) {
    return TeacherState{student, ema_decay};
}

void ema_update(TeacherState& teacher, const RegressorState& student) {
    if (teacher.shadow.layer_count() != student.layer_count())
        throw InvalidInput("teacher/student layer counts differ");
    const double d = teacher.ema_decay;
    for (int l = 0; l < student.layer_count(); ++l) {
        teacher.shadow.weights[l] = d * teacher.shadow.weights[l] + (1.0 - d) * student.weights[l];
        teacher.shadow.biases[l] = d * teacher.shadow.biases[l] + (1.0 - d) * student.biases[l];
    }
}

Snapshot snapshot(const RegressorState& state, const AdamState& adam) {
    return Snapshot{state, adam};
}

void restore(const Snapshot& snap, RegressorState& state, AdamState& adam) {
    state = snap.model;
    adam = snap.adam;
}

bool states_equal(const RegressorState& a, const RegressorState& b) {
    if (a.layer_count() != b.layer_count()) return false;
    for (int l = 0; l < a.layer_count(); ++l) {
        if (a.weights[l].rows() != b.weights[l].rows() ||
            a.weights[l].cols() != b.weights[l].cols())
            return false;
        if (std::memcmp(a.weights[l].data(), b.weights[l].data(),
                        sizeof(double) * a.weights[l].size()) != 0)
            return false;
        if (std::memcmp(a.biases[l].data(), b.biases[l].data(),
                        sizeof(double) * a.biases[l].size()) != 0)
            return false;
    }
    return true;
}

std::uint64_t state_digest(const RegressorState& state) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (int l = 0; l < state.layer_count(); ++l) {
        h = fnv1a(state.weights[l].data(), sizeof(double) * state.weights[l].size(), h);
        h = fnv1a(state.biases[l].data(), sizeof(double) * state.biases[l].size(), h);
    }
    return h;
}

namespace {

constexpr std::uint32_t kCheckpointMagic = 0x50414d31;  // "PAM1"

void write_u32(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::ifstream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw ParseError("checkpoint truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

void write_doubles(std::ofstream& out, const double* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t bits;
        std::memcpy(&bits, &p[i], 8);
        unsigned char b[8];
        for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>((bits >> (8 * k)) & 0xff);
        out.write(reinterpret_cast<const char*>(b), 8);
    }
}

void read_doubles(std::ifstream& in, double* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        unsigned char b[8];
        in.read(reinterpret_cast<char*>(b), 8);
        if (!in) throw ParseError("checkpoint truncated in parameter block");
        std::uint64_t bits = 0;
        for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(b[k]) << (8 * k);
        std::memcpy(&p[i], &bits, 8);
    }
}

}  // namespace

void save_checkpoint(const std::string& path, const RegressorState& state) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw UsageError("cannot open checkpoint for writing: " + path);
    write_u32(out, kCheckpointMagic);
    write_u32(out, static_cast<std::uint32_t>(state.joint_count));
    write_u32(out, static_cast<std::uint32_t>(state.input_dim));
    write_u32(out, static_cast<std::uint32_t>(state.layer_count()));
    for (int l = 0; l < state.layer_count(); ++l)
        write_u32(out, static_cast<std::uint32_t>(state.weights[l].rows()));
    for (int l = 0; l < state.layer_count(); ++l) {
        write_doubles(out, state.weights[l].data(), state.weights[l].size());
        write_doubles(out, state.biases[l].data(), state.biases[l].size());
    }
    if (!out) throw UsageError("error while writing checkpoint: " + path);
}

RegressorState load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("cannot open checkpoint: " + path);
    if (read_u32(in) != kCheckpointMagic) throw ParseError("bad checkpoint magic");
    RegressorState s;
    s.joint_count = static_cast<int>(read_u32(in));
    s.input_dim = static_cast<int>(read_u32(in));
    const int layers = static_cast<int>(read_u32(in));
    if (s.joint_count < 1 || s.joint_count > 1024 || layers < 1 || layers > 64)
        throw ParseError("implausible checkpoint header");
    s.output_dim = packed_param_dim(s.joint_count);
    std::vector<int> outs(layers);
    for (int l = 0; l < layers; ++l) outs[l] = static_cast<int>(read_u32(in));
    if (outs.back() != s.output_dim) throw ParseError("checkpoint output dim mismatch");
    int in_dim = s.input_dim;
    for (int l = 0; l < layers; ++l) {
        Eigen::MatrixXd w(outs[l], in_dim);
        Eigen::VectorXd b(outs[l]);
        read_doubles(in, w.data(), w.size());
        read_doubles(in, b.data(), b.size());
        s.weights.push_back(std::move(w));
        s.biases.push_back(std::move(b));
        in_dim = outs[l];
    }
    return s;
}

}  // namespace poseadapt
