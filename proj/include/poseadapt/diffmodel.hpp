#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "poseadapt/kinematics.hpp"

namespace poseadapt {

// Small tanh MLP mapping observation features to packed pose parameters.
// The raw output is decoded through fixed head maps: theta passes through,
// beta is squashed into [0.5, 2.0] on a log2 scale, and the translation
// depth goes through a floored softplus so projection can never degenerate.
struct RegressorState {
    int input_dim = 0;
    int output_dim = 0;
    int joint_count = 0;
    std::vector<Eigen::MatrixXd> weights;  // layer l: out x in
    std::vector<Eigen::VectorXd> biases;

    int layer_count() const { return static_cast<int>(weights.size()); }
    int hidden_count() const { return layer_count() - 1; }

    static RegressorState init(int input_dim, const std::vector<int>& hidden_dims,
                               int joint_count, std::uint64_t seed);
};

inline constexpr double kMinDepth = 0.1;

int packed_param_dim(int joint_count);

PoseParams decode_params(const Eigen::VectorXd& raw, int joint_count);

// Chain a gradient on decoded PoseParams back to the raw network output.
Eigen::VectorXd head_backward(const Eigen::VectorXd& raw, int joint_count,
                              const PoseParamGrad& d_params);

struct ForwardCache {
    Eigen::VectorXd input;
    std::vector<Eigen::VectorXd> hidden;  // post-tanh activations
    Eigen::VectorXd raw;
};

ForwardCache forward_cached(const RegressorState& state, const Eigen::VectorXd& features);

PoseParams predict(const RegressorState& state, const Eigen::VectorXd& features);

// Post-nonlinearity activation of hidden layer `layer_index`.
Eigen::VectorXd feature_at_layer(const RegressorState& state, const Eigen::VectorXd& features,
                                 int layer_index);

// ---------------------------------------------------------------------------
// Gradients and optimization.
// ---------------------------------------------------------------------------

struct ParamGradients {
    std::vector<Eigen::MatrixXd> d_weights;
    std::vector<Eigen::VectorXd> d_biases;

    static ParamGradients zero_like(const RegressorState& state);
    void add_scaled(const ParamGradients& other, double factor);
    void scale(double factor);
    double squared_norm() const;
    bool finite() const;
};

struct LossEval {
    double value = 0.0;
    PoseParamGrad d_params;
};

// Scalar loss of the decoded model output, with its gradient.
using ParamLoss = std::function<LossEval(const PoseParams&)>;

struct GradientResult {
    double loss = 0.0;
    ParamGradients grads;
    PoseParams params;
};

// Exact reverse-accumulation gradient of `loss_fn(predict(state, features))`
// with respect to every weight and bias. Throws GradientInvalid on a
// non-finite loss or gradient.
GradientResult loss_gradient(const RegressorState& state, const Eigen::VectorXd& features,
                             const ParamLoss& loss_fn);

struct AdamState {
    std::vector<Eigen::MatrixXd> m_w, v_w;
    std::vector<Eigen::VectorXd> m_b, v_b;
    long step_count = 0;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEpsilon = 1e-8;

    static AdamState init(const RegressorState& state, double learning_rate, double beta1);
};

void adam_step(RegressorState& state, AdamState& adam, const ParamGradients& grads);

struct TeacherState {
    RegressorState shadow;
    double ema_decay = 0.99;

    static TeacherState init(const RegressorState& student, double ema_decay);
};

// teacher <- decay * teacher + (1 - decay) * student, per parameter.
void ema_update(TeacherState& teacher, const RegressorState& student);

struct Snapshot {
    RegressorState model;
    AdamState adam;
};

Snapshot snapshot(const RegressorState& state, const AdamState& adam);
void restore(const Snapshot& snap, RegressorState& state, AdamState& adam);

bool states_equal(const RegressorState& a, const RegressorState& b);
std::uint64_t state_digest(const RegressorState& state);

// Flat binary checkpoint: header with dims, then parameters in layer order
// as little-endian 64-bit floats.
void save_checkpoint(const std::string& path, const RegressorState& state);
RegressorState load_checkpoint(const std::string& path);

}  // namespace poseadapt
