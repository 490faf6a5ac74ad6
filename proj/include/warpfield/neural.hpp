#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace warpfield::nn {

enum class OutputActivation { Linear, Sigmoid };

/// Fully connected network: ReLU hidden layers, linear or sigmoid output,
/// and a fixed per-feature input standardization baked into the model.
struct MlpModel {
    std::vector<int> layer_sizes;           // [input, hidden..., output]
    std::vector<Eigen::MatrixXd> weights;   // weights[l] is sizes[l+1] × sizes[l]
    std::vector<Eigen::VectorXd> biases;
    OutputActivation output_activation = OutputActivation::Linear;
    Eigen::VectorXd input_mean;
    Eigen::VectorXd input_scale;

    /// He-style uniform initialization scaled by fan-in, zero biases,
    /// identity standardization.
    static MlpModel create(const std::vector<int>& sizes, OutputActivation out,
                           std::uint64_t seed);

    int input_size() const { return layer_sizes.front(); }
    int output_size() const { return layer_sizes.back(); }
    int layer_count() const { return static_cast<int>(weights.size()); }

    void set_standardization(const Eigen::VectorXd& mean, const Eigen::VectorXd& scale);
    void validate() const;
};

/// Per-layer pre/post activations captured by forward for use in backward.
struct Tape {
    Eigen::VectorXd input_std;
    std::vector<Eigen::VectorXd> pre;
    std::vector<Eigen::VectorXd> post;
};

Eigen::VectorXd forward(const MlpModel& model, const Eigen::VectorXd& input,
                        Tape* tape = nullptr);

/// Gradient accumulator shaped like the model parameters.
struct MlpGradients {
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;

    static MlpGradients zero(const MlpModel& model);
    void add_scaled(const MlpGradients& other, double scale);
    void scale(double s);
    double squared_norm() const;
};

/// Reverse-mode pass. Accumulates parameter gradients into `grads` and
/// returns the gradient with respect to the raw (unstandardized) input.
Eigen::VectorXd backward(const MlpModel& model, const Tape& tape,
                         const Eigen::VectorXd& output_gradient, MlpGradients& grads);

/// Column-batched variants; inputs/outputs have one column per sample.
struct BatchTape {
    Eigen::MatrixXd input_std;
    std::vector<Eigen::MatrixXd> pre;
    std::vector<Eigen::MatrixXd> post;
};

Eigen::MatrixXd forward_batch(const MlpModel& model, const Eigen::MatrixXd& inputs,
                              BatchTape* tape = nullptr);
Eigen::MatrixXd backward_batch(const MlpModel& model, const BatchTape& tape,
                               const Eigen::MatrixXd& output_gradients, MlpGradients& grads);

/// Forward-mode differentiation: propagates tangent columns alongside the
/// value, returning (output, output_tangents). tangents has input_size rows.
std::pair<Eigen::VectorXd, Eigen::MatrixXd> forward_with_tangents(const MlpModel& model,
                                                                  const Eigen::VectorXd& input,
                                                                  const Eigen::MatrixXd& tangents);

/// Batched evaluator for models whose input is [point ; context] with the
/// context block shared across the whole batch. The first-layer context term
/// is computed once per context, which removes the dominant cost when the
/// context is much wider than the point (confidence nets take a 3-vector
/// point against a full control grid).
class ContextBatch {
public:
    ContextBatch(const MlpModel& model, int point_dims);

    void set_context(const Eigen::VectorXd& context_raw);

    /// points: point_dims × n (raw). Returns outputs (out × n) and records
    /// the tape for backward.
    Eigen::MatrixXd forward(const Eigen::MatrixXd& points);

    /// Accumulates parameter gradients for the recorded batch.
    void backward(const Eigen::MatrixXd& output_gradients, MlpGradients& grads);

private:
    const MlpModel& model_;
    int point_dims_;
    Eigen::VectorXd context_std_;
    Eigen::VectorXd context_term_;  // W1_ctx · ctx̃ + b1
    Eigen::MatrixXd points_std_;
    std::vector<Eigen::MatrixXd> pre_;
    std::vector<Eigen::MatrixXd> post_;
};

/// Adam state; moments are zero at step 0.
struct TrainState {
    int step = 0;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    MlpGradients first_moment;
    MlpGradients second_moment;

    static TrainState create(const MlpModel& model, double learning_rate = 1e-3);
};

/// One Adam update with bias correction. Deterministic for identical inputs.
void optimizer_step(MlpModel& model, TrainState& state, const MlpGradients& grads);

/// JSON serialization (schema "warpfield-mlp/1", decimals with 17
/// significant digits so forward outputs round-trip bitwise).
void save_model(const MlpModel& model, const std::string& path);
MlpModel load_model(const std::string& path);

std::string model_to_json(const MlpModel& model);
MlpModel model_from_json(const std::string& text);

} // namespace warpfield::nn
