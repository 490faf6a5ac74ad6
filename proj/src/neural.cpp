#include "warpfield/neural.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "warpfield/errors.hpp"
#include "warpfield/json_writer.hpp"

namespace warpfield::nn {

namespace {

double relu(double z) { return z > 0.0 ? z : 0.0; }
double relu_gate(double z) { return z > 0.0 ? 1.0 : 0.0; }

// clamped to the open interval so saturated heads still satisfy (0,1)
double sigmoid(double z) {
    const double y = 1.0 / (1.0 + std::exp(-z));
    constexpr double floor = 1e-300;
    const double ceil = std::nextafter(1.0, 0.0);
    return std::min(std::max(y, floor), ceil);
}

} // namespace

MlpModel MlpModel::create(const std::vector<int>& sizes, OutputActivation out,
                          std::uint64_t seed) {
    if (sizes.size() < 2) throw config_error("MlpModel: need at least input and output layers");
    for (int s : sizes)
        if (s < 1) throw config_error("MlpModel: layer sizes must be positive");

    MlpModel model;
    model.layer_sizes = sizes;
    model.output_activation = out;
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        const int fan_in = sizes[l];
        const double bound = std::sqrt(6.0 / fan_in);
        std::uniform_real_distribution<double> dist(-bound, bound);
        Eigen::MatrixXd w(sizes[l + 1], sizes[l]);
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = dist(rng);
        model.weights.push_back(std::move(w));
        model.biases.push_back(Eigen::VectorXd::Zero(sizes[l + 1]));
    }
    model.input_mean = Eigen::VectorXd::Zero(sizes.front());
    model.input_scale = Eigen::VectorXd::Ones(sizes.front());
    return model;
}

void MlpModel::set_standardization(const Eigen::VectorXd& mean, const Eigen::VectorXd& scale) {
    if (mean.size() != input_size() || scale.size() != input_size())
        throw config_error("MlpModel: standardization size does not match input layer");
    if ((scale.array() <= 0.0).any())
        throw config_error("MlpModel: standardization scales must be strictly positive");
    input_mean = mean;
    input_scale = scale;
}

void MlpModel::validate() const {
    if (layer_sizes.size() < 2) throw config_error("MlpModel: missing layers");
    if (weights.size() != layer_sizes.size() - 1 || biases.size() != weights.size())
        throw config_error("MlpModel: layer count mismatch");
    for (std::size_t l = 0; l < weights.size(); ++l) {
        if (weights[l].rows() != layer_sizes[l + 1] || weights[l].cols() != layer_sizes[l])
            throw config_error("MlpModel: weight matrix shape mismatch at layer " +
                               std::to_string(l));
        if (biases[l].size() != layer_sizes[l + 1])
            throw config_error("MlpModel: bias shape mismatch at layer " + std::to_string(l));
    }
    if (input_mean.size() != input_size() || input_scale.size() != input_size())
        throw config_error("MlpModel: standardization shape mismatch");
    if ((input_scale.array() <= 0.0).any())
        throw config_error("MlpModel: standardization scales must be strictly positive");
}

Eigen::VectorXd forward(const MlpModel& model, const Eigen::VectorXd& input, Tape* tape) {
    if (input.size() != model.input_size())
        throw config_error("forward: input length does not match model");
    Eigen::VectorXd a = (input - model.input_mean).cwiseQuotient(model.input_scale);
    if (tape) {
        tape->input_std = a;
        tape->pre.clear();
        tape->post.clear();
    }
    const int layers = model.layer_count();
    for (int l = 0; l < layers; ++l) {
        Eigen::VectorXd z = model.weights[l] * a + model.biases[l];
        if (l + 1 < layers) {
            a = z.unaryExpr([](double v) { return relu(v); });
        } else if (model.output_activation == OutputActivation::Sigmoid) {
            a = z.unaryExpr([](double v) { return sigmoid(v); });
        } else {
            a = z;
        }
        if (tape) {
            tape->pre.push_back(std::move(z));
            tape->post.push_back(a);
        }
    }
    return a;
}

MlpGradients MlpGradients::zero(const MlpModel& model) {
    MlpGradients g;
    for (int l = 0; l < model.layer_count(); ++l) {
        g.weights.emplace_back(
            Eigen::MatrixXd::Zero(model.weights[l].rows(), model.weights[l].cols()));
        g.biases.emplace_back(Eigen::VectorXd::Zero(model.biases[l].size()));
    }
    return g;
}

void MlpGradients::add_scaled(const MlpGradients& other, double s) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
        weights[l] += s * other.weights[l];
        biases[l] += s * other.biases[l];
    }
}

void MlpGradients::scale(double s) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
        weights[l] *= s;
        biases[l] *= s;
    }
}

double MlpGradients::squared_norm() const {
    double total = 0.0;
    for (std::size_t l = 0; l < weights.size(); ++l)
        total += weights[l].squaredNorm() + biases[l].squaredNorm();
    return total;
}

namespace {

void check_tape(const MlpModel& model, const Tape& tape) {
    if (static_cast<int>(tape.pre.size()) != model.layer_count() ||
        static_cast<int>(tape.post.size()) != model.layer_count() ||
        tape.input_std.size() != model.input_size())
        throw config_error("backward: tape does not match model (stale or mismatched)");
    for (int l = 0; l < model.layer_count(); ++l)
        if (tape.pre[l].size() != model.layer_sizes[l + 1])
            throw config_error("backward: tape layer shape mismatch");
}

} // namespace

Eigen::VectorXd backward(const MlpModel& model, const Tape& tape,
                         const Eigen::VectorXd& output_gradient, MlpGradients& grads) {
    check_tape(model, tape);
    if (output_gradient.size() != model.output_size())
        throw config_error("backward: output gradient length mismatch");

    const int layers = model.layer_count();
    Eigen::VectorXd delta;
    if (model.output_activation == OutputActivation::Sigmoid) {
        const Eigen::VectorXd& y = tape.post[layers - 1];
        delta = output_gradient.cwiseProduct(
            y.cwiseProduct(Eigen::VectorXd::Ones(y.size()) - y));
    } else {
        delta = output_gradient;
    }
    for (int l = layers - 1; l >= 0; --l) {
        const Eigen::VectorXd& a_prev = l > 0 ? tape.post[l - 1] : tape.input_std;
        grads.weights[l].noalias() += delta * a_prev.transpose();
        grads.biases[l] += delta;
        if (l > 0) {
            delta = model.weights[l].transpose() * delta;
            delta = delta.cwiseProduct(
                tape.pre[l - 1].unaryExpr([](double z) { return relu_gate(z); }));
        } else {
            delta = model.weights[0].transpose() * delta;
        }
    }
    return delta.cwiseQuotient(model.input_scale);
}

Eigen::MatrixXd forward_batch(const MlpModel& model, const Eigen::MatrixXd& inputs,
                              BatchTape* tape) {
    if (inputs.rows() != model.input_size())
        throw config_error("forward_batch: input rows do not match model");
    Eigen::MatrixXd a =
        (inputs.colwise() - model.input_mean).array().colwise() / model.input_scale.array();
    if (tape) {
        tape->input_std = a;
        tape->pre.clear();
        tape->post.clear();
    }
    const int layers = model.layer_count();
    for (int l = 0; l < layers; ++l) {
        Eigen::MatrixXd z = (model.weights[l] * a).colwise() + model.biases[l];
        if (l + 1 < layers) {
            a = z.unaryExpr([](double v) { return relu(v); });
        } else if (model.output_activation == OutputActivation::Sigmoid) {
            a = z.unaryExpr([](double v) { return sigmoid(v); });
        } else {
            a = z;
        }
        if (tape) {
            tape->pre.push_back(std::move(z));
            tape->post.push_back(a);
        }
    }
    return a;
}

Eigen::MatrixXd backward_batch(const MlpModel& model, const BatchTape& tape,
                               const Eigen::MatrixXd& output_gradients, MlpGradients& grads) {
    const int layers = model.layer_count();
    if (static_cast<int>(tape.pre.size()) != layers)
        throw config_error("backward_batch: tape does not match model");
    Eigen::MatrixXd delta;
    if (model.output_activation == OutputActivation::Sigmoid) {
        const Eigen::MatrixXd& y = tape.post[layers - 1];
        delta = output_gradients.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix()));
    } else {
        delta = output_gradients;
    }
    for (int l = layers - 1; l >= 0; --l) {
        const Eigen::MatrixXd& a_prev = l > 0 ? tape.post[l - 1] : tape.input_std;
        grads.weights[l].noalias() += delta * a_prev.transpose();
        grads.biases[l] += delta.rowwise().sum();
        if (l > 0) {
            delta = model.weights[l].transpose() * delta;
            delta = delta.cwiseProduct(
                tape.pre[l - 1].unaryExpr([](double z) { return relu_gate(z); }));
        } else {
            delta = model.weights[0].transpose() * delta;
        }
    }
    return delta.array().colwise() / model.input_scale.array();
}

std::pair<Eigen::VectorXd, Eigen::MatrixXd> forward_with_tangents(
    const MlpModel& model, const Eigen::VectorXd& input, const Eigen::MatrixXd& tangents) {
    if (input.size() != model.input_size() || tangents.rows() != model.input_size())
        throw config_error("forward_with_tangents: dimension mismatch");
    Eigen::VectorXd a = (input - model.input_mean).cwiseQuotient(model.input_scale);
    Eigen::MatrixXd a_dot = tangents.array().colwise() / model.input_scale.array();
    const int layers = model.layer_count();
    for (int l = 0; l < layers; ++l) {
        const Eigen::VectorXd z = model.weights[l] * a + model.biases[l];
        Eigen::MatrixXd z_dot = model.weights[l] * a_dot;
        if (l + 1 < layers) {
            a = z.unaryExpr([](double v) { return relu(v); });
            const Eigen::VectorXd gate = z.unaryExpr([](double v) { return relu_gate(v); });
            a_dot = z_dot.array().colwise() * gate.array();
        } else if (model.output_activation == OutputActivation::Sigmoid) {
            a = z.unaryExpr([](double v) { return sigmoid(v); });
            const Eigen::VectorXd gate = a.cwiseProduct(
                (1.0 - a.array()).matrix());
            a_dot = z_dot.array().colwise() * gate.array();
        } else {
            a = z;
            a_dot = std::move(z_dot);
        }
    }
    return {a, a_dot};
}

ContextBatch::ContextBatch(const MlpModel& model, int point_dims)
    : model_(model), point_dims_(point_dims) {
    if (point_dims < 1 || point_dims >= model.input_size())
        throw config_error("ContextBatch: point dims must split the input layer");
}

void ContextBatch::set_context(const Eigen::VectorXd& context_raw) {
    const int ctx_dims = model_.input_size() - point_dims_;
    if (context_raw.size() != ctx_dims)
        throw config_error("ContextBatch: context length mismatch");
    context_std_ = (context_raw - model_.input_mean.tail(ctx_dims))
                       .cwiseQuotient(model_.input_scale.tail(ctx_dims));
    context_term_ = model_.weights[0].rightCols(ctx_dims) * context_std_ + model_.biases[0];
}

Eigen::MatrixXd ContextBatch::forward(const Eigen::MatrixXd& points) {
    if (points.rows() != point_dims_)
        throw config_error("ContextBatch: point rows mismatch");
    if (context_term_.size() == 0) throw config_error("ContextBatch: context not set");
    points_std_ = (points.colwise() - model_.input_mean.head(point_dims_)).array().colwise() /
                  model_.input_scale.head(point_dims_).array();
    pre_.clear();
    post_.clear();
    const int layers = model_.layer_count();
    Eigen::MatrixXd a;
    for (int l = 0; l < layers; ++l) {
        Eigen::MatrixXd z;
        if (l == 0)
            z = (model_.weights[0].leftCols(point_dims_) * points_std_).colwise() + context_term_;
        else
            z = (model_.weights[l] * a).colwise() + model_.biases[l];
        if (l + 1 < layers) {
            a = z.unaryExpr([](double v) { return relu(v); });
        } else if (model_.output_activation == OutputActivation::Sigmoid) {
            a = z.unaryExpr([](double v) { return sigmoid(v); });
        } else {
            a = z;
        }
        pre_.push_back(std::move(z));
        post_.push_back(a);
    }
    return post_.back();
}

void ContextBatch::backward(const Eigen::MatrixXd& output_gradients, MlpGradients& grads) {
    const int layers = model_.layer_count();
    if (pre_.empty()) throw config_error("ContextBatch: no recorded forward pass");
    Eigen::MatrixXd delta;
    if (model_.output_activation == OutputActivation::Sigmoid) {
        const Eigen::MatrixXd& y = post_[layers - 1];
        delta = output_gradients.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix()));
    } else {
        delta = output_gradients;
    }
    for (int l = layers - 1; l >= 1; --l) {
        grads.weights[l].noalias() += delta * post_[l - 1].transpose();
        grads.biases[l] += delta.rowwise().sum();
        delta = model_.weights[l].transpose() * delta;
        delta = delta.cwiseProduct(
            pre_[l - 1].unaryExpr([](double z) { return relu_gate(z); }));
    }
    // First layer: the context columns see the same input for every sample,
    // so their weight gradient is rank one.
    const Eigen::VectorXd delta_sum = delta.rowwise().sum();
    grads.weights[0].leftCols(point_dims_).noalias() += delta * points_std_.transpose();
    grads.weights[0].rightCols(model_.input_size() - point_dims_).noalias() +=
        delta_sum * context_std_.transpose();
    grads.biases[0] += delta_sum;
}

TrainState TrainState::create(const MlpModel& model, double learning_rate) {
    TrainState state;
    state.learning_rate = learning_rate;
    state.first_moment = MlpGradients::zero(model);
    state.second_moment = MlpGradients::zero(model);
    return state;
}

void optimizer_step(MlpModel& model, TrainState& state, const MlpGradients& grads) {
    if (grads.weights.size() != model.weights.size())
        throw config_error("optimizer_step: gradient shape mismatch");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, state.step);
    const double bc2 = 1.0 - std::pow(state.beta2, state.step);
    for (std::size_t l = 0; l < model.weights.size(); ++l) {
        if (grads.weights[l].rows() != model.weights[l].rows() ||
            grads.weights[l].cols() != model.weights[l].cols())
            throw config_error("optimizer_step: gradient shape mismatch at layer " +
                               std::to_string(l));
        auto update = [&](auto& m, auto& v, const auto& g, auto& param) {
            m = state.beta1 * m + (1.0 - state.beta1) * g;
            v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
            param.array() -= state.learning_rate * (m.array() / bc1) /
                             ((v.array() / bc2).sqrt() + state.epsilon);
        };
        update(state.first_moment.weights[l], state.second_moment.weights[l], grads.weights[l],
               model.weights[l]);
        update(state.first_moment.biases[l], state.second_moment.biases[l], grads.biases[l],
               model.biases[l]);
    }
}

std::string model_to_json(const MlpModel& model) {
    model.validate();
    JsonWriter w;
    w.begin_object();
    w.key("schema");
    w.value("warpfield-mlp/1");
    w.key("layer_sizes");
    w.begin_array();
    for (int s : model.layer_sizes) w.value(s);
    w.end_array();
    w.key("hidden_activation");
    w.value("relu");
    w.key("output_activation");
    w.value(model.output_activation == OutputActivation::Sigmoid ? "sigmoid" : "linear");
    w.key("standardize");
    w.begin_object();
    w.key("mean");
    w.begin_array();
    for (Eigen::Index i = 0; i < model.input_mean.size(); ++i) w.value(model.input_mean[i]);
    w.end_array();
    w.key("scale");
    w.begin_array();
    for (Eigen::Index i = 0; i < model.input_scale.size(); ++i) w.value(model.input_scale[i]);
    w.end_array();
    w.end_object();
    w.key("weights");
    w.begin_array();
    for (const auto& mat : model.weights) {
        w.begin_array();
        for (Eigen::Index r = 0; r < mat.rows(); ++r) {
            w.begin_array();
            for (Eigen::Index c = 0; c < mat.cols(); ++c) w.value(mat(r, c));
            w.end_array();
        }
        w.end_array();
    }
    w.end_array();
    w.key("biases");
    w.begin_array();
    for (const auto& vec : model.biases) {
        w.begin_array();
        for (Eigen::Index i = 0; i < vec.size(); ++i) w.value(vec[i]);
        w.end_array();
    }
    w.end_array();
    w.end_object();
    return w.str();
}

namespace {

using nlohmann::json;

json parse_json(const std::string& text, const std::string& what) {
    json doc = json::parse(text, nullptr, false);
    if (doc.is_discarded()) throw data_error(what + ": malformed JSON document");
    return doc;
}

Eigen::VectorXd vector_from_json(const json& arr, const std::string& field) {
    if (!arr.is_array()) throw data_error("model schema: " + field + " must be an array");
    Eigen::VectorXd v(arr.size());
    for (std::size_t i = 0; i < arr.size(); ++i) {
        if (!arr[i].is_number()) throw data_error("model schema: " + field + " must be numeric");
        v[static_cast<Eigen::Index>(i)] = arr[i].get<double>();
    }
    return v;
}

} // namespace

MlpModel model_from_json(const std::string& text) {
    const json doc = parse_json(text, "model");
    if (!doc.is_object() || doc.value("schema", "") != "warpfield-mlp/1")
        throw data_error("model schema: expected schema \"warpfield-mlp/1\"");
    if (!doc.contains("layer_sizes") || !doc["layer_sizes"].is_array())
        throw data_error("model schema: missing layer_sizes");

    MlpModel model;
    for (const auto& s : doc["layer_sizes"]) {
        if (!s.is_number_integer() || s.get<int>() < 1)
            throw data_error("model schema: layer_sizes entries must be positive integers");
        model.layer_sizes.push_back(s.get<int>());
    }
    if (model.layer_sizes.size() < 2) throw data_error("model schema: layer_sizes too short");

    if (doc.value("hidden_activation", "") != "relu")
        throw data_error("model schema: hidden_activation must be \"relu\"");
    const std::string out_act = doc.value("output_activation", "");
    if (out_act == "linear")
        model.output_activation = OutputActivation::Linear;
    else if (out_act == "sigmoid")
        model.output_activation = OutputActivation::Sigmoid;
    else
        throw data_error("model schema: output_activation must be linear or sigmoid");

    if (!doc.contains("weights") || !doc["weights"].is_array() ||
        doc["weights"].size() != model.layer_sizes.size() - 1)
        throw data_error("model schema: weights must list one matrix per layer transition");
    for (std::size_t l = 0; l + 1 < model.layer_sizes.size(); ++l) {
        const auto& mat = doc["weights"][l];
        const int rows = model.layer_sizes[l + 1];
        const int cols = model.layer_sizes[l];
        if (!mat.is_array() || static_cast<int>(mat.size()) != rows)
            throw data_error("model schema: weights[" + std::to_string(l) + "] has wrong row count for layer_sizes");
        Eigen::MatrixXd w(rows, cols);
        for (int r = 0; r < rows; ++r) {
            if (!mat[r].is_array() || static_cast<int>(mat[r].size()) != cols)
                throw data_error("model schema: weights[" + std::to_string(l) +
                                 "] row " + std::to_string(r) + " has wrong column count");
            for (int c = 0; c < cols; ++c) w(r, c) = mat[r][c].get<double>();
        }
        model.weights.push_back(std::move(w));
    }

    if (!doc.contains("biases") || !doc["biases"].is_array() ||
        doc["biases"].size() != model.layer_sizes.size() - 1)
        throw data_error("model schema: biases must list one vector per layer transition");
    for (std::size_t l = 0; l + 1 < model.layer_sizes.size(); ++l) {
        Eigen::VectorXd b = vector_from_json(doc["biases"][l], "biases[" + std::to_string(l) + "]");
        if (b.size() != model.layer_sizes[l + 1])
            throw data_error("model schema: biases[" + std::to_string(l) +
                             "] length does not match layer_sizes");
        model.biases.push_back(std::move(b));
    }

    if (!doc.contains("standardize") || !doc["standardize"].is_object())
        throw data_error("model schema: missing standardize block");
    model.input_mean = vector_from_json(doc["standardize"]["mean"], "standardize.mean");
    model.input_scale = vector_from_json(doc["standardize"]["scale"], "standardize.scale");
    if (model.input_mean.size() != model.input_size() ||
        model.input_scale.size() != model.input_size())
        throw data_error("model schema: standardize vectors must match the input layer size");
    if ((model.input_scale.array() <= 0.0).any())
        throw data_error("model schema: standardize.scale entries must be positive");
    return model;
}

void save_model(const MlpModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("save_model: cannot open " + path);
    out << model_to_json(model) << '\n';
    if (!out) throw data_error("save_model: write failed for " + path);
}

MlpModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("load_model: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return model_from_json(buf.str());
}

} // namespace warpfield::nn
