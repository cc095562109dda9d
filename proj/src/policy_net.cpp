#include "mg2fn/policy_net.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "mg2fn/error.hpp"

namespace mg2fn {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// ParameterSet

std::size_t ParameterSet::size() const {
  std::size_t n = 1;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

double& ParameterSet::at(std::size_t flat_index) {
  for (auto& l : layers) {
    const auto w = static_cast<std::size_t>(l.weight.size());
    if (flat_index < w) return l.weight.data()[flat_index];
    flat_index -= w;
    const auto b = static_cast<std::size_t>(l.bias.size());
    if (flat_index < b) return l.bias.data()[flat_index];
    flat_index -= b;
  }
  if (flat_index == 0) return log_z;
  throw Error(ErrorCode::DimensionMismatch, "parameter index out of range");
}

double ParameterSet::at(std::size_t flat_index) const { return const_cast<ParameterSet*>(this)->at(flat_index); }

bool ParameterSet::all_finite() const {
  if (!std::isfinite(log_z)) return false;
  return std::all_of(layers.begin(), layers.end(),
                     [](const DenseLayer& l) { return l.weight.allFinite() && l.bias.allFinite(); });
}

bool ParameterSet::same_shape(const ParameterSet& other) const {
  if (layers.size() != other.layers.size()) return false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].weight.rows() != other.layers[i].weight.rows() ||
        layers[i].weight.cols() != other.layers[i].weight.cols() ||
        layers[i].bias.size() != other.layers[i].bias.size()) {
      return false;
    }
  }
  return true;
}

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet out;
  for (const auto& l : layers) {
    out.layers.push_back({MatrixXd::Zero(l.weight.rows(), l.weight.cols()), VectorXd::Zero(l.bias.size())});
  }
  return out;
}

// ---------------------------------------------------------------------------
// PolicyNetwork

PolicyNetwork::PolicyNetwork(NetworkShape shape, Rng& rng) : shape_(std::move(shape)) {
  if (shape_.input_dim == 0 || shape_.action_count == 0) {
    throw Error(ErrorCode::ValidationError, "network needs positive input and action dimensions");
  }
  std::vector<std::size_t> dims{shape_.input_dim};
  dims.insert(dims.end(), shape_.hidden.begin(), shape_.hidden.end());
  dims.push_back(shape_.action_count * (shape_.backward_head ? 2 : 1));
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const auto fan_in = static_cast<Eigen::Index>(dims[i]);
    const auto fan_out = static_cast<Eigen::Index>(dims[i + 1]);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    DenseLayer layer{MatrixXd(fan_out, fan_in), VectorXd::Zero(fan_out)};
    // Row-major fill order keeps initialization independent of Eigen's layout.
    for (Eigen::Index r = 0; r < fan_out; ++r) {
      for (Eigen::Index c = 0; c < fan_in; ++c) layer.weight(r, c) = rng.uniform(-bound, bound);
    }
    params_.layers.push_back(std::move(layer));
  }
  params_.log_z = 0.0;
}

MatrixXd PolicyNetwork::logits(const MatrixXd& inputs) const {
  MatrixXd x = inputs;
  for (std::size_t i = 0; i < params_.layers.size(); ++i) {
    const auto& l = params_.layers[i];
    MatrixXd z = l.weight * x;
    z.colwise() += l.bias;
    if (i + 1 < params_.layers.size()) {
      x = z.unaryExpr([](double v) { return v > 0.0 ? v : kLeakySlope * v; });
    } else {
      x = std::move(z);
    }
  }
  return x;
}

ForwardPass PolicyNetwork::forward(const MatrixXd& inputs) const {
  ForwardPass pass;
  MatrixXd x = inputs;
  for (std::size_t i = 0; i < params_.layers.size(); ++i) {
    const auto& l = params_.layers[i];
    pass.inputs.push_back(x);
    MatrixXd z = l.weight * x;
    z.colwise() += l.bias;
    if (i + 1 < params_.layers.size()) {
      x = z.unaryExpr([](double v) { return v > 0.0 ? v : kLeakySlope * v; });
      pass.pre_activations.push_back(std::move(z));
    } else {
      pass.output = std::move(z);
    }
  }
  return pass;
}

ParameterSet PolicyNetwork::backward(const ForwardPass& pass, const MatrixXd& d_output) const {
  ParameterSet grads = params_.zeros_like();
  MatrixXd delta = d_output;
  for (std::size_t i = params_.layers.size(); i-- > 0;) {
    grads.layers[i].weight = delta * pass.inputs[i].transpose();
    grads.layers[i].bias = delta.rowwise().sum();
    if (i == 0) break;
    MatrixXd upstream = params_.layers[i].weight.transpose() * delta;
    const MatrixXd& z = pass.pre_activations[i - 1];
    delta = upstream.cwiseProduct(z.unaryExpr([](double v) { return v > 0.0 ? 1.0 : kLeakySlope; }));
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Policies

std::vector<double> masked_softmax(std::span<const double> logits, std::span<const ActionId> mask) {
  if (mask.empty()) throw Error(ErrorCode::EmptyMask, "softmax over an empty action mask");
  std::vector<double> probs(logits.size(), 0.0);
  double hi = -std::numeric_limits<double>::infinity();
  for (ActionId a : mask) hi = std::max(hi, logits[a.index]);
  double total = 0.0;
  for (ActionId a : mask) {
    probs[a.index] = std::exp(logits[a.index] - hi);
    total += probs[a.index];
  }
  for (ActionId a : mask) probs[a.index] /= total;
  return probs;
}

PolicyOutput forward_policy(const PolicyNetwork& net, const Environment& env, const State& state,
                            std::span<const ActionId> mask) {
  if (mask.empty()) throw Error(ErrorCode::EmptyMask, "forward policy needs a nonempty mask");
  const auto encoded = env.encode(state);
  const MatrixXd input = Eigen::Map<const VectorXd>(encoded.data(), static_cast<Eigen::Index>(encoded.size()));
  PolicyOutput out;
  out.pass = net.forward(input);
  const auto head = std::span<const double>(out.pass.output.data(), net.action_count());
  out.forward_probs = masked_softmax(head, mask);
  return out;
}

std::vector<double> backward_policy(const PolicyNetwork& net, const Environment& env, const State& state,
                                    BackwardPolicyMode mode) {
  const auto parents = env.parent_actions(state);
  if (parents.empty()) throw Error(ErrorCode::RootHasNoParents, "the initial state has no parents");
  if (mode == BackwardPolicyMode::Uniform || !net.has_backward_head()) {
    return std::vector<double>(parents.size(), 1.0 / static_cast<double>(parents.size()));
  }
  const auto encoded = env.encode(state);
  const MatrixXd input = Eigen::Map<const VectorXd>(encoded.data(), static_cast<Eigen::Index>(encoded.size()));
  const MatrixXd out = net.logits(input);
  const auto head = std::span<const double>(out.data() + net.action_count(), net.action_count());
  const auto full = masked_softmax(head, parents);
  std::vector<double> probs;
  probs.reserve(parents.size());
  for (ActionId a : parents) probs.push_back(full[a.index]);
  return probs;
}

// ---------------------------------------------------------------------------
// Adam

AdamOptimizer::AdamOptimizer(const PolicyNetwork& net, AdamConfig config)
    : config_(config), m_(net.parameters().zeros_like()), v_(net.parameters().zeros_like()) {}

void AdamOptimizer::apply(PolicyNetwork& net, const ParameterSet& grads) {
  if (!grads.same_shape(net.parameters()) || !m_.same_shape(grads)) {
    throw Error(ErrorCode::DimensionMismatch, "gradient shape does not match the network");
  }
  if (!grads.all_finite()) throw Error(ErrorCode::NonFiniteGradient, "gradient contains NaN or Inf");
  ++step_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  const double eps = config_.epsilon;
  auto update = [&](auto& p, const auto& g, auto& m, auto& v, double lr) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    p -= (lr * (m / c1).array() / ((v / c2).array().sqrt() + eps)).matrix();
  };
  auto& params = net.parameters();
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    update(params.layers[i].weight, grads.layers[i].weight, m_.layers[i].weight, v_.layers[i].weight,
           config_.learning_rate);
    update(params.layers[i].bias, grads.layers[i].bias, m_.layers[i].bias, v_.layers[i].bias,
           config_.learning_rate);
  }
  m_.log_z = b1 * m_.log_z + (1.0 - b1) * grads.log_z;
  v_.log_z = b2 * v_.log_z + (1.0 - b2) * grads.log_z * grads.log_z;
  params.log_z -= config_.log_z_learning_rate * (m_.log_z / c1) / (std::sqrt(v_.log_z / c2) + eps);
}

// ---------------------------------------------------------------------------
// Checkpoints

struct CheckpointAccess {
  static ParameterSet& m(AdamOptimizer& o) { return o.m_; }
  static ParameterSet& v(AdamOptimizer& o) { return o.v_; }
  static std::uint64_t& step(AdamOptimizer& o) { return o.step_; }
  static AdamConfig& config(AdamOptimizer& o) { return o.config_; }
};

namespace {

json layers_to_json(const ParameterSet& set) {
  json layers = json::array();
  for (const auto& l : set.layers) {
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(l.weight.size()));
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) w.push_back(l.weight(r, c));
    }
    layers.push_back({{"rows", l.weight.rows()},
                      {"cols", l.weight.cols()},
                      {"weight", w},
                      {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
  }
  return {{"layers", layers}, {"log_z", set.log_z}};
}

ParameterSet layers_from_json(const json& j) {
  ParameterSet set;
  for (const auto& jl : j.at("layers")) {
    const auto rows = jl.at("rows").get<Eigen::Index>();
    const auto cols = jl.at("cols").get<Eigen::Index>();
    const auto w = jl.at("weight").get<std::vector<double>>();
    const auto b = jl.at("bias").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(w.size()) != rows * cols || static_cast<Eigen::Index>(b.size()) != rows) {
      throw Error(ErrorCode::ParseError, "checkpoint layer size does not match its shape");
    }
    DenseLayer layer{MatrixXd(rows, cols), VectorXd(rows)};
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) layer.weight(r, c) = w[static_cast<std::size_t>(r * cols + c)];
      layer.bias(r) = b[static_cast<std::size_t>(r)];
    }
    set.layers.push_back(std::move(layer));
  }
  set.log_z = j.at("log_z").get<double>();
  return set;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const PolicyNetwork& net, const AdamOptimizer& opt) {
  const auto& s = net.shape();
  const auto& c = opt.config();
  json j{{"format", "mg2fn-checkpoint-1"},
         {"shape",
          {{"input_dim", s.input_dim},
           {"action_count", s.action_count},
           {"hidden", s.hidden},
           {"backward_head", s.backward_head}}},
         {"parameters", layers_to_json(net.parameters())},
         {"optimizer",
          {{"learning_rate", c.learning_rate},
           {"log_z_learning_rate", c.log_z_learning_rate},
           {"beta1", c.beta1},
           {"beta2", c.beta2},
           {"epsilon", c.epsilon},
           {"step", opt.step_count()},
           {"first_moment", layers_to_json(opt.first_moment())},
           {"second_moment", layers_to_json(opt.second_moment())}}}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write checkpoint " + path.string());
  out << j.dump() << '\n';
}

std::pair<PolicyNetwork, AdamOptimizer> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read checkpoint " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
  try {
    NetworkShape shape;
    const auto& js = j.at("shape");
    shape.input_dim = js.at("input_dim").get<std::size_t>();
    shape.action_count = js.at("action_count").get<std::size_t>();
    shape.hidden = js.at("hidden").get<std::vector<std::size_t>>();
    shape.backward_head = js.at("backward_head").get<bool>();
    Rng scratch(0);
    PolicyNetwork net(shape, scratch);
    ParameterSet params = layers_from_json(j.at("parameters"));
    if (!params.same_shape(net.parameters())) throw Error(ErrorCode::ParseError, "checkpoint shape mismatch");
    net.parameters() = std::move(params);

    const auto& jo = j.at("optimizer");
    AdamConfig config{jo.at("learning_rate").get<double>(), jo.at("log_z_learning_rate").get<double>(),
                      jo.at("beta1").get<double>(), jo.at("beta2").get<double>(), jo.at("epsilon").get<double>()};
    AdamOptimizer opt(net, config);
    CheckpointAccess::step(opt) = jo.at("step").get<std::uint64_t>();
    CheckpointAccess::m(opt) = layers_from_json(jo.at("first_moment"));
    CheckpointAccess::v(opt) = layers_from_json(jo.at("second_moment"));
    if (!CheckpointAccess::m(opt).same_shape(net.parameters()) ||
        !CheckpointAccess::v(opt).same_shape(net.parameters())) {
      throw Error(ErrorCode::ParseError, "optimizer moment shape mismatch");
    }
    return {std::move(net), std::move(opt)};
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
}

// ---------------------------------------------------------------------------
// Gradient check

double gradient_check(const PolicyNetwork& net, const LossFunction& loss_fn, Rng& rng, std::size_t samples,
                      double h) {
  const auto analytic = loss_fn(net).second;
  const std::size_t n = net.parameter_count();
  std::vector<std::size_t> indices;
  if (samples >= n) {
    for (std::size_t i = 0; i < n; ++i) indices.push_back(i);
  } else {
    // log_z is always included; the rest are drawn uniformly.
    indices.push_back(n - 1);
    while (indices.size() < samples) indices.push_back(static_cast<std::size_t>(rng.next() % (n - 1)));
  }
  PolicyNetwork probe = net;
  double worst = 0.0;
  for (std::size_t idx : indices) {
    const double original = probe.parameters().at(idx);
    probe.parameters().at(idx) = original + h;
    const double up = loss_fn(probe).first;
    probe.parameters().at(idx) = original - h;
    const double down = loss_fn(probe).first;
    probe.parameters().at(idx) = original;
    const double numeric = (up - down) / (2.0 * h);
    const double exact = analytic.at(idx);
    const double scale = std::max({1.0, std::abs(exact), std::abs(numeric)});
    worst = std::max(worst, std::abs(exact - numeric) / scale);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// PolicyEvaluator

std::span<const double> PolicyEvaluator::forward_probs(const State& state, const StateKey& key) {
  if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  const auto mask = env_->legal_actions(state);
  if (mask.empty()) throw Error(ErrorCode::EmptyMask, "forward policy requested at a terminal state");
  input_.resize(static_cast<Eigen::Index>(env_->encoding_dim()));
  env_->encode(state, std::span<double>(input_.data(), env_->encoding_dim()));
  const MatrixXd out = net_->logits(input_);
  auto probs = masked_softmax(std::span<const double>(out.data(), net_->action_count()), mask);
  return cache_.emplace(key, std::move(probs)).first->second;
}

}  // namespace mg2fn
