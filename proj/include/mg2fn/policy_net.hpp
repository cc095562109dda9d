#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mg2fn/environment.hpp"
#include "mg2fn/rng.hpp"

namespace mg2fn {

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

// Parameter-shaped values: gradients, optimizer moments.
struct ParameterSet {
  std::vector<DenseLayer> layers;
  double log_z = 0.0;

  std::size_t size() const;
  double& at(std::size_t flat_index);
  double at(std::size_t flat_index) const;
  bool all_finite() const;
  bool same_shape(const ParameterSet& other) const;
  ParameterSet zeros_like() const;
};

// Activations kept from a forward pass for backpropagation. Columns are
// batch entries.
struct ForwardPass {
  std::vector<Eigen::MatrixXd> inputs;       // input of each layer
  std::vector<Eigen::MatrixXd> pre_activations;
  Eigen::MatrixXd output;                    // logits, action_count (x2) rows
};

enum class BackwardPolicyMode { Uniform, Learned };

struct NetworkShape {
  std::size_t input_dim = 0;
  std::size_t action_count = 0;
  std::vector<std::size_t> hidden = {256, 256};
  bool backward_head = false;
};

// MLP trunk with LeakyReLU activations. The last layer holds the forward
// head (first action_count rows) and, when enabled, the backward head.
// log_z is the learned log-partition scalar.
class PolicyNetwork {
 public:
  static constexpr double kLeakySlope = 0.01;

  PolicyNetwork() = default;
  PolicyNetwork(NetworkShape shape, Rng& rng);

  const NetworkShape& shape() const { return shape_; }
  std::size_t input_dim() const { return shape_.input_dim; }
  std::size_t action_count() const { return shape_.action_count; }
  bool has_backward_head() const { return shape_.backward_head; }

  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }
  double log_z() const { return params_.log_z; }
  void set_log_z(double v) { params_.log_z = v; }

  std::size_t parameter_count() const { return params_.size(); }

  // inputs: input_dim x batch.
  Eigen::MatrixXd logits(const Eigen::MatrixXd& inputs) const;
  ForwardPass forward(const Eigen::MatrixXd& inputs) const;
  // d_output: same shape as pass.output. log_z gradient is left at zero.
  ParameterSet backward(const ForwardPass& pass, const Eigen::MatrixXd& d_output) const;

  bool all_finite() const { return params_.all_finite(); }

 private:
  NetworkShape shape_;
  ParameterSet params_;
};

// Softmax of `logits` restricted to `mask`, written over the full table
// (zeros off the mask). Throws EmptyMask.
std::vector<double> masked_softmax(std::span<const double> logits, std::span<const ActionId> mask);

struct PolicyOutput {
  std::vector<double> forward_probs;  // full action table, zero off-mask
  ForwardPass pass;
};

PolicyOutput forward_policy(const PolicyNetwork& net, const Environment& env, const State& state,
                            std::span<const ActionId> mask);

// Distribution over env.parent_actions(state), in that order.
// Throws RootHasNoParents.
std::vector<double> backward_policy(const PolicyNetwork& net, const Environment& env, const State& state,
                                    BackwardPolicyMode mode);

struct AdamConfig {
  double learning_rate = 1e-3;
  double log_z_learning_rate = 1e-1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class AdamOptimizer {
 public:
  AdamOptimizer() = default;
  AdamOptimizer(const PolicyNetwork& net, AdamConfig config);

  const AdamConfig& config() const { return config_; }
  std::uint64_t step_count() const { return step_; }
  const ParameterSet& first_moment() const { return m_; }
  const ParameterSet& second_moment() const { return v_; }

  // Bias-corrected adaptive-moment update. Throws NonFiniteGradient or
  // DimensionMismatch.
  void apply(PolicyNetwork& net, const ParameterSet& grads);

 private:
  friend struct CheckpointAccess;

  AdamConfig config_;
  ParameterSet m_;
  ParameterSet v_;
  std::uint64_t step_ = 0;
};

inline void apply_gradients(PolicyNetwork& net, AdamOptimizer& opt, const ParameterSet& grads) {
  opt.apply(net, grads);
}

void save_checkpoint(const std::filesystem::path& path, const PolicyNetwork& net, const AdamOptimizer& opt);
std::pair<PolicyNetwork, AdamOptimizer> load_checkpoint(const std::filesystem::path& path);

using LossFunction = std::function<std::pair<double, ParameterSet>(const PolicyNetwork&)>;

// Max over `samples` random parameters of |g_a - g_fd| / max(1, |g_a|, |g_fd|)
// with central differences of step h.
double gradient_check(const PolicyNetwork& net, const LossFunction& loss_fn, Rng& rng, std::size_t samples = 64,
                      double h = 1e-5);

// Forward-policy lookups memoized per parameter version. The owner calls
// invalidate() after every parameter update.
class PolicyEvaluator {
 public:
  PolicyEvaluator(const PolicyNetwork& net, const Environment& env) : net_(&net), env_(&env) {}

  const PolicyNetwork& net() const { return *net_; }
  const Environment& env() const { return *env_; }

  // Full-table forward probabilities (zero on illegal actions).
  std::span<const double> forward_probs(const State& state, const StateKey& key);
  std::span<const double> forward_probs(const State& state) { return forward_probs(state, env_->key(state)); }

  void invalidate() { cache_.clear(); }
  std::size_t cached() const { return cache_.size(); }

 private:
  const PolicyNetwork* net_;
  const Environment* env_;
  std::unordered_map<StateKey, std::vector<double>> cache_;
  Eigen::VectorXd input_;
};

}  // namespace mg2fn
