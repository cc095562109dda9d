#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "mg2fn/environment.hpp"
#include "mg2fn/greedy_sampler.hpp"
#include "mg2fn/metrics.hpp"
#include "mg2fn/policy_net.hpp"
#include "mg2fn/rng.hpp"

namespace mg2fn {

struct Trajectory {
  std::vector<State> states;       // s_0 .. s_n, s_n terminal
  std::vector<ActionId> actions;   // a_t takes s_t to s_{t+1}
  std::vector<double> log_pf_terms;
  std::vector<double> log_pb_terms;
  double reward = 0.0;

  std::size_t length() const { return actions.size(); }
};

enum class SamplerKind { MctsGreedy, Vanilla, Random };

struct MetricsConfig {
  std::size_t metric_interval = 1;   // rounds between emitted records
  std::size_t eval_interval = 25;    // rounds between l1 / diversity refreshes
  std::size_t top_k = 100;
  std::size_t diversity_k = 1000;
  std::vector<double> top_k_thresholds;
  std::vector<double> mode_milestones = {4, 8, 16};
  L1Weighting l1_weighting = L1Weighting::Uniform;
  bool compute_l1 = true;            // only effective on enumerable environments
};

struct TrainConfig {
  std::size_t batch_size = 16;
  std::uint64_t budget = 40000;      // trainer-sampled terminal states
  SamplerKind sampler = SamplerKind::MctsGreedy;
  GreedyConfig greedy;
  BackwardPolicyMode backward = BackwardPolicyMode::Uniform;
  AdamConfig adam;
  std::optional<std::size_t> node_cap;
  std::optional<std::size_t> stop_at_modes;
  MetricsConfig metrics;
  std::optional<std::filesystem::path> diagnostic_checkpoint;
};

struct VisitCounters {
  std::uint64_t total = 0;    // every terminal whose reward was evaluated
  std::uint64_t trainer = 0;  // trainer-sampled terminals only
};

struct TbLoss {
  double loss = 0.0;
  ParameterSet grads;
  std::vector<double> residuals;
};

// Mean over the batch of (log Z + sum log P_F - log R - sum log P_B)^2 and
// its gradient with respect to every parameter. Throws NonFiniteLoss.
TbLoss tb_loss(std::span<const Trajectory> batch, const PolicyNetwork& net, const Environment& env,
               BackwardPolicyMode backward);

class ActionSampler {
 public:
  virtual ~ActionSampler() = default;
  virtual ActionId choose(const State& state, const StateKey& key, PolicyEvaluator& policy, Rng& rng,
                          std::uint64_t round) = 0;
  // Terminal rewards evaluated by a planner so far.
  virtual std::uint64_t planner_evaluations() const { return 0; }
};

class RandomSampler final : public ActionSampler {
 public:
  ActionId choose(const State& state, const StateKey& key, PolicyEvaluator& policy, Rng& rng,
                  std::uint64_t round) override;
};

class VanillaSampler final : public ActionSampler {
 public:
  ActionId choose(const State& state, const StateKey& key, PolicyEvaluator& policy, Rng& rng,
                  std::uint64_t round) override;
};

class MctsGreedySampler final : public ActionSampler {
 public:
  MctsGreedySampler(GreedyConfig config, std::optional<std::size_t> node_cap)
      : config_(config), store_(node_cap) {}

  ActionId choose(const State& state, const StateKey& key, PolicyEvaluator& policy, Rng& rng,
                  std::uint64_t round) override;
  std::uint64_t planner_evaluations() const override { return evaluations_; }

  const NodeStore& store() const { return store_; }
  const GreedyConfig& config() const { return config_; }

 private:
  GreedyConfig config_;
  NodeStore store_;
  std::uint64_t evaluations_ = 0;
};

std::unique_ptr<ActionSampler> make_sampler(const TrainConfig& config);

// Rolls from the initial state until terminal, drawing each action from
// `sampler`, and records the net's own log P_F / log P_B terms. Increments
// counters.trainer and counters.total. Throws DepthExceeded.
Trajectory sample_trajectory(ActionSampler& sampler, PolicyEvaluator& policy, BackwardPolicyMode backward, Rng& rng,
                             std::uint64_t round, VisitCounters& counters);

// Exact terminal distribution induced by P_F, by forward dynamic
// programming over the state DAG. The DAG structure and encodings are built
// once; evaluate() only runs the network.
class TerminalDistributionEvaluator {
 public:
  // Throws TooLarge.
  explicit TerminalDistributionEvaluator(const Environment& env);

  const std::vector<State>& terminals() const { return terminals_; }
  const std::vector<double>& rewards() const { return rewards_; }
  const std::vector<StateKey>& terminal_keys() const { return terminal_keys_; }
  std::size_t interior_count() const { return interior_.size(); }

  // Probabilities aligned with terminals().
  std::vector<double> evaluate(const PolicyNetwork& net) const;
  TerminalDistribution evaluate_map(const PolicyNetwork& net) const;

 private:
  struct Edge {
    ActionId action;
    bool to_terminal;
    std::size_t target;
  };

  const Environment* env_;
  std::vector<State> interior_;               // topological order
  std::vector<std::vector<Edge>> edges_;
  Eigen::MatrixXd encodings_;
  std::vector<State> terminals_;
  std::vector<StateKey> terminal_keys_;
  std::vector<double> rewards_;
};

TerminalDistribution exact_terminal_distribution(const PolicyNetwork& net, const Environment& env);

struct TrainResult {
  MetricsRecord final_record;
  std::optional<double> initial_l1;
  ThresholdCrossings mode_crossings;
  ThresholdCrossings top_k_crossings;
  VisitCounters counters;
  std::uint64_t rounds = 0;
  std::size_t planner_nodes = 0;
};

using MetricsSink = std::function<void(const MetricsRecord&)>;

// Sample M trajectories, take one optimizer step on the TB loss, update
// metrics; repeat until counters.trainer reaches the budget (or
// stop_at_modes is met). Fully determined by the rng state and config.
// NonFiniteLoss propagates after writing the diagnostic checkpoint.
TrainResult train(const TrainConfig& config, const Environment& env, PolicyNetwork& net, Rng& rng,
                  const MetricsSink& sink = {});

}  // namespace mg2fn
