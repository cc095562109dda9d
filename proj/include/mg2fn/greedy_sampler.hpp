#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mg2fn/mcts.hpp"

namespace mg2fn {

// Greediness coefficient, either fixed (start == end) or annealed linearly
// from start to end over anneal_rounds training rounds.
struct AlphaSchedule {
  double start = 0.2;
  double end = 0.2;
  std::uint64_t anneal_rounds = 0;

  static AlphaSchedule fixed(double alpha) { return {alpha, alpha, 0}; }
  static AlphaSchedule linear(double start, double end, std::uint64_t rounds) { return {start, end, rounds}; }

  bool is_fixed() const { return start == end; }
  double at(std::uint64_t round) const;
};

struct GreedyConfig {
  AlphaSchedule alpha;
  PlannerConfig planner;
};

// Min-shifted Q distribution: p_i = (Q_i - Q_min) / sum_k (Q_k - Q_min),
// uniform when all Q are equal.
std::vector<double> q_distribution(std::span<const double> q_values);

// (1 - alpha) * pf + alpha * qdist, renormalized by its L1 norm.
// Throws DimensionMismatch.
std::vector<double> mixed_distribution(std::span<const double> pf, std::span<const double> qdist, double alpha);

struct GreedyChoice {
  ActionId action;
  std::vector<double> mixture;  // parallel to the root's legal actions
  PlayoutStats playout;
};

// Runs the planner at `root_state`, mixes the root Q distribution with the
// masked forward policy and samples an action. Throws TerminalRoot.
GreedyChoice choose_action(NodeStore& store, const State& root_state, PolicyEvaluator& policy,
                           const GreedyConfig& config, Rng& rng, std::uint64_t round);

}  // namespace mg2fn
