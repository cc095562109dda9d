#include "mg2fn/greedy_sampler.hpp"

#include <algorithm>
#include <cmath>

#include "mg2fn/error.hpp"

namespace mg2fn {

double AlphaSchedule::at(std::uint64_t round) const {
  if (is_fixed()) return start;
  if (anneal_rounds == 0) return end;
  const double progress = std::min(1.0, static_cast<double>(round) / static_cast<double>(anneal_rounds));
  return start + (end - start) * progress;
}

std::vector<double> q_distribution(std::span<const double> q_values) {
  if (q_values.empty()) throw Error(ErrorCode::EmptyMask, "Q distribution over no actions");
  const double q_min = *std::min_element(q_values.begin(), q_values.end());
  double total = 0.0;
  for (double q : q_values) total += q - q_min;
  const auto n = q_values.size();
  std::vector<double> p(n, 1.0 / static_cast<double>(n));
  if (total > 0.0) {
    for (std::size_t i = 0; i < n; ++i) p[i] = (q_values[i] - q_min) / total;
  }
  return p;
}

std::vector<double> mixed_distribution(std::span<const double> pf, std::span<const double> qdist, double alpha) {
  if (pf.size() != qdist.size()) throw Error(ErrorCode::DimensionMismatch, "P_F and Q distribution lengths differ");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorCode::ValidationError, "alpha must be in [0, 1]");
  std::vector<double> mu(pf.size());
  double norm = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    mu[i] = (1.0 - alpha) * pf[i] + alpha * qdist[i];
    norm += std::abs(mu[i]);
  }
  for (double& v : mu) v /= norm;
  return mu;
}

GreedyChoice choose_action(NodeStore& store, const State& root_state, PolicyEvaluator& policy,
                           const GreedyConfig& config, Rng& rng, std::uint64_t round) {
  const Environment& env = policy.env();
  if (env.is_terminal(root_state)) throw Error(ErrorCode::TerminalRoot, "cannot choose an action at a terminal state");
  const StateKey key = env.key(root_state);
  store.ensure(env, root_state, key);

  GreedyChoice out;
  out.playout = playout(store, key, policy, config.planner, rng);

  const MctsNode& root = *store.find(key);
  const auto full = policy.forward_probs(root_state, key);
  std::vector<double> pf(root.actions.size());
  for (std::size_t s = 0; s < pf.size(); ++s) pf[s] = full[root.actions[s].index];
  const auto qdist = q_distribution(root.q);
  out.mixture = mixed_distribution(pf, qdist, config.alpha.at(round));
  out.action = root.actions[rng.categorical(out.mixture)];
  return out;
}

}  // namespace mg2fn
