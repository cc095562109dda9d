#include "mg2fn/metrics.hpp"

#include <cmath>

#include "mg2fn/error.hpp"

namespace mg2fn {

std::size_t ModeTracker::update(const Environment& env, const State& terminal, const StateKey& key) {
  if (env.is_mode(terminal)) seen_.insert(key);
  return seen_.size();
}

double l1_error(std::span<const double> probs, std::span<const double> rewards, L1Weighting weighting) {
  if (probs.size() != rewards.size()) throw Error(ErrorCode::DimensionMismatch, "probabilities vs rewards");
  if (probs.empty()) throw Error(ErrorCode::TooFew, "l1 error over an empty terminal set");
  double z = 0.0;
  for (double r : rewards) z += r;
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double gap = std::abs(probs[i] - rewards[i] / z);
    total += weighting == L1Weighting::Uniform ? gap : probs[i] * gap;
  }
  return weighting == L1Weighting::Uniform ? total / static_cast<double>(probs.size()) : total;
}

double l1_error(const TerminalDistribution& p, const Environment& env, L1Weighting weighting) {
  const auto terminals = env.enumerate_terminals();
  std::vector<double> probs;
  std::vector<double> rewards;
  probs.reserve(terminals.size());
  rewards.reserve(terminals.size());
  for (const auto& [state, reward] : terminals) {
    const auto it = p.find(env.key(state));
    probs.push_back(it == p.end() ? 0.0 : it->second);
    rewards.push_back(reward);
  }
  return l1_error(probs, rewards, weighting);
}

bool TopKTracker::submit(const StateKey& key, const State& state, double reward) {
  if (k_ == 0 || members_.contains(key)) return false;
  if (entries_.size() == k_) {
    const auto lowest = entries_.begin();
    if (!(*lowest < Entry{reward, key, {}})) return false;
    members_.erase(lowest->key);
    entries_.erase(lowest);
  }
  entries_.insert(Entry{reward, key, state});
  members_.insert(key);
  return true;
}

double TopKTracker::average() const {
  if (entries_.empty()) return 0.0;
  // Recomputed to avoid drift from incremental removals.
  double total = 0.0;
  for (const auto& e : entries_) total += e.reward;
  return total / static_cast<double>(entries_.size());
}

std::vector<TopKTracker::Entry> TopKTracker::best() const { return {entries_.rbegin(), entries_.rend()}; }

ThresholdCrossings::ThresholdCrossings(std::vector<double> thresholds, bool strict) : strict_(strict) {
  for (double t : thresholds) table_.emplace(t, std::nullopt);
}

void ThresholdCrossings::observe(double value, CrossingPoint at) {
  for (auto& [threshold, hit] : table_) {
    if (hit) continue;
    if (strict_ ? value > threshold : value >= threshold) hit = at;
  }
}

std::optional<CrossingPoint> ThresholdCrossings::at(double threshold) const {
  const auto it = table_.find(threshold);
  return it == table_.end() ? std::nullopt : it->second;
}

double diversity(std::span<const State> states, const Environment& env) {
  if (states.size() < 2) throw Error(ErrorCode::TooFew, "diversity needs at least two states");
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < states.size(); ++i) {
    for (std::size_t j = i + 1; j < states.size(); ++j) {
      total += env.similarity(states[i], states[j]);
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

double diversity(std::span<const StateKey> keys, const Environment& env) {
  std::vector<State> states;
  states.reserve(keys.size());
  for (const auto& k : keys) states.push_back(env.decode_key(k));
  return diversity(states, env);
}

}  // namespace mg2fn
