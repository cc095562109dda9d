#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "mg2fn/environment.hpp"

namespace mg2fn {

// One row of the training curve.
struct MetricsRecord {
  std::uint64_t round = 0;
  std::uint64_t states_visited_total = 0;
  std::uint64_t states_visited_trainer = 0;
  std::size_t modes_found = 0;
  double l1_error = std::numeric_limits<double>::quiet_NaN();
  double avg_top_k = 0.0;
  double diversity = std::numeric_limits<double>::quiet_NaN();
  double loss = std::numeric_limits<double>::quiet_NaN();
};

class ModeTracker {
 public:
  // Returns the mode count after inserting `terminal` (if it is a mode).
  std::size_t update(const Environment& env, const State& terminal, const StateKey& key);
  std::size_t update(const Environment& env, const State& terminal) { return update(env, terminal, env.key(terminal)); }
  std::size_t count() const { return seen_.size(); }
  bool contains(const StateKey& key) const { return seen_.contains(key); }

 private:
  std::unordered_set<StateKey> seen_;
};

inline std::size_t update_modes(ModeTracker& seen, const Environment& env, const State& terminal) {
  return seen.update(env, terminal);
}

using TerminalDistribution = std::unordered_map<StateKey, double>;

enum class L1Weighting { Uniform, Policy };

// (1/|X|) sum_x |p(x) - R(x)/Z| (Uniform) or sum_x p(x) |p(x) - R(x)/Z|
// (Policy). `probs` and `rewards` are aligned over the terminal set.
double l1_error(std::span<const double> probs, std::span<const double> rewards,
                L1Weighting weighting = L1Weighting::Uniform);
// Enumerates the environment's terminals. Throws TooLarge.
double l1_error(const TerminalDistribution& p, const Environment& env,
                L1Weighting weighting = L1Weighting::Uniform);

// Best-k distinct terminals by reward. Ties order by key.
class TopKTracker {
 public:
  struct Entry {
    double reward;
    StateKey key;
    State state;
    bool operator<(const Entry& o) const { return reward != o.reward ? reward < o.reward : key < o.key; }
  };

  explicit TopKTracker(std::size_t k) : k_(k) {}

  // Returns true if the entry set changed.
  bool submit(const StateKey& key, const State& state, double reward);
  double average() const;
  std::size_t size() const { return entries_.size(); }
  std::size_t k() const { return k_; }
  double min_reward() const { return entries_.empty() ? 0.0 : entries_.begin()->reward; }
  // Highest reward first.
  std::vector<Entry> best() const;

 private:
  std::size_t k_;
  std::set<Entry> entries_;
  std::unordered_set<StateKey> members_;
};

struct CrossingPoint {
  std::uint64_t states_visited_trainer = 0;
  std::uint64_t states_visited_total = 0;
};

// First counter values at which a tracked quantity reaches each threshold.
// Strict mode requires value > threshold, otherwise value >= threshold.
class ThresholdCrossings {
 public:
  ThresholdCrossings() = default;
  ThresholdCrossings(std::vector<double> thresholds, bool strict);

  void observe(double value, CrossingPoint at);
  const std::map<double, std::optional<CrossingPoint>>& table() const { return table_; }
  std::optional<CrossingPoint> at(double threshold) const;

 private:
  std::map<double, std::optional<CrossingPoint>> table_;
  bool strict_ = true;
};

// Mean pairwise similarity. Throws TooFew for fewer than two states.
double diversity(std::span<const State> states, const Environment& env);
double diversity(std::span<const StateKey> keys, const Environment& env);

}  // namespace mg2fn
