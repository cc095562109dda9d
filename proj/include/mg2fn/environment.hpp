#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mg2fn {

// Index into an environment's global action table.
struct ActionId {
  std::uint32_t index = 0;

  constexpr ActionId() = default;
  constexpr explicit ActionId(std::uint32_t i) : index(i) {}
  auto operator<=>(const ActionId&) const = default;
};

// Canonical byte serialization of a state. Two states are the same state
// iff their keys are byte-equal.
struct StateKey {
  std::string bytes;

  auto operator<=>(const StateKey&) const = default;
  bool empty() const { return bytes.empty(); }
};

// Environment position. For Hypergrid `values` holds the coordinates, for
// FragmentChain the ordered fragment ids.
struct State {
  std::vector<std::int32_t> values;
  bool terminated = false;

  bool operator==(const State&) const = default;
};

// DAG-structured generation environment. Implementations are immutable
// after construction and safe to share across threads.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual std::string_view name() const = 0;

  virtual State initial_state() const = 0;

  // Size of the global action table, stop action included.
  virtual std::size_t action_count() const = 0;
  virtual ActionId stop_action() const = 0;

  // Sorted by index. Empty iff the state is terminal.
  virtual std::vector<ActionId> legal_actions(const State& state) const = 0;
  bool is_legal(const State& state, ActionId action) const;

  // Throws IllegalAction.
  virtual State step(const State& state, ActionId action) const = 0;

  bool is_terminal(const State& state) const { return state.terminated; }

  // Throws NotTerminal.
  virtual double reward(const State& state) const = 0;
  virtual bool is_mode(const State& state) const = 0;

  virtual std::size_t encoding_dim() const = 0;
  virtual void encode(const State& state, std::span<double> out) const = 0;
  std::vector<double> encode(const State& state) const;

  virtual StateKey key(const State& state) const = 0;
  virtual State decode_key(const StateKey& key) const = 0;

  // Actions `a` such that step(parent, a) == state, one per parent, sorted.
  virtual std::vector<ActionId> parent_actions(const State& state) const = 0;
  // The unique parent reached by undoing `action`.
  virtual State parent(const State& state, ActionId action) const = 0;

  // Upper bound on the number of actions in any trajectory from the root.
  virtual std::size_t max_trajectory_length() const = 0;

  // Number of terminal states (as a real to survive overflow).
  virtual double terminal_count() const = 0;
  // Enumeration refuses environments with more terminals than this.
  virtual double enumeration_limit() const = 0;

  // Every terminal state exactly once. Throws TooLarge.
  std::vector<std::pair<State, double>> enumerate_terminals() const;

  // Similarity in [0, 1] used for the diversity metric.
  virtual double similarity(const State& a, const State& b) const = 0;
};

struct HypergridConfig {
  int horizon = 8;     // H
  int dimension = 4;   // D
  double r0 = 1e-5;
  double r1 = 0.5;
  double r2 = 2.0;
};

class Hypergrid final : public Environment {
 public:
  explicit Hypergrid(HypergridConfig config = {});

  const HypergridConfig& config() const { return config_; }

  std::string_view name() const override { return "hypergrid"; }
  State initial_state() const override;
  std::size_t action_count() const override { return static_cast<std::size_t>(config_.dimension) + 1; }
  ActionId stop_action() const override { return ActionId(static_cast<std::uint32_t>(config_.dimension)); }
  std::vector<ActionId> legal_actions(const State& state) const override;
  State step(const State& state, ActionId action) const override;
  double reward(const State& state) const override;
  bool is_mode(const State& state) const override;
  std::size_t encoding_dim() const override;
  using Environment::encode;
  void encode(const State& state, std::span<double> out) const override;
  StateKey key(const State& state) const override;
  State decode_key(const StateKey& key) const override;
  std::vector<ActionId> parent_actions(const State& state) const override;
  State parent(const State& state, ActionId action) const override;
  std::size_t max_trajectory_length() const override;
  double terminal_count() const override;
  double enumeration_limit() const override { return 1e7; }
  double similarity(const State& a, const State& b) const override;

  // Membership of |x/(H-1) - 1/2| in the two reward bands, evaluated with
  // integer cross-multiplication so that band endpoints are exact.
  bool in_outer_band(int x) const;
  bool in_inner_band(int x) const;

 private:
  void check(const State& state) const;

  HypergridConfig config_;
};

struct FragmentChainConfig {
  int vocabulary = 32;        // B
  int max_length = 6;         // L_max
  double epsilon = 1e-5;
  int motif_count = 4;
  int motif_length = 3;
  double motif_bonus = 4.0;
  // Credit for a motif whose longest contiguous prefix match has length k,
  // as a fraction of motif_bonus. Index k in [0, motif_length].
  std::vector<double> prefix_credit = {0.0, 0.05, 0.2, 1.0};
  double length_weight = 1.0;
  double length_target = 4.0;
  std::uint64_t motif_seed = 7;
  double mode_threshold = 4.0;
  double enumeration_limit = 2e6;
};

// Synthetic fragment-assembly task: append fragment ids to a chain, stop
// to finish. Reward is sparse in full occurrences of a few designated
// motifs, with partial credit for motif prefixes and a smooth length term.
class FragmentChain final : public Environment {
 public:
  explicit FragmentChain(FragmentChainConfig config = {});

  const FragmentChainConfig& config() const { return config_; }
  const std::vector<std::vector<std::int32_t>>& motifs() const { return motifs_; }

  std::string_view name() const override { return "fragment_chain"; }
  State initial_state() const override { return State{}; }
  std::size_t action_count() const override { return static_cast<std::size_t>(config_.vocabulary) + 1; }
  ActionId stop_action() const override { return ActionId(static_cast<std::uint32_t>(config_.vocabulary)); }
  std::vector<ActionId> legal_actions(const State& state) const override;
  State step(const State& state, ActionId action) const override;
  double reward(const State& state) const override;
  bool is_mode(const State& state) const override;
  std::size_t encoding_dim() const override { return static_cast<std::size_t>(config_.vocabulary) + 1; }
  using Environment::encode;
  void encode(const State& state, std::span<double> out) const override;
  StateKey key(const State& state) const override;
  State decode_key(const StateKey& key) const override;
  std::vector<ActionId> parent_actions(const State& state) const override;
  State parent(const State& state, ActionId action) const override;
  std::size_t max_trajectory_length() const override { return static_cast<std::size_t>(config_.max_length) + 1; }
  double terminal_count() const override;
  double enumeration_limit() const override { return config_.enumeration_limit; }
  double similarity(const State& a, const State& b) const override;

  // Reward without the terminal check, used by tests and the reward audit.
  double score(std::span<const std::int32_t> fragments) const;

 private:
  void check(const State& state) const;

  FragmentChainConfig config_;
  std::vector<std::vector<std::int32_t>> motifs_;
};

}  // namespace mg2fn

template <>
struct std::hash<mg2fn::StateKey> {
  std::size_t operator()(const mg2fn::StateKey& key) const noexcept {
    return std::hash<std::string>{}(key.bytes);
  }
};
