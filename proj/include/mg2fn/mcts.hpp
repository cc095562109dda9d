#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <unordered_map>
#include <vector>

#include "mg2fn/environment.hpp"
#include "mg2fn/policy_net.hpp"
#include "mg2fn/rng.hpp"

namespace mg2fn {

// Planner record for one state. Per-action statistics are stored in slots
// parallel to `actions` (the state's legal actions); a slot that was never
// updated reads as Q = 0, N = 0.
struct MctsNode {
  StateKey key;
  State state;
  std::vector<ActionId> actions;
  std::vector<double> q;
  std::vector<std::uint32_t> visits;
  std::vector<StateKey> children;  // empty key: child not linked yet
  bool expanded = false;           // every slot has a child
  bool terminal = false;
  std::uint64_t last_touch = 0;

  std::optional<std::size_t> slot_of(ActionId action) const;
  std::uint64_t total_visits() const;
  double q_of(ActionId action) const;
  std::uint32_t visits_of(ActionId action) const;
};

// One node per StateKey for the whole run. With a node cap the least
// recently touched nodes are evicted; links to evicted children are
// recreated on demand as fresh nodes.
class NodeStore {
 public:
  explicit NodeStore(std::optional<std::size_t> node_cap = std::nullopt) : node_cap_(node_cap) {}

  MctsNode& ensure(const Environment& env, const State& state, const StateKey& key);
  MctsNode& ensure(const Environment& env, const State& state) { return ensure(env, state, env.key(state)); }
  MctsNode* find(const StateKey& key);
  const MctsNode* find(const StateKey& key) const;
  bool contains(const StateKey& key) const { return nodes_.contains(key); }

  std::size_t size() const { return nodes_.size(); }
  std::optional<std::size_t> node_cap() const { return node_cap_; }
  std::uint64_t tick() { return ++clock_; }

  // Evicts down to 90% of the cap when over it; `keep` is never evicted.
  void enforce_cap(const StateKey& keep);

  // JSON lines of (key, per-action Q, per-action N), sorted by key.
  void dump(std::ostream& out) const;

  auto begin() const { return nodes_.begin(); }
  auto end() const { return nodes_.end(); }

 private:
  std::unordered_map<StateKey, MctsNode> nodes_;
  std::optional<std::size_t> node_cap_;
  std::uint64_t clock_ = 0;
};

struct PathEdge {
  StateKey node;
  ActionId action;
};

enum class SelectCode { Terminal = -2, Unexpanded = -1 };

struct SelectOutcome {
  std::vector<PathEdge> path;
  StateKey leaf;
  SelectCode code = SelectCode::Unexpanded;
};

enum class ExpansionMode { AllChildren, SingleChild };

struct PlannerConfig {
  double c_puct = 1.0;
  std::uint32_t n_playout = 1;
  std::uint32_t max_sim_depth = 20;
  ExpansionMode expansion = ExpansionMode::AllChildren;
};

// Q(n,a) + c_puct * prior * sqrt(sum_a' N(n,a')) / (1 + N(n,a)).
double puct_score(const MctsNode& node, ActionId action, double prior, double c_puct);

// Softmax of the PUCT scores over the node's slots (max-shifted).
// `priors` is parallel to node.actions.
std::vector<double> select_distribution(const MctsNode& node, std::span<const double> priors, double c_puct);

// Descends from `root` sampling from select_distribution at each fully
// expanded node. Throws MissingRoot.
SelectOutcome select(NodeStore& store, const StateKey& root, PolicyEvaluator& policy, double c_puct, Rng& rng);

struct ExpandedChild {
  ActionId action;
  StateKey key;
};

// Links a child for every legal action of `leaf`, creating nodes only for
// unseen states. Throws AlreadyExpanded, TerminalLeaf, MissingRoot.
std::vector<ExpandedChild> expand(NodeStore& store, const StateKey& leaf, const Environment& env);

// Single-child variant: links one not-yet-linked action drawn from P_F.
// Kept for the expansion-strategy ablation.
std::vector<ExpandedChild> expand_one(NodeStore& store, const StateKey& leaf, PolicyEvaluator& policy, Rng& rng);

struct SimulationResult {
  ActionId action;       // leaf -> n_e edge
  StateKey child;        // n_e
  State terminal;        // n_T
  double reward = 0.0;   // R(n_T)
  std::size_t rollout_length = 0;
  bool forced_stop = false;
};

// Picks n_e from `frontier` by P_F at `leaf`, then rolls out by P_F until a
// terminal or `max_depth` steps, forcing the stop action at the depth
// limit. Rollout states are not added to the store.
SimulationResult simulate(NodeStore& store, const StateKey& leaf, std::span<const ExpandedChild> frontier,
                          PolicyEvaluator& policy, std::size_t max_depth, Rng& rng);

// N(n,a) += 1 then Q(n,a) += (R - Q(n,a)) / N(n,a) for each path edge only.
// Throws MissingEdge.
void backpropagate(NodeStore& store, std::span<const PathEdge> path, double reward);

struct PlayoutStats {
  std::uint64_t iterations = 0;
  std::uint64_t reward_evaluations = 0;
};

// n_playout iterations of select -> (terminal ? backprop : expand ->
// simulate -> backprop). The leaf -> n_e edge is credited with the path.
PlayoutStats playout(NodeStore& store, const StateKey& root, PolicyEvaluator& policy, const PlannerConfig& config,
                     Rng& rng);

}  // namespace mg2fn
