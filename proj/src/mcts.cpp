#include "mg2fn/mcts.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "mg2fn/error.hpp"

namespace mg2fn {

// ---------------------------------------------------------------------------
// MctsNode / NodeStore

std::optional<std::size_t> MctsNode::slot_of(ActionId action) const {
  const auto it = std::lower_bound(actions.begin(), actions.end(), action);
  if (it == actions.end() || *it != action) return std::nullopt;
  return static_cast<std::size_t>(it - actions.begin());
}

std::uint64_t MctsNode::total_visits() const {
  std::uint64_t total = 0;
  for (auto n : visits) total += n;
  return total;
}

double MctsNode::q_of(ActionId action) const {
  const auto slot = slot_of(action);
  return slot ? q[*slot] : 0.0;
}

std::uint32_t MctsNode::visits_of(ActionId action) const {
  const auto slot = slot_of(action);
  return slot ? visits[*slot] : 0;
}

MctsNode& NodeStore::ensure(const Environment& env, const State& state, const StateKey& key) {
  auto [it, inserted] = nodes_.try_emplace(key);
  MctsNode& node = it->second;
  if (inserted) {
    node.key = key;
    node.state = state;
    node.terminal = env.is_terminal(state);
    node.actions = env.legal_actions(state);
    node.q.assign(node.actions.size(), 0.0);
    node.visits.assign(node.actions.size(), 0);
    node.children.assign(node.actions.size(), StateKey{});
  }
  node.last_touch = tick();
  return node;
}

MctsNode* NodeStore::find(const StateKey& key) {
  const auto it = nodes_.find(key);
  return it == nodes_.end() ? nullptr : &it->second;
}

const MctsNode* NodeStore::find(const StateKey& key) const {
  const auto it = nodes_.find(key);
  return it == nodes_.end() ? nullptr : &it->second;
}

void NodeStore::enforce_cap(const StateKey& keep) {
  if (!node_cap_ || nodes_.size() <= *node_cap_) return;
  std::vector<std::pair<std::uint64_t, const StateKey*>> order;
  order.reserve(nodes_.size());
  for (const auto& [key, node] : nodes_) {
    if (key != keep) order.emplace_back(node.last_touch, &key);
  }
  std::sort(order.begin(), order.end());
  const std::size_t target = *node_cap_ - *node_cap_ / 10;
  const std::size_t drop = nodes_.size() - std::min(target, nodes_.size());
  std::vector<StateKey> victims;
  for (std::size_t i = 0; i < drop && i < order.size(); ++i) victims.push_back(*order[i].second);
  for (const auto& key : victims) nodes_.erase(key);
}

void NodeStore::dump(std::ostream& out) const {
  std::vector<const MctsNode*> sorted;
  for (const auto& [key, node] : nodes_) sorted.push_back(&node);
  std::sort(sorted.begin(), sorted.end(), [](const MctsNode* a, const MctsNode* b) { return a->key < b->key; });
  for (const MctsNode* node : sorted) {
    nlohmann::json row;
    row["values"] = node->state.values;
    row["terminated"] = node->state.terminated;
    nlohmann::json q = nlohmann::json::object();
    nlohmann::json n = nlohmann::json::object();
    for (std::size_t s = 0; s < node->actions.size(); ++s) {
      q[std::to_string(node->actions[s].index)] = node->q[s];
      n[std::to_string(node->actions[s].index)] = node->visits[s];
    }
    row["q"] = q;
    row["n"] = n;
    out << row.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Selection

double puct_score(const MctsNode& node, ActionId action, double prior, double c_puct) {
  const auto slot = node.slot_of(action);
  const double q = slot ? node.q[*slot] : 0.0;
  const double n = slot ? node.visits[*slot] : 0.0;
  const double total = static_cast<double>(node.total_visits());
  return q + c_puct * prior * std::sqrt(total) / (1.0 + n);
}

std::vector<double> select_distribution(const MctsNode& node, std::span<const double> priors, double c_puct) {
  if (priors.size() != node.actions.size()) throw Error(ErrorCode::DimensionMismatch, "one prior per legal action");
  const double root_total = std::sqrt(static_cast<double>(node.total_visits()));
  std::vector<double> scores(node.actions.size());
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < scores.size(); ++s) {
    scores[s] = node.q[s] + c_puct * priors[s] * root_total / (1.0 + node.visits[s]);
    hi = std::max(hi, scores[s]);
  }
  double total = 0.0;
  for (double& v : scores) {
    v = std::exp(v - hi);
    total += v;
  }
  for (double& v : scores) v /= total;
  return scores;
}

namespace {

std::vector<double> slot_priors(PolicyEvaluator& policy, const MctsNode& node) {
  const auto full = policy.forward_probs(node.state, node.key);
  std::vector<double> priors(node.actions.size());
  for (std::size_t s = 0; s < priors.size(); ++s) priors[s] = full[node.actions[s].index];
  return priors;
}

// Child node for a linked slot, recreated if it was evicted.
MctsNode& child_node(NodeStore& store, const Environment& env, MctsNode& parent, std::size_t slot) {
  if (MctsNode* child = store.find(parent.children[slot])) {
    child->last_touch = store.tick();
    return *child;
  }
  const State next = env.step(parent.state, parent.actions[slot]);
  return store.ensure(env, next, parent.children[slot]);
}

}  // namespace

SelectOutcome select(NodeStore& store, const StateKey& root, PolicyEvaluator& policy, double c_puct, Rng& rng) {
  MctsNode* node = store.find(root);
  if (node == nullptr) throw Error(ErrorCode::MissingRoot, "select from a state that is not in the store");
  const Environment& env = policy.env();
  const std::size_t depth_bound = env.max_trajectory_length();
  SelectOutcome out;
  while (true) {
    node->last_touch = store.tick();
    if (node->terminal) {
      out.code = SelectCode::Terminal;
      break;
    }
    if (!node->expanded) {
      out.code = SelectCode::Unexpanded;
      break;
    }
    if (out.path.size() >= depth_bound) throw Error(ErrorCode::DepthExceeded, "selection exceeded the trajectory bound");
    const auto dist = select_distribution(*node, slot_priors(policy, *node), c_puct);
    const std::size_t slot = rng.categorical(dist);
    out.path.push_back({node->key, node->actions[slot]});
    node = &child_node(store, env, *node, slot);
  }
  out.leaf = node->key;
  return out;
}

// ---------------------------------------------------------------------------
// Expansion

namespace {

MctsNode& expandable(NodeStore& store, const StateKey& leaf) {
  MctsNode* node = store.find(leaf);
  if (node == nullptr) throw Error(ErrorCode::MissingRoot, "expand of a state that is not in the store");
  if (node->terminal) throw Error(ErrorCode::TerminalLeaf, "cannot expand a terminal node");
  if (node->expanded) throw Error(ErrorCode::AlreadyExpanded, "node is already expanded");
  return *node;
}

ExpandedChild link_child(NodeStore& store, const Environment& env, MctsNode& node, std::size_t slot) {
  const State next = env.step(node.state, node.actions[slot]);
  StateKey key = env.key(next);
  store.ensure(env, next, key);
  node.children[slot] = key;
  return {node.actions[slot], std::move(key)};
}

}  // namespace

std::vector<ExpandedChild> expand(NodeStore& store, const StateKey& leaf, const Environment& env) {
  MctsNode& node = expandable(store, leaf);
  std::vector<ExpandedChild> out;
  out.reserve(node.actions.size());
  for (std::size_t s = 0; s < node.actions.size(); ++s) {
    if (node.children[s].empty()) {
      out.push_back(link_child(store, env, node, s));
    } else {
      out.push_back({node.actions[s], node.children[s]});
    }
  }
  node.expanded = true;
  return out;
}

std::vector<ExpandedChild> expand_one(NodeStore& store, const StateKey& leaf, PolicyEvaluator& policy, Rng& rng) {
  MctsNode& node = expandable(store, leaf);
  const auto priors = slot_priors(policy, node);
  std::vector<double> weights(node.actions.size(), 0.0);
  std::size_t open = 0;
  for (std::size_t s = 0; s < weights.size(); ++s) {
    if (node.children[s].empty()) {
      weights[s] = std::max(priors[s], std::numeric_limits<double>::min());
      ++open;
    }
  }
  const std::size_t slot = rng.categorical(weights);
  std::vector<ExpandedChild> out{link_child(store, policy.env(), node, slot)};
  if (open == 1) node.expanded = true;
  return out;
}

// ---------------------------------------------------------------------------
// Simulation

SimulationResult simulate(NodeStore& store, const StateKey& leaf, std::span<const ExpandedChild> frontier,
                          PolicyEvaluator& policy, std::size_t max_depth, Rng& rng) {
  if (frontier.empty()) throw Error(ErrorCode::EmptyMask, "simulation needs at least one expanded child");
  MctsNode* parent = store.find(leaf);
  if (parent == nullptr) throw Error(ErrorCode::MissingRoot, "simulate from a state that is not in the store");
  const Environment& env = policy.env();

  std::size_t pick = 0;
  if (frontier.size() > 1) {
    const auto full = policy.forward_probs(parent->state, parent->key);
    std::vector<double> weights;
    weights.reserve(frontier.size());
    for (const auto& c : frontier) weights.push_back(full[c.action.index]);
    pick = rng.categorical(weights);
  }

  SimulationResult out;
  out.action = frontier[pick].action;
  out.child = frontier[pick].key;
  const MctsNode* child = store.find(out.child);
  State state = child != nullptr ? child->state : env.step(parent->state, out.action);

  while (!env.is_terminal(state)) {
    if (out.rollout_length >= max_depth) {
      if (!env.is_legal(state, env.stop_action())) {
        throw Error(ErrorCode::DepthExceeded, "rollout hit the depth limit where stopping is illegal");
      }
      state = env.step(state, env.stop_action());
      out.forced_stop = true;
      break;
    }
    const auto probs = policy.forward_probs(state);
    const auto action = ActionId(static_cast<std::uint32_t>(rng.categorical(probs)));
    state = env.step(state, action);
    ++out.rollout_length;
  }
  out.reward = env.reward(state);
  out.terminal = std::move(state);
  return out;
}

// ---------------------------------------------------------------------------
// Backpropagation

void backpropagate(NodeStore& store, std::span<const PathEdge> path, double reward) {
  std::vector<std::pair<MctsNode*, std::size_t>> edges;
  edges.reserve(path.size());
  for (const auto& edge : path) {
    MctsNode* node = store.find(edge.node);
    const auto slot = node != nullptr ? node->slot_of(edge.action) : std::nullopt;
    if (!slot || node->children[*slot].empty()) {
      throw Error(ErrorCode::MissingEdge, "backpropagation along an edge that is not in the store");
    }
    edges.emplace_back(node, *slot);
  }
  for (auto [node, slot] : edges) {
    node->visits[slot] += 1;
    node->q[slot] += (reward - node->q[slot]) / node->visits[slot];
  }
}

// ---------------------------------------------------------------------------
// Playout

PlayoutStats playout(NodeStore& store, const StateKey& root, PolicyEvaluator& policy, const PlannerConfig& config,
                     Rng& rng) {
  if (!store.contains(root)) throw Error(ErrorCode::MissingRoot, "playout root is not in the store");
  store.enforce_cap(root);
  const Environment& env = policy.env();
  PlayoutStats stats;
  for (std::uint32_t i = 0; i < config.n_playout; ++i) {
    SelectOutcome sel = select(store, root, policy, config.c_puct, rng);
    double reward = 0.0;
    if (sel.code == SelectCode::Terminal) {
      reward = env.reward(store.find(sel.leaf)->state);
    } else {
      const auto frontier = config.expansion == ExpansionMode::AllChildren
                                ? expand(store, sel.leaf, env)
                                : expand_one(store, sel.leaf, policy, rng);
      const auto sim = simulate(store, sel.leaf, frontier, policy, config.max_sim_depth, rng);
      sel.path.push_back({sel.leaf, sim.action});
      reward = sim.reward;
    }
    ++stats.reward_evaluations;
    backpropagate(store, sel.path, reward);
    ++stats.iterations;
  }
  return stats;
}

}  // namespace mg2fn
