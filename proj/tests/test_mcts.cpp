#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "mg2fn/environment.hpp"
#include "mg2fn/error.hpp"
#include "mg2fn/mcts.hpp"

using namespace mg2fn;

namespace {

struct Fixture {
  explicit Fixture(HypergridConfig cfg = {}, std::uint64_t seed = 1) : env(cfg), rng(seed), net(make(env, rng)), policy(net, env) {}

  static PolicyNetwork make(const Environment& env, Rng& rng) {
    return PolicyNetwork({env.encoding_dim(), env.action_count(), {16}, false}, rng);
  }

  StateKey root() {
    const auto s = env.initial_state();
    store.ensure(env, s);
    return env.key(s);
  }

  Hypergrid env;
  Rng rng;
  PolicyNetwork net;
  PolicyEvaluator policy;
  NodeStore store;
};

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an mg2fn::Error");
  return ErrorCode::IoError;
}

}  // namespace

TEST_CASE("puct score examples") {
  MctsNode node;
  node.actions = {ActionId(0), ActionId(1), ActionId(2)};
  node.q = {0.3, 0.3, 0.3};
  node.visits = {0, 0, 0};
  CHECK(puct_score(node, ActionId(1), 0.9, 1.0) == doctest::Approx(0.3));

  node.q = {0.5, 0.0, 0.0};
  node.visits = {1, 3, 0};
  CHECK(puct_score(node, ActionId(0), 0.25, 1.0) == doctest::Approx(0.75));
  CHECK(puct_score(node, ActionId(0), 0.25, 0.0) == 0.5);
  CHECK(puct_score(node, ActionId(2), 0.25, 0.0) == 0.0);
}

TEST_CASE("select distribution examples") {
  MctsNode node;
  node.actions = {ActionId(0), ActionId(1), ActionId(2)};
  node.visits = {0, 0, 0};
  node.q = {1.0, 1.0, 1.0 + std::log(2.0)};
  const std::vector<double> priors = {0.2, 0.3, 0.5};
  auto p = select_distribution(node, priors, 1.0);
  CHECK(p[0] == doctest::Approx(0.25));
  CHECK(p[1] == doctest::Approx(0.25));
  CHECK(p[2] == doctest::Approx(0.5));

  node.q = {2.0, 2.0, 2.0};
  for (double v : select_distribution(node, priors, 1.0)) CHECK(v == doctest::Approx(1.0 / 3));

  node.q = {1000.0, 1001.0, 999.5};
  node.visits = {4, 2, 7};
  auto a = select_distribution(node, priors, 1.5);
  for (double& q : node.q) q += 1e5;
  auto b = select_distribution(node, priors, 1.5);
  for (std::size_t i = 0; i < 3; ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-9));
  CHECK(std::accumulate(a.begin(), a.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));

  // With c_puct = 0 the distribution is the softmax of Q alone.
  auto c = select_distribution(node, priors, 0.0);
  double z = 0.0;
  for (double q : node.q) z += std::exp(q - 1001.0 - 1e5);
  for (std::size_t i = 0; i < 3; ++i) CHECK(c[i] == doctest::Approx(std::exp(node.q[i] - 1001.0 - 1e5) / z));
}

TEST_CASE("exploration bonus decays with the action's own count") {
  MctsNode node;
  node.actions = {ActionId(0), ActionId(1)};
  node.q = {0.4, 0.4};
  node.visits = {1, 5};
  double previous = INFINITY;
  for (int k = 0; k < 50; ++k) {
    const double bonus = puct_score(node, ActionId(0), 0.6, 1.0) - node.q[0];
    CHECK(bonus < previous);
    previous = bonus;
    node.visits[0] += 1;
  }
}

TEST_CASE("select: terminal and fresh roots") {
  Fixture f;
  State t{{2, 3, 0, 0}, true};
  f.store.ensure(f.env, t);
  auto out = select(f.store, f.env.key(t), f.policy, 1.0, f.rng);
  CHECK(out.path.empty());
  CHECK(out.code == SelectCode::Terminal);
  CHECK(static_cast<int>(SelectCode::Terminal) == -2);

  auto root = f.root();
  out = select(f.store, root, f.policy, 1.0, f.rng);
  CHECK(out.path.empty());
  CHECK(out.code == SelectCode::Unexpanded);
  CHECK(static_cast<int>(SelectCode::Unexpanded) == -1);
  CHECK(out.leaf == root);

  CHECK(code_of([&] { select(f.store, f.env.key(State{{5, 5, 5, 5}, false}), f.policy, 1.0, f.rng); }) ==
        ErrorCode::MissingRoot);
}

TEST_CASE("select: two-level expanded chain ends at an unexpanded grandchild") {
  Fixture f({8, 1});
  auto root = f.root();
  auto kids = expand(f.store, root, f.env);
  CHECK(kids.size() == 2);
  for (const auto& c : kids) {
    const MctsNode* n = f.store.find(c.key);
    if (!n->terminal) expand(f.store, c.key, f.env);
  }
  // Force the increment branch at both levels.
  f.store.find(root)->q = {50.0, 0.0};
  MctsNode* mid = f.store.find(f.env.key(State{{1}, false}));
  mid->q = {50.0, 0.0};
  auto out = select(f.store, root, f.policy, 0.0, f.rng);
  CHECK(out.path.size() == 2);
  CHECK(out.code == SelectCode::Unexpanded);
  CHECK(out.leaf == f.env.key(State{{2}, false}));
}

TEST_CASE("expand: all children, dedup and errors") {
  Fixture f;
  auto root = f.root();
  auto kids = expand(f.store, root, f.env);
  CHECK(kids.size() == 5);
  const MctsNode* r = f.store.find(root);
  CHECK(r->expanded);
  for (std::size_t s = 0; s < 5; ++s) {
    CHECK(r->q[s] == 0.0);
    CHECK(r->visits[s] == 0);
  }
  CHECK(f.store.size() == 6);
  CHECK(code_of([&] { expand(f.store, root, f.env); }) == ErrorCode::AlreadyExpanded);

  const auto a = f.env.key(State{{1, 0, 0, 0}, false});
  const auto b = f.env.key(State{{0, 1, 0, 0}, false});
  expand(f.store, a, f.env);
  const auto before = f.store.size();
  expand(f.store, b, f.env);
  CHECK(f.store.size() - before < 5);  // (1,1,0,0) is linked, not duplicated
  CHECK(f.store.find(a)->children[1] == f.store.find(b)->children[0]);

  const auto stop_child = f.env.key(State{{0, 0, 0, 0}, true});
  CHECK(code_of([&] { expand(f.store, stop_child, f.env); }) == ErrorCode::TerminalLeaf);
}

TEST_CASE("expand_one links one child at a time") {
  Fixture f;
  auto root = f.root();
  std::set<ActionId> linked;
  for (int i = 0; i < 5; ++i) {
    CHECK_FALSE(f.store.find(root)->expanded);
    auto kid = expand_one(f.store, root, f.policy, f.rng);
    REQUIRE(kid.size() == 1);
    CHECK(linked.insert(kid[0].action).second);
  }
  CHECK(f.store.find(root)->expanded);
}

TEST_CASE("simulate examples") {
  Fixture f;
  auto root = f.root();
  auto kids = expand(f.store, root, f.env);

  // Only the stop child on the frontier: n_e is already terminal.
  std::vector<ExpandedChild> stop_only = {kids.back()};
  auto sim = simulate(f.store, root, stop_only, f.policy, 20, f.rng);
  CHECK(sim.rollout_length == 0);
  CHECK(sim.terminal == State{{0, 0, 0, 0}, true});
  CHECK(sim.reward == doctest::Approx(f.env.reward(sim.terminal)));

  std::vector<ExpandedChild> inc_only = {kids.front()};
  sim = simulate(f.store, root, inc_only, f.policy, 0, f.rng);
  CHECK(sim.forced_stop);
  CHECK(sim.terminal == State{{1, 0, 0, 0}, true});

  for (int i = 0; i < 200; ++i) {
    sim = simulate(f.store, root, kids, f.policy, 20, f.rng);
    CHECK(sim.reward > 0.0);
    CHECK(sim.rollout_length <= 20);
    CHECK(f.env.is_terminal(sim.terminal));
  }
  const auto size = f.store.size();
  simulate(f.store, root, kids, f.policy, 20, f.rng);
  CHECK(f.store.size() == size);  // rollout states are not stored
}

TEST_CASE("backpropagate examples") {
  Fixture f;
  auto root = f.root();
  expand(f.store, root, f.env);
  std::vector<PathEdge> path = {{root, ActionId(2)}};
  backpropagate(f.store, path, 2.0);
  MctsNode* r = f.store.find(root);
  CHECK(r->visits_of(ActionId(2)) == 1);
  CHECK(r->q_of(ActionId(2)) == 2.0);

  r->q[2] = 2.0;
  r->visits[2] = 3;
  backpropagate(f.store, path, 4.0);
  CHECK(r->visits_of(ActionId(2)) == 4);
  CHECK(r->q_of(ActionId(2)) == doctest::Approx(2.5));

  std::vector<PathEdge> bad = {{root, ActionId(1)}, {f.env.key(State{{1, 1, 0, 0}, false}), ActionId(0)}};
  CHECK(code_of([&] { backpropagate(f.store, bad, 1.0); }) == ErrorCode::MissingEdge);
  CHECK(r->visits_of(ActionId(1)) == 0);  // nothing applied on failure
}

TEST_CASE("backpropagate touches only path edges") {
  Fixture f;
  auto root = f.root();
  expand(f.store, root, f.env);
  const auto a = f.env.key(State{{1, 0, 0, 0}, false});
  const auto b = f.env.key(State{{0, 1, 0, 0}, false});
  expand(f.store, a, f.env);
  expand(f.store, b, f.env);
  backpropagate(f.store, std::vector<PathEdge>{{root, ActionId(0)}, {a, ActionId(1)}}, 1.5);
  CHECK(f.store.find(b)->visits_of(ActionId(0)) == 0);  // other parent of (1,1,0,0)
  CHECK(f.store.find(root)->visits_of(ActionId(1)) == 0);
  CHECK(f.store.find(a)->q_of(ActionId(1)) == 1.5);
}

TEST_CASE("Q is the running mean of backpropagated rewards") {
  Rng rng(77);
  double worst = 0.0;
  for (int seq = 0; seq < 1000; ++seq) {
    Fixture f({4, 2}, static_cast<std::uint64_t>(seq));
    auto root = f.root();
    expand(f.store, root, f.env);
    const auto n = 1 + rng.next() % 60;
    std::vector<std::vector<double>> logged(3);
    for (std::size_t i = 0; i < n; ++i) {
      const auto slot = rng.next() % 3;
      const double reward = rng.uniform(1e-5, 2.5);
      logged[slot].push_back(reward);
      backpropagate(f.store, std::vector<PathEdge>{{root, ActionId(static_cast<std::uint32_t>(slot))}}, reward);
    }
    const MctsNode* r = f.store.find(root);
    for (std::size_t s = 0; s < 3; ++s) {
      CHECK(r->visits[s] == logged[s].size());
      const double mean =
          logged[s].empty() ? 0.0 : std::accumulate(logged[s].begin(), logged[s].end(), 0.0) / logged[s].size();
      worst = std::max(worst, std::abs(r->q[s] - mean));
    }
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("playout: single iteration on a fresh root matches the hand trace") {
  Fixture f;
  auto root = f.root();
  PlannerConfig cfg;
  auto stats = playout(f.store, root, f.policy, cfg, f.rng);
  CHECK(stats.iterations == 1);
  CHECK(stats.reward_evaluations == 1);
  const MctsNode* r = f.store.find(root);
  CHECK(r->expanded);
  CHECK(r->total_visits() == 1);
  int touched = 0;
  for (std::size_t s = 0; s < r->actions.size(); ++s) {
    if (r->visits[s] == 1) {
      ++touched;
      CHECK(r->q[s] > 0.0);
    } else {
      CHECK(r->q[s] == 0.0);
    }
  }
  CHECK(touched == 1);
  CHECK(f.store.size() == 6);  // root plus its five children; rollout states excluded
}

TEST_CASE("playout: count conservation") {
  Fixture f;
  auto root = f.root();
  PlannerConfig cfg;
  cfg.n_playout = 5;
  playout(f.store, root, f.policy, cfg, f.rng);
  CHECK(f.store.find(root)->total_visits() == 5);
  cfg.n_playout = 37;
  playout(f.store, root, f.policy, cfg, f.rng);
  CHECK(f.store.find(root)->total_visits() == 42);
}

TEST_CASE("playout: terminal root") {
  Fixture f;
  State t{{1, 6, 1, 6}, true};
  f.store.ensure(f.env, t);
  PlannerConfig cfg;
  cfg.n_playout = 3;
  auto stats = playout(f.store, f.env.key(t), f.policy, cfg, f.rng);
  CHECK(stats.iterations == 3);
  CHECK(f.store.find(f.env.key(t))->actions.empty());
  CHECK(f.store.size() == 1);
}

TEST_CASE("node store dedup bound on an exhaustive small grid") {
  for (auto mode : {ExpansionMode::AllChildren, ExpansionMode::SingleChild}) {
    Fixture f({4, 2}, 3);
    auto root = f.root();
    PlannerConfig cfg;
    cfg.expansion = mode;
    cfg.n_playout = 4000;
    playout(f.store, root, f.policy, cfg, f.rng);
    // 16 plain states plus 16 terminated twins.
    CHECK(f.store.size() <= 2 * 16);
    CHECK(f.store.size() == 32);  // long enough to touch everything
    std::set<StateKey> keys;
    for (const auto& [k, n] : f.store) {
      CHECK(k == n.key);
      keys.insert(f.env.key(n.state));
      CHECK(n.terminal == n.actions.empty());
      if (n.expanded) {
        for (const auto& c : n.children) CHECK_FALSE(c.empty());
      }
    }
    CHECK(keys.size() == f.store.size());
  }
}

TEST_CASE("node cap evicts least recently touched nodes") {
  Fixture f;
  NodeStore capped(std::optional<std::size_t>(20));
  const auto s0 = f.env.initial_state();
  capped.ensure(f.env, s0);
  const auto root = f.env.key(s0);
  PlannerConfig cfg;
  for (int i = 0; i < 50; ++i) {
    playout(capped, root, f.policy, cfg, f.rng);
    CHECK(capped.size() <= 20 + 5 * 2);
    CHECK(capped.contains(root));
  }
}

TEST_CASE("store dump is sorted JSON lines") {
  Fixture f({3, 1});
  auto root = f.root();
  expand(f.store, root, f.env);
  std::ostringstream out;
  f.store.dump(out);
  std::istringstream in(out.str());
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    CHECK(line.front() == '{');
    ++lines;
  }
  CHECK(lines == 3);
}
