#include "mg2fn/environment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <deque>
#include <numeric>
#include <unordered_set>

#include "mg2fn/error.hpp"

namespace mg2fn {

namespace {

constexpr char kOpen = 'o';
constexpr char kDone = 't';

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

StateKey pack(const State& state) {
  StateKey key;
  key.bytes.reserve(state.values.size() + 1);
  key.bytes.push_back(state.terminated ? kDone : kOpen);
  for (auto v : state.values) key.bytes.push_back(static_cast<char>(static_cast<std::uint8_t>(v)));
  return key;
}

State unpack(const StateKey& key) {
  if (key.bytes.empty() || (key.bytes[0] != kOpen && key.bytes[0] != kDone)) {
    throw Error(ErrorCode::ParseError, "malformed state key");
  }
  State state;
  state.terminated = key.bytes[0] == kDone;
  for (std::size_t i = 1; i < key.bytes.size(); ++i) {
    state.values.push_back(static_cast<std::uint8_t>(key.bytes[i]));
  }
  return state;
}

}  // namespace

bool Environment::is_legal(const State& state, ActionId action) const {
  const auto legal = legal_actions(state);
  return std::binary_search(legal.begin(), legal.end(), action);
}

std::vector<double> Environment::encode(const State& state) const {
  std::vector<double> out(encoding_dim(), 0.0);
  encode(state, out);
  return out;
}

std::vector<std::pair<State, double>> Environment::enumerate_terminals() const {
  if (terminal_count() > enumeration_limit()) {
    throw Error(ErrorCode::TooLarge, std::string(name()) + " has " + std::to_string(terminal_count()) +
                                         " terminals, above the enumeration limit");
  }
  std::vector<std::pair<State, double>> out;
  std::unordered_set<StateKey> seen;
  std::deque<State> frontier{initial_state()};
  seen.insert(key(frontier.front()));
  while (!frontier.empty()) {
    State s = std::move(frontier.front());
    frontier.pop_front();
    if (is_terminal(s)) {
      const double r = reward(s);
      out.emplace_back(std::move(s), r);
      continue;
    }
    for (ActionId a : legal_actions(s)) {
      State next = step(s, a);
      if (seen.insert(key(next)).second) frontier.push_back(std::move(next));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Hypergrid

Hypergrid::Hypergrid(HypergridConfig config) : config_(config) {
  if (config_.horizon < 2 || config_.horizon > 255) {
    throw Error(ErrorCode::ValidationError, "hypergrid horizon must be in [2, 255]");
  }
  if (config_.dimension < 1) throw Error(ErrorCode::ValidationError, "hypergrid dimension must be >= 1");
  if (config_.r0 <= 0.0) throw Error(ErrorCode::ValidationError, "hypergrid r0 must be positive");
}

void Hypergrid::check(const State& state) const {
  if (state.values.size() != static_cast<std::size_t>(config_.dimension)) {
    throw Error(ErrorCode::DimensionMismatch, "grid state has wrong dimension");
  }
  for (auto v : state.values) {
    if (v < 0 || v > config_.horizon - 1) throw Error(ErrorCode::IllegalAction, "grid coordinate out of range");
  }
}

State Hypergrid::initial_state() const {
  return State{std::vector<std::int32_t>(static_cast<std::size_t>(config_.dimension), 0), false};
}

std::vector<ActionId> Hypergrid::legal_actions(const State& state) const {
  std::vector<ActionId> out;
  if (state.terminated) return out;
  for (int d = 0; d < config_.dimension; ++d) {
    if (state.values[static_cast<std::size_t>(d)] < config_.horizon - 1) out.emplace_back(static_cast<std::uint32_t>(d));
  }
  out.push_back(stop_action());
  return out;
}

State Hypergrid::step(const State& state, ActionId action) const {
  check(state);
  if (state.terminated) throw Error(ErrorCode::IllegalAction, "terminated grid state has no actions");
  State next = state;
  if (action == stop_action()) {
    next.terminated = true;
    return next;
  }
  if (action.index >= static_cast<std::uint32_t>(config_.dimension)) {
    throw Error(ErrorCode::IllegalAction, "grid action index out of range");
  }
  auto& x = next.values[action.index];
  if (x >= config_.horizon - 1) throw Error(ErrorCode::IllegalAction, "increment beyond grid boundary");
  ++x;
  return next;
}

bool Hypergrid::in_outer_band(int x) const {
  // (0.25, 0.5]: with a = |2x - m|, m = H - 1, the deviation is a / (2m).
  const long m = config_.horizon - 1;
  const long a = std::labs(2L * x - m);
  return m < 2 * a && a <= m;
}

bool Hypergrid::in_inner_band(int x) const {
  // (0.3, 0.4]
  const long m = config_.horizon - 1;
  const long a = std::labs(2L * x - m);
  return 6 * m < 10 * a && 10 * a <= 8 * m;
}

double Hypergrid::reward(const State& state) const {
  if (!state.terminated) throw Error(ErrorCode::NotTerminal, "reward requested for a non-terminal grid state");
  check(state);
  bool outer = true;
  bool inner = true;
  for (auto x : state.values) {
    outer = outer && in_outer_band(x);
    inner = inner && in_inner_band(x);
  }
  return config_.r0 + (outer ? config_.r1 : 0.0) + (inner ? config_.r2 : 0.0);
}

bool Hypergrid::is_mode(const State& state) const {
  if (!state.terminated) throw Error(ErrorCode::NotTerminal, "is_mode requested for a non-terminal grid state");
  return std::all_of(state.values.begin(), state.values.end(), [this](int x) { return in_inner_band(x); });
}

std::size_t Hypergrid::encoding_dim() const {
  return static_cast<std::size_t>(config_.dimension) * static_cast<std::size_t>(config_.horizon);
}

void Hypergrid::encode(const State& state, std::span<double> out) const {
  if (out.size() != encoding_dim()) throw Error(ErrorCode::DimensionMismatch, "encoding buffer size");
  std::fill(out.begin(), out.end(), 0.0);
  const auto h = static_cast<std::size_t>(config_.horizon);
  for (std::size_t d = 0; d < state.values.size(); ++d) {
    out[d * h + static_cast<std::size_t>(state.values[d])] = 1.0;
  }
}

StateKey Hypergrid::key(const State& state) const { return pack(state); }

State Hypergrid::decode_key(const StateKey& key) const {
  State s = unpack(key);
  check(s);
  return s;
}

std::vector<ActionId> Hypergrid::parent_actions(const State& state) const {
  std::vector<ActionId> out;
  if (state.terminated) {
    out.push_back(stop_action());
    return out;
  }
  for (int d = 0; d < config_.dimension; ++d) {
    if (state.values[static_cast<std::size_t>(d)] > 0) out.emplace_back(static_cast<std::uint32_t>(d));
  }
  return out;
}

State Hypergrid::parent(const State& state, ActionId action) const {
  State p = state;
  if (action == stop_action()) {
    if (!state.terminated) throw Error(ErrorCode::IllegalAction, "stop is not a parent edge of an open state");
    p.terminated = false;
    return p;
  }
  if (state.terminated || action.index >= static_cast<std::uint32_t>(config_.dimension) ||
      p.values[action.index] == 0) {
    throw Error(ErrorCode::IllegalAction, "no parent along this action");
  }
  --p.values[action.index];
  return p;
}

std::size_t Hypergrid::max_trajectory_length() const {
  return static_cast<std::size_t>(config_.dimension) * static_cast<std::size_t>(config_.horizon - 1) + 1;
}

double Hypergrid::terminal_count() const { return std::pow(config_.horizon, config_.dimension); }

double Hypergrid::similarity(const State& a, const State& b) const {
  double dist = 0.0;
  for (std::size_t d = 0; d < a.values.size(); ++d) dist += std::abs(a.values[d] - b.values[d]);
  return 1.0 - dist / (static_cast<double>(config_.dimension) * (config_.horizon - 1));
}

// ---------------------------------------------------------------------------
// FragmentChain

FragmentChain::FragmentChain(FragmentChainConfig config) : config_(std::move(config)) {
  if (config_.vocabulary < 1 || config_.vocabulary > 255) {
    throw Error(ErrorCode::ValidationError, "fragment vocabulary must be in [1, 255]");
  }
  if (config_.max_length < 1) throw Error(ErrorCode::ValidationError, "fragment max_length must be >= 1");
  if (config_.epsilon <= 0.0) throw Error(ErrorCode::ValidationError, "fragment epsilon must be positive");
  if (config_.motif_length < 1 || config_.motif_count < 0 ||
      config_.motif_count * config_.motif_length > config_.vocabulary) {
    throw Error(ErrorCode::ValidationError, "motifs must fit in the vocabulary with distinct fragments");
  }
  if (config_.prefix_credit.size() != static_cast<std::size_t>(config_.motif_length) + 1) {
    throw Error(ErrorCode::ValidationError, "prefix_credit needs motif_length + 1 entries");
  }
  // Motifs use pairwise-distinct fragments drawn by a seeded shuffle.
  std::vector<std::int32_t> pool(static_cast<std::size_t>(config_.vocabulary));
  std::iota(pool.begin(), pool.end(), 0);
  std::uint64_t s = config_.motif_seed;
  for (std::size_t i = pool.size() - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(splitmix64(s) % (i + 1));
    std::swap(pool[i], pool[j]);
  }
  std::size_t next = 0;
  for (int m = 0; m < config_.motif_count; ++m) {
    std::vector<std::int32_t> motif;
    for (int k = 0; k < config_.motif_length; ++k) motif.push_back(pool[next++]);
    motifs_.push_back(std::move(motif));
  }
}

void FragmentChain::check(const State& state) const {
  if (state.values.size() > static_cast<std::size_t>(config_.max_length)) {
    throw Error(ErrorCode::IllegalAction, "fragment chain longer than max_length");
  }
  for (auto v : state.values) {
    if (v < 0 || v >= config_.vocabulary) throw Error(ErrorCode::IllegalAction, "fragment id out of range");
  }
}

std::vector<ActionId> FragmentChain::legal_actions(const State& state) const {
  std::vector<ActionId> out;
  if (state.terminated) return out;
  if (state.values.size() < static_cast<std::size_t>(config_.max_length)) {
    for (int b = 0; b < config_.vocabulary; ++b) out.emplace_back(static_cast<std::uint32_t>(b));
  }
  if (!state.values.empty()) out.push_back(stop_action());
  return out;
}

State FragmentChain::step(const State& state, ActionId action) const {
  check(state);
  if (!is_legal(state, action)) throw Error(ErrorCode::IllegalAction, "illegal fragment action");
  State next = state;
  if (action == stop_action()) {
    next.terminated = true;
  } else {
    next.values.push_back(static_cast<std::int32_t>(action.index));
  }
  return next;
}

double FragmentChain::score(std::span<const std::int32_t> fragments) const {
  double total = 0.0;
  for (const auto& motif : motifs_) {
    std::size_t best = 0;
    for (std::size_t i = 0; i < fragments.size(); ++i) {
      std::size_t k = 0;
      while (k < motif.size() && i + k < fragments.size() && fragments[i + k] == motif[k]) ++k;
      best = std::max(best, k);
    }
    total += config_.motif_bonus * config_.prefix_credit[best];
  }
  const double offset = (static_cast<double>(fragments.size()) - config_.length_target) / config_.max_length;
  total += config_.length_weight * std::max(0.0, 1.0 - offset * offset);
  return total;
}

double FragmentChain::reward(const State& state) const {
  if (!state.terminated) throw Error(ErrorCode::NotTerminal, "reward requested for a non-terminal chain");
  check(state);
  return config_.epsilon + score(state.values);
}

bool FragmentChain::is_mode(const State& state) const { return reward(state) >= config_.mode_threshold; }

void FragmentChain::encode(const State& state, std::span<double> out) const {
  if (out.size() != encoding_dim()) throw Error(ErrorCode::DimensionMismatch, "encoding buffer size");
  std::fill(out.begin(), out.end(), 0.0);
  for (auto v : state.values) out[static_cast<std::size_t>(v)] += 1.0;
  out.back() = static_cast<double>(state.values.size()) / config_.max_length;
}

StateKey FragmentChain::key(const State& state) const { return pack(state); }

State FragmentChain::decode_key(const StateKey& key) const {
  State s = unpack(key);
  check(s);
  return s;
}

std::vector<ActionId> FragmentChain::parent_actions(const State& state) const {
  if (state.terminated) return {stop_action()};
  if (state.values.empty()) return {};
  return {ActionId(static_cast<std::uint32_t>(state.values.back()))};
}

State FragmentChain::parent(const State& state, ActionId action) const {
  const auto parents = parent_actions(state);
  if (parents.empty() || parents.front() != action) throw Error(ErrorCode::IllegalAction, "no parent along this action");
  State p = state;
  if (action == stop_action()) {
    p.terminated = false;
  } else {
    p.values.pop_back();
  }
  return p;
}

double FragmentChain::terminal_count() const {
  double total = 0.0;
  for (int l = 1; l <= config_.max_length; ++l) total += std::pow(config_.vocabulary, l);
  return total;
}

double FragmentChain::similarity(const State& a, const State& b) const {
  std::vector<int> ca(static_cast<std::size_t>(config_.vocabulary), 0);
  std::vector<int> cb(ca.size(), 0);
  for (auto v : a.values) ++ca[static_cast<std::size_t>(v)];
  for (auto v : b.values) ++cb[static_cast<std::size_t>(v)];
  int inter = 0;
  int uni = 0;
  for (std::size_t i = 0; i < ca.size(); ++i) {
    inter += std::min(ca[i], cb[i]);
    uni += std::max(ca[i], cb[i]);
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
}

}  // namespace mg2fn
