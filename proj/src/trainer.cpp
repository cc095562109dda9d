#include "mg2fn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <unordered_map>

#include "mg2fn/error.hpp"

namespace mg2fn {

using Eigen::MatrixXd;

// ---------------------------------------------------------------------------
// Trajectory balance

namespace {

double log_softmax_at(const double* logits, std::span<const ActionId> mask, ActionId target,
                      std::vector<double>& probs) {
  double hi = -std::numeric_limits<double>::infinity();
  for (ActionId a : mask) hi = std::max(hi, logits[a.index]);
  double total = 0.0;
  probs.resize(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    probs[i] = std::exp(logits[mask[i].index] - hi);
    total += probs[i];
  }
  for (double& p : probs) p /= total;
  return logits[target.index] - hi - std::log(total);
}

}  // namespace

TbLoss tb_loss(std::span<const Trajectory> batch, const PolicyNetwork& net, const Environment& env,
               BackwardPolicyMode backward) {
  if (batch.empty()) throw Error(ErrorCode::TooFew, "TB loss over an empty batch");
  const bool learned_pb = backward == BackwardPolicyMode::Learned && net.has_backward_head();
  const std::size_t actions = net.action_count();

  std::size_t columns = 0;
  for (const auto& tau : batch) {
    if (tau.states.size() != tau.actions.size() + 1 || tau.actions.empty()) {
      throw Error(ErrorCode::DimensionMismatch, "trajectory states/actions mismatch");
    }
    columns += tau.states.size();
  }
  MatrixXd inputs(static_cast<Eigen::Index>(env.encoding_dim()), static_cast<Eigen::Index>(columns));
  {
    Eigen::Index c = 0;
    for (const auto& tau : batch) {
      for (const auto& s : tau.states) env.encode(s, std::span<double>(inputs.col(c++).data(), env.encoding_dim()));
    }
  }
  const ForwardPass pass = net.forward(inputs);
  MatrixXd d_output = MatrixXd::Zero(pass.output.rows(), pass.output.cols());

  TbLoss out;
  out.residuals.reserve(batch.size());
  const double m = static_cast<double>(batch.size());
  std::vector<double> probs;
  double d_log_z = 0.0;

  std::size_t offset = 0;
  for (const auto& tau : batch) {
    if (!(tau.reward > 0.0)) throw Error(ErrorCode::NonFiniteLoss, "trajectory reward must be positive");
    const double log_r = std::log(tau.reward);
    double residual = net.log_z() - log_r;

    // First pass: residual.
    for (std::size_t t = 0; t < tau.length(); ++t) {
      const auto mask = env.legal_actions(tau.states[t]);
      const double* logits = pass.output.col(static_cast<Eigen::Index>(offset + t)).data();
      residual += log_softmax_at(logits, mask, tau.actions[t], probs);
      const auto parents = env.parent_actions(tau.states[t + 1]);
      if (learned_pb) {
        const double* b_logits = pass.output.col(static_cast<Eigen::Index>(offset + t + 1)).data() + actions;
        residual -= log_softmax_at(b_logits, parents, tau.actions[t], probs);
      } else {
        residual += std::log(static_cast<double>(parents.size()));
      }
    }
    if (!std::isfinite(residual)) throw Error(ErrorCode::NonFiniteLoss, "non-finite trajectory balance residual");

    // Second pass: d loss / d logits.
    const double g = 2.0 * residual / m;
    d_log_z += g;
    for (std::size_t t = 0; t < tau.length(); ++t) {
      const auto mask = env.legal_actions(tau.states[t]);
      const auto col = static_cast<Eigen::Index>(offset + t);
      log_softmax_at(pass.output.col(col).data(), mask, tau.actions[t], probs);
      for (std::size_t i = 0; i < mask.size(); ++i) {
        const double indicator = mask[i] == tau.actions[t] ? 1.0 : 0.0;
        d_output(static_cast<Eigen::Index>(mask[i].index), col) += g * (indicator - probs[i]);
      }
      if (learned_pb) {
        const auto parents = env.parent_actions(tau.states[t + 1]);
        const auto bcol = static_cast<Eigen::Index>(offset + t + 1);
        log_softmax_at(pass.output.col(bcol).data() + actions, parents, tau.actions[t], probs);
        for (std::size_t i = 0; i < parents.size(); ++i) {
          const double indicator = parents[i] == tau.actions[t] ? 1.0 : 0.0;
          d_output(static_cast<Eigen::Index>(actions + parents[i].index), bcol) -= g * (indicator - probs[i]);
        }
      }
    }
    out.loss += residual * residual / m;
    out.residuals.push_back(residual);
    offset += tau.states.size();
  }

  out.grads = net.backward(pass, d_output);
  out.grads.log_z = d_log_z;
  return out;
}

// ---------------------------------------------------------------------------
// Samplers

ActionId RandomSampler::choose(const State& state, const StateKey&, PolicyEvaluator& policy, Rng& rng,
                               std::uint64_t) {
  const auto legal = policy.env().legal_actions(state);
  return legal[static_cast<std::size_t>(rng.uniform() * static_cast<double>(legal.size()))];
}

ActionId VanillaSampler::choose(const State& state, const StateKey& key, PolicyEvaluator& policy, Rng& rng,
                                std::uint64_t) {
  return ActionId(static_cast<std::uint32_t>(rng.categorical(policy.forward_probs(state, key))));
}

ActionId MctsGreedySampler::choose(const State& state, const StateKey&, PolicyEvaluator& policy, Rng& rng,
                                   std::uint64_t round) {
  const auto choice = choose_action(store_, state, policy, config_, rng, round);
  evaluations_ += choice.playout.reward_evaluations;
  return choice.action;
}

std::unique_ptr<ActionSampler> make_sampler(const TrainConfig& config) {
  switch (config.sampler) {
    case SamplerKind::Random: return std::make_unique<RandomSampler>();
    case SamplerKind::Vanilla: return std::make_unique<VanillaSampler>();
    case SamplerKind::MctsGreedy: return std::make_unique<MctsGreedySampler>(config.greedy, config.node_cap);
  }
  return nullptr;
}

Trajectory sample_trajectory(ActionSampler& sampler, PolicyEvaluator& policy, BackwardPolicyMode backward, Rng& rng,
                             std::uint64_t round, VisitCounters& counters) {
  const Environment& env = policy.env();
  Trajectory tau;
  tau.states.push_back(env.initial_state());
  const std::size_t bound = env.max_trajectory_length();
  while (!env.is_terminal(tau.states.back())) {
    if (tau.actions.size() >= bound) throw Error(ErrorCode::DepthExceeded, "trajectory exceeded its length bound");
    const State& s = tau.states.back();
    const StateKey key = env.key(s);
    const ActionId a = sampler.choose(s, key, policy, rng, round);
    // Planner calls may have filled the cache; the lookup is for the net's
    // own probability of the chosen action.
    const double pf = policy.forward_probs(s, key)[a.index];
    State next = env.step(s, a);
    const auto parents = env.parent_actions(next);
    double log_pb = -std::log(static_cast<double>(parents.size()));
    if (backward == BackwardPolicyMode::Learned && policy.net().has_backward_head()) {
      const auto pb = backward_policy(policy.net(), env, next, backward);
      const auto it = std::find(parents.begin(), parents.end(), a);
      log_pb = std::log(pb[static_cast<std::size_t>(it - parents.begin())]);
    }
    tau.actions.push_back(a);
    tau.log_pf_terms.push_back(std::log(pf));
    tau.log_pb_terms.push_back(log_pb);
    tau.states.push_back(std::move(next));
  }
  tau.reward = env.reward(tau.states.back());
  ++counters.trainer;
  ++counters.total;
  return tau;
}

// ---------------------------------------------------------------------------
// Exact terminal distribution

TerminalDistributionEvaluator::TerminalDistributionEvaluator(const Environment& env) : env_(&env) {
  if (env.terminal_count() > env.enumeration_limit()) {
    throw Error(ErrorCode::TooLarge, "environment too large for exact terminal distribution");
  }
  // Discover interior states and their in-degrees, then order them with
  // Kahn's algorithm so every parent precedes its children.
  std::unordered_map<StateKey, std::size_t> interior_index;
  std::unordered_map<StateKey, std::size_t> terminal_index;
  std::vector<State> discovered{env.initial_state()};
  std::vector<std::vector<Edge>> raw_edges;
  std::vector<std::size_t> indegree{0};
  interior_index.emplace(env.key(discovered[0]), 0);
  for (std::size_t i = 0; i < discovered.size(); ++i) {
    std::vector<Edge> out;
    for (ActionId a : env.legal_actions(discovered[i])) {
      State next = env.step(discovered[i], a);
      StateKey k = env.key(next);
      if (env.is_terminal(next)) {
        auto [it, inserted] = terminal_index.try_emplace(k, terminals_.size());
        if (inserted) {
          rewards_.push_back(env.reward(next));
          terminals_.push_back(std::move(next));
          terminal_keys_.push_back(std::move(k));
        }
        out.push_back({a, true, it->second});
      } else {
        auto [it, inserted] = interior_index.try_emplace(k, discovered.size());
        if (inserted) {
          discovered.push_back(std::move(next));
          indegree.push_back(0);
        }
        ++indegree[it->second];
        out.push_back({a, false, it->second});
      }
    }
    raw_edges.push_back(std::move(out));
  }

  std::vector<std::size_t> order;
  order.reserve(discovered.size());
  std::deque<std::size_t> ready{0};
  while (!ready.empty()) {
    const std::size_t i = ready.front();
    ready.pop_front();
    order.push_back(i);
    for (const auto& e : raw_edges[i]) {
      if (!e.to_terminal && --indegree[e.target] == 0) ready.push_back(e.target);
    }
  }
  std::vector<std::size_t> position(discovered.size());
  for (std::size_t p = 0; p < order.size(); ++p) position[order[p]] = p;
  interior_.reserve(order.size());
  edges_.reserve(order.size());
  encodings_.resize(static_cast<Eigen::Index>(env.encoding_dim()), static_cast<Eigen::Index>(order.size()));
  for (std::size_t p = 0; p < order.size(); ++p) {
    interior_.push_back(discovered[order[p]]);
    auto edges = raw_edges[order[p]];
    for (auto& e : edges) {
      if (!e.to_terminal) e.target = position[e.target];
    }
    edges_.push_back(std::move(edges));
    env.encode(interior_.back(), std::span<double>(encodings_.col(static_cast<Eigen::Index>(p)).data(),
                                                   env.encoding_dim()));
  }
}

std::vector<double> TerminalDistributionEvaluator::evaluate(const PolicyNetwork& net) const {
  const MatrixXd logits = net.logits(encodings_);
  std::vector<double> mass(interior_.size(), 0.0);
  std::vector<double> out(terminals_.size(), 0.0);
  mass[0] = 1.0;
  std::vector<ActionId> mask;
  for (std::size_t i = 0; i < interior_.size(); ++i) {
    mask.clear();
    for (const auto& e : edges_[i]) mask.push_back(e.action);
    const auto probs = masked_softmax(
        std::span<const double>(logits.col(static_cast<Eigen::Index>(i)).data(), net.action_count()), mask);
    for (const auto& e : edges_[i]) {
      const double flow = mass[i] * probs[e.action.index];
      (e.to_terminal ? out : mass)[e.target] += flow;
    }
  }
  return out;
}

TerminalDistribution TerminalDistributionEvaluator::evaluate_map(const PolicyNetwork& net) const {
  const auto probs = evaluate(net);
  TerminalDistribution out;
  for (std::size_t i = 0; i < probs.size(); ++i) out.emplace(terminal_keys_[i], probs[i]);
  return out;
}

TerminalDistribution exact_terminal_distribution(const PolicyNetwork& net, const Environment& env) {
  return TerminalDistributionEvaluator(env).evaluate_map(net);
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

std::vector<State> top_states(const TopKTracker& tracker) {
  std::vector<State> states;
  for (auto& e : tracker.best()) states.push_back(std::move(e.state));
  return states;
}

}  // namespace

TrainResult train(const TrainConfig& config, const Environment& env, PolicyNetwork& net, Rng& rng,
                  const MetricsSink& sink) {
  if (config.batch_size == 0) throw Error(ErrorCode::ValidationError, "batch_size must be >= 1");
  if (config.metrics.metric_interval == 0 || config.metrics.eval_interval == 0) {
    throw Error(ErrorCode::ValidationError, "metric intervals must be >= 1");
  }
  AdamOptimizer opt(net, config.adam);
  PolicyEvaluator policy(net, env);
  auto sampler = make_sampler(config);

  std::optional<TerminalDistributionEvaluator> exact;
  if (config.metrics.compute_l1 && env.terminal_count() <= env.enumeration_limit()) exact.emplace(env);
  auto current_l1 = [&]() { return l1_error(exact->evaluate(net), exact->rewards(), config.metrics.l1_weighting); };

  TrainResult result;
  result.mode_crossings = ThresholdCrossings(config.metrics.mode_milestones, false);
  result.top_k_crossings = ThresholdCrossings(config.metrics.top_k_thresholds, true);
  if (exact) result.initial_l1 = current_l1();

  ModeTracker modes;
  TopKTracker top_k(config.metrics.top_k);
  TopKTracker top_diverse(config.metrics.diversity_k);
  VisitCounters& counters = result.counters;
  MetricsRecord record;
  std::vector<Trajectory> batch;
  bool emitted_last = false;

  while (counters.trainer < config.budget) {
    batch.clear();
    const std::uint64_t planner_before = sampler->planner_evaluations();
    for (std::size_t i = 0; i < config.batch_size; ++i) {
      batch.push_back(sample_trajectory(*sampler, policy, config.backward, rng, result.rounds, counters));
      const auto& tau = batch.back();
      const State& x = tau.states.back();
      const StateKey key = env.key(x);
      modes.update(env, x, key);
      top_k.submit(key, x, tau.reward);
      top_diverse.submit(key, x, tau.reward);
    }
    counters.total += sampler->planner_evaluations() - planner_before;

    TbLoss loss;
    try {
      loss = tb_loss(batch, net, env, config.backward);
      opt.apply(net, loss.grads);
    } catch (const Error& e) {
      if (config.diagnostic_checkpoint &&
          (e.code() == ErrorCode::NonFiniteLoss || e.code() == ErrorCode::NonFiniteGradient)) {
        save_checkpoint(*config.diagnostic_checkpoint, net, opt);
      }
      throw;
    }
    if (!net.all_finite()) {
      if (config.diagnostic_checkpoint) save_checkpoint(*config.diagnostic_checkpoint, net, opt);
      throw Error(ErrorCode::NonFiniteLoss, "parameters became non-finite");
    }
    policy.invalidate();
    ++result.rounds;

    const CrossingPoint at{counters.trainer, counters.total};
    result.mode_crossings.observe(static_cast<double>(modes.count()), at);
    result.top_k_crossings.observe(top_k.average(), at);

    const bool stopping = counters.trainer >= config.budget ||
                          (config.stop_at_modes && modes.count() >= *config.stop_at_modes);
    record.round = result.rounds;
    record.states_visited_total = counters.total;
    record.states_visited_trainer = counters.trainer;
    record.modes_found = modes.count();
    record.avg_top_k = top_k.average();
    record.loss = loss.loss;
    if (result.rounds % config.metrics.eval_interval == 0 || stopping) {
      if (exact) record.l1_error = current_l1();
      if (top_diverse.size() >= 2) record.diversity = diversity(top_states(top_diverse), env);
    }
    emitted_last = result.rounds % config.metrics.metric_interval == 0;
    if (emitted_last && sink) sink(record);
    if (stopping) break;
  }
  if (result.rounds > 0 && !emitted_last && sink) sink(record);
  result.final_record = record;
  if (auto* mcts = dynamic_cast<MctsGreedySampler*>(sampler.get())) result.planner_nodes = mcts->store().size();
  return result;
}

}  // namespace mg2fn
