#include "mg2fn/experiment.hpp"

#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "mg2fn/error.hpp"

namespace mg2fn {

using json = nlohmann::json;

namespace {

[[noreturn]] void invalid(const std::string& path, const std::string& why) {
  throw Error(ErrorCode::ValidationError, path + ": " + why);
}

// Reads one JSON object, recording the resolved value of every key and
// rejecting keys that nothing asked for.
class Block {
 public:
  Block(json j, std::string path) : j_(std::move(j)), path_(std::move(path)) {
    if (!j_.is_object()) invalid(path_, "expected an object");
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }
  const json& raw(const std::string& key) {
    used_.insert(key);
    return j_.at(key);
  }
  void mark(const std::string& key) { used_.insert(key); }

  double number(const std::string& key, double fallback, double lo, double hi) {
    used_.insert(key);
    double v = fallback;
    if (has(key)) {
      const auto& x = j_.at(key);
      if (!x.is_number()) invalid(at(key), "expected a number");
      v = x.get<double>();
    }
    if (!std::isfinite(v) || v < lo || v > hi) invalid(at(key), "value " + json(v).dump() + " out of range");
    resolved[key] = v;
    return v;
  }

  std::int64_t integer(const std::string& key, std::int64_t fallback, std::int64_t lo, std::int64_t hi) {
    used_.insert(key);
    std::int64_t v = fallback;
    if (has(key)) {
      const auto& x = j_.at(key);
      if (!x.is_number_integer()) invalid(at(key), "expected an integer");
      v = x.get<std::int64_t>();
    }
    if (v < lo || v > hi) invalid(at(key), "value " + std::to_string(v) + " out of range");
    resolved[key] = v;
    return v;
  }

  std::optional<std::int64_t> optional_integer(const std::string& key, std::optional<std::int64_t> fallback,
                                               std::int64_t lo) {
    used_.insert(key);
    std::optional<std::int64_t> v = fallback;
    if (j_.contains(key)) {
      const auto& x = j_.at(key);
      if (x.is_null()) {
        v.reset();
      } else {
        if (!x.is_number_integer()) invalid(at(key), "expected an integer or null");
        v = x.get<std::int64_t>();
      }
    }
    if (v && *v < lo) invalid(at(key), "value out of range");
    resolved[key] = v ? json(*v) : json(nullptr);
    return v;
  }

  std::string choice(const std::string& key, const std::string& fallback, std::initializer_list<const char*> options) {
    used_.insert(key);
    std::string v = fallback;
    if (has(key)) {
      if (!j_.at(key).is_string()) invalid(at(key), "expected a string");
      v = j_.at(key).get<std::string>();
    }
    for (const char* o : options) {
      if (v == o) {
        resolved[key] = v;
        return v;
      }
    }
    invalid(at(key), "unknown value \"" + v + "\"");
  }

  bool boolean(const std::string& key, bool fallback) {
    used_.insert(key);
    bool v = fallback;
    if (has(key)) {
      if (!j_.at(key).is_boolean()) invalid(at(key), "expected a boolean");
      v = j_.at(key).get<bool>();
    }
    resolved[key] = v;
    return v;
  }

  std::vector<double> numbers(const std::string& key, std::vector<double> fallback) {
    used_.insert(key);
    if (has(key)) {
      const auto& x = j_.at(key);
      if (!x.is_array()) invalid(at(key), "expected an array of numbers");
      fallback.clear();
      for (const auto& e : x) {
        if (!e.is_number()) invalid(at(key), "expected an array of numbers");
        fallback.push_back(e.get<double>());
      }
    }
    resolved[key] = fallback;
    return fallback;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!used_.contains(key)) invalid(at(key), "unknown key \"" + key + "\"");
    }
  }

  json resolved = json::object();

 private:
  json j_;
  std::string path_;
  std::set<std::string> used_;
};

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

void log_line(LogLevel level, const std::string& message) {
  static std::mutex mutex;
  if (log_level() < level) return;
  std::lock_guard lock(mutex);
  std::cerr << "[mg2fn] " << message << '\n';
}

json crossings_json(const ThresholdCrossings& c) {
  json out = json::array();
  for (const auto& [threshold, hit] : c.table()) {
    json row{{"threshold", threshold}};
    if (hit) {
      row["states_visited_trainer"] = hit->states_visited_trainer;
      row["states_visited_total"] = hit->states_visited_total;
    } else {
      row["states_visited_trainer"] = nullptr;
      row["states_visited_total"] = nullptr;
    }
    out.push_back(row);
  }
  return out;
}

json record_json(const MetricsRecord& r) {
  auto real = [](double v) { return std::isnan(v) ? json(nullptr) : json(v); };
  return {{"round", r.round},
          {"states_visited_total", r.states_visited_total},
          {"states_visited_trainer", r.states_visited_trainer},
          {"modes_found", r.modes_found},
          {"l1_error", real(r.l1_error)},
          {"avg_top_k", r.avg_top_k},
          {"diversity", real(r.diversity)},
          {"loss", real(r.loss)}};
}

}  // namespace

LogLevel log_level() {
  const char* v = std::getenv("MG2FN_LOG");
  if (v == nullptr) return LogLevel::Info;
  const std::string s(v);
  if (s == "quiet") return LogLevel::Quiet;
  if (s == "debug") return LogLevel::Debug;
  return LogLevel::Info;
}

// ---------------------------------------------------------------------------
// Configuration

std::string RunConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, fnv1a(resolved.dump()));
  return buf;
}

RunConfig parse_config(const json& document) {
  Block root(document, "");
  RunConfig config;

  // environment
  json env_doc = json::object();
  if (!root.has("environment")) invalid("environment", "missing");
  {
    const json& e = root.raw("environment");
    if (e.is_string()) {
      env_doc["kind"] = e;
    } else if (e.is_object()) {
      env_doc = e;
    } else {
      invalid("environment", "expected a kind string or an object");
    }
  }
  Block env(env_doc, "environment");
  const std::string kind = env.choice("kind", "hypergrid", {"hypergrid", "fragment_chain"});
  const bool grid = kind == "hypergrid";
  if (grid) {
    HypergridConfig c;
    c.horizon = static_cast<int>(env.integer("H", 8, 2, 255));
    c.dimension = static_cast<int>(env.integer("D", 4, 1, 64));
    c.r0 = env.number("R0", 1e-5, 1e-300, 1e300);
    c.r1 = env.number("R1", 0.5, 0.0, 1e300);
    c.r2 = env.number("R2", 2.0, 0.0, 1e300);
    config.environment = c;
  } else {
    FragmentChainConfig c;
    c.vocabulary = static_cast<int>(env.integer("B", 32, 1, 255));
    c.max_length = static_cast<int>(env.integer("L_max", 6, 1, 64));
    c.epsilon = env.number("epsilon", 1e-5, 1e-300, 1e300);
    c.motif_count = static_cast<int>(env.integer("motif_count", 4, 0, 255));
    c.motif_length = static_cast<int>(env.integer("motif_length", 3, 1, 64));
    c.motif_bonus = env.number("motif_bonus", 4.0, 0.0, 1e300);
    std::vector<double> credit = c.prefix_credit;
    if (c.motif_length != 3) {
      credit.assign(static_cast<std::size_t>(c.motif_length) + 1, 0.0);
      credit.back() = 1.0;
    }
    c.prefix_credit = env.numbers("prefix_credit", credit);
    c.length_weight = env.number("length_weight", 1.0, 0.0, 1e300);
    c.length_target = env.number("length_target", 4.0, 0.0, 1e6);
    c.motif_seed = static_cast<std::uint64_t>(env.integer("motif_seed", 7, 0, INT64_MAX));
    c.mode_threshold = env.number("mode_threshold", 4.0, -1e300, 1e300);
    c.enumeration_limit = env.number("enumeration_limit", 2e6, 0.0, 1e300);
    if (c.prefix_credit.size() != static_cast<std::size_t>(c.motif_length) + 1) {
      invalid("environment.prefix_credit", "needs motif_length + 1 entries");
    }
    if (c.motif_count * c.motif_length > c.vocabulary) {
      invalid("environment.motif_count", "motifs need motif_count * motif_length distinct fragments");
    }
    config.environment = c;
  }
  env.finish();

  // training
  json training_doc = root.has("training") ? root.raw("training") : json::object();
  root.mark("training");
  Block tr(training_doc, "training");
  TrainConfig& t = config.training;
  t.batch_size = static_cast<std::size_t>(tr.integer("batch_size", 16, 1, 1 << 20));
  t.budget = static_cast<std::uint64_t>(tr.integer("budget", 40000, 0, INT64_MAX));
  t.adam.learning_rate = tr.number("learning_rate", 1e-3, 1e-300, 1e3);
  t.adam.log_z_learning_rate = tr.number("log_z_learning_rate", 1e-1, 1e-300, 1e3);
  t.backward = tr.choice("backward_policy", grid ? "uniform" : "learned", {"uniform", "learned"}) == "learned"
                   ? BackwardPolicyMode::Learned
                   : BackwardPolicyMode::Uniform;
  {
    tr.mark("hidden");
    if (tr.has("hidden")) {
      const json& h = training_doc.at("hidden");
      if (!h.is_array() || h.empty()) invalid("training.hidden", "expected a nonempty array of layer widths");
      config.hidden.clear();
      for (const auto& w : h) {
        if (!w.is_number_integer() || w.get<std::int64_t>() < 1) invalid("training.hidden", "widths must be >= 1");
        config.hidden.push_back(w.get<std::size_t>());
      }
    }
    tr.resolved["hidden"] = config.hidden;
  }
  if (auto cap = tr.optional_integer("node_cap", grid ? std::nullopt : std::optional<std::int64_t>(2'000'000), 1)) {
    t.node_cap = static_cast<std::size_t>(*cap);
  }
  if (auto stop = tr.optional_integer("stop_at_modes", std::nullopt, 1)) {
    t.stop_at_modes = static_cast<std::size_t>(*stop);
  }
  tr.finish();

  // sampler
  json sampler_doc = root.has("sampler") ? root.raw("sampler") : json::object();
  root.mark("sampler");
  Block sa(sampler_doc, "sampler");
  const std::string sampler_kind = sa.choice("kind", "mcts_greedy", {"mcts_greedy", "vanilla", "random"});
  t.sampler = sampler_kind == "vanilla"  ? SamplerKind::Vanilla
              : sampler_kind == "random" ? SamplerKind::Random
                                         : SamplerKind::MctsGreedy;
  const std::uint64_t default_anneal = std::max<std::uint64_t>(1, (t.budget / t.batch_size) / 2);
  sa.mark("alpha");
  if (!sa.has("alpha") || sampler_doc.at("alpha").is_number()) {
    Block scalar(json{{"alpha", sa.has("alpha") ? sampler_doc.at("alpha") : json(0.2)}}, "sampler");
    const double a = scalar.number("alpha", 0.2, 0.0, 1.0);
    t.greedy.alpha = AlphaSchedule::fixed(a);
    sa.resolved["alpha"] = a;
  } else {
    Block sched(sampler_doc.at("alpha"), "sampler.alpha");
    const double start = sched.number("start", 0.0, 0.0, 1.0);
    const double end = sched.number("end", 0.2, 0.0, 1.0);
    const auto rounds = static_cast<std::uint64_t>(
        sched.integer("anneal_rounds", static_cast<std::int64_t>(default_anneal), 1, INT64_MAX));
    sched.finish();
    t.greedy.alpha = AlphaSchedule::linear(start, end, rounds);
    sa.resolved["alpha"] = sched.resolved;
  }
  t.greedy.planner.c_puct = sa.number("c_puct", 1.0, 0.0, 1e300);
  t.greedy.planner.n_playout = static_cast<std::uint32_t>(sa.integer("n_playout", 1, 1, 1 << 30));
  t.greedy.planner.max_sim_depth = static_cast<std::uint32_t>(sa.integer("max_sim_depth", grid ? 20 : 8, 1, 1 << 30));
  t.greedy.planner.expansion =
      sa.choice("expansion", "all", {"all", "single"}) == "single" ? ExpansionMode::SingleChild
                                                                  : ExpansionMode::AllChildren;
  sa.finish();

  // output
  json output_doc = root.has("output") ? root.raw("output") : json::object();
  root.mark("output");
  Block out(output_doc, "output");
  {
    out.mark("directory");
    if (out.has("directory")) {
      if (!output_doc.at("directory").is_string()) invalid("output.directory", "expected a string");
      config.output_directory = output_doc.at("directory").get<std::string>();
    }
    out.resolved["directory"] = config.output_directory.string();
  }
  auto& m = t.metrics;
  m.metric_interval = static_cast<std::size_t>(out.integer("metric_interval", 1, 1, INT64_MAX));
  m.eval_interval = static_cast<std::size_t>(out.integer("eval_interval", 25, 1, INT64_MAX));
  m.top_k = static_cast<std::size_t>(out.integer("top_k", 100, 1, INT64_MAX));
  m.diversity_k = static_cast<std::size_t>(out.integer("diversity_k", 1000, 2, INT64_MAX));
  m.top_k_thresholds = out.numbers("top_k_thresholds", grid ? std::vector<double>{} : std::vector<double>{4.0, 4.5, 5.0});
  m.mode_milestones = out.numbers("mode_milestones", grid ? std::vector<double>{4, 8, 16} : std::vector<double>{1, 10, 100});
  m.l1_weighting = out.choice("l1_weighting", "uniform", {"uniform", "policy"}) == "policy" ? L1Weighting::Policy
                                                                                             : L1Weighting::Uniform;
  m.compute_l1 = out.boolean("compute_l1", true);
  config.save_checkpoint = out.boolean("save_checkpoint", false);
  out.finish();

  // seeds
  root.mark("seeds");
  if (root.has("seeds")) {
    const json& s = document.at("seeds");
    if (!s.is_array()) invalid("seeds", "expected an array of integers");
    if (s.empty()) invalid("seeds", "seed list is empty");
    config.seeds.clear();
    for (const auto& v : s) {
      if (!v.is_number_integer() || v.get<std::int64_t>() < 0) invalid("seeds", "seeds must be nonnegative integers");
      config.seeds.push_back(v.get<std::uint64_t>());
    }
  }
  root.finish();

  config.resolved = {{"environment", env.resolved},
                     {"training", tr.resolved},
                     {"sampler", sa.resolved},
                     {"output", out.resolved},
                     {"seeds", config.seeds}};
  return config;
}

RunConfig parse_config_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
  return parse_config(doc);
}

RunConfig parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str());
}

std::unique_ptr<Environment> make_environment(const EnvironmentConfig& config) {
  if (const auto* g = std::get_if<HypergridConfig>(&config)) return std::make_unique<Hypergrid>(*g);
  return std::make_unique<FragmentChain>(std::get<FragmentChainConfig>(config));
}

// ---------------------------------------------------------------------------
// Runs

const char* const kMetricsCsvHeader =
    "round,states_visited_total,states_visited_trainer,modes_found,l1_error,avg_top_k,diversity,loss";

void write_csv_row(std::ostream& out, const MetricsRecord& r) {
  out << r.round << ',' << r.states_visited_total << ',' << r.states_visited_trainer << ',' << r.modes_found << ','
      << format_real(r.l1_error) << ',' << format_real(r.avg_top_k) << ',' << format_real(r.diversity) << ','
      << format_real(r.loss) << '\n';
}

json RunSummary::to_json() const {
  json out{{"config_hash", config_hash}, {"config", config}, {"wall_clock_seconds", wall_seconds}};
  json seeds_json = json::array();
  for (const auto& s : seeds) {
    json row{{"seed", s.seed}, {"status", s.ok ? "ok" : "failed"}, {"seconds", s.seconds}};
    if (!s.ok) row["error"] = s.error;
    row["final"] = record_json(s.result.final_record);
    row["initial_l1_error"] = s.result.initial_l1 ? json(*s.result.initial_l1) : json(nullptr);
    row["rounds"] = s.result.rounds;
    row["planner_nodes"] = s.result.planner_nodes;
    row["mode_crossings"] = crossings_json(s.result.mode_crossings);
    row["top_k_crossings"] = crossings_json(s.result.top_k_crossings);
    seeds_json.push_back(row);
  }
  out["seeds"] = seeds_json;
  return out;
}

namespace {

SeedResult run_seed(const RunConfig& config, const Environment& env, std::uint64_t seed,
                    const std::filesystem::path& out_dir) {
  SeedResult sr;
  sr.seed = seed;
  const auto start = std::chrono::steady_clock::now();
  const auto seed_dir = out_dir / std::to_string(seed);
  try {
    std::filesystem::create_directories(seed_dir);
    std::ofstream csv(seed_dir / "metrics.csv", std::ios::binary);
    if (!csv) throw Error(ErrorCode::IoError, "cannot write " + (seed_dir / "metrics.csv").string());
    csv << kMetricsCsvHeader << '\n';

    Rng rng(seed);
    NetworkShape shape{env.encoding_dim(), env.action_count(), config.hidden,
                       config.training.backward == BackwardPolicyMode::Learned};
    PolicyNetwork net(shape, rng);
    TrainConfig training = config.training;
    training.diagnostic_checkpoint = seed_dir / "diagnostic_checkpoint.json";
    sr.result = train(training, env, net, rng, [&](const MetricsRecord& r) {
      write_csv_row(csv, r);
      if (log_level() >= LogLevel::Debug) {
        log_line(LogLevel::Debug, "seed " + std::to_string(seed) + " round " + std::to_string(r.round) + " modes " +
                                      std::to_string(r.modes_found));
      }
    });
    if (config.save_checkpoint) {
      AdamOptimizer fresh(net, training.adam);
      save_checkpoint(seed_dir / "checkpoint.json", net, fresh);
    }
    sr.ok = true;
  } catch (const std::exception& e) {
    sr.ok = false;
    sr.error = e.what();
    log_line(LogLevel::Info, "seed " + std::to_string(seed) + " failed: " + sr.error);
  }
  sr.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return sr;
}

}  // namespace

RunSummary run(const RunConfig& config, const std::filesystem::path& out_dir, std::size_t jobs) {
  if (config.seeds.empty()) invalid("seeds", "seed list is empty");
  const auto env = make_environment(config.environment);
  const auto start = std::chrono::steady_clock::now();
  std::filesystem::create_directories(out_dir);

  RunSummary summary;
  summary.config_hash = config.hash();
  summary.config = config.resolved;
  summary.seeds.resize(config.seeds.size());

  jobs = std::max<std::size_t>(1, std::min(jobs, config.seeds.size()));
  std::size_t next = 0;
  std::mutex mutex;
  auto worker = [&]() {
    while (true) {
      std::size_t i;
      {
        std::lock_guard lock(mutex);
        if (next >= config.seeds.size()) return;
        i = next++;
      }
      log_line(LogLevel::Info, "running seed " + std::to_string(config.seeds[i]) + " -> " + out_dir.string());
      summary.seeds[i] = run_seed(config, *env, config.seeds[i], out_dir);
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }

  summary.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::ofstream out(out_dir / "summary.json", std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write summary.json");
  out << summary.to_json().dump(2) << '\n';
  return summary;
}

// ---------------------------------------------------------------------------
// Ablations

AblationAxis parse_axis(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) invalid("axis", "expected key=v1,v2,... but got \"" + spec + "\"");
  AblationAxis axis;
  axis.key = spec.substr(0, eq);
  std::stringstream rest(spec.substr(eq + 1));
  std::string token;
  while (std::getline(rest, token, ',')) {
    if (token.empty()) invalid("axis " + axis.key, "empty value");
    try {
      axis.values.push_back(json::parse(token));
    } catch (const json::parse_error&) {
      axis.values.emplace_back(token);
    }
  }
  if (axis.values.empty()) invalid("axis " + axis.key, "no values");
  return axis;
}

json apply_override(json base, const std::string& key, const json& value) {
  json* node = &base;
  std::stringstream parts(key);
  std::string part;
  std::vector<std::string> path;
  while (std::getline(parts, part, '.')) path.push_back(part);
  if (path.empty()) invalid("axis", "empty key");
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    json& child = (*node)[path[i]];
    if (child.is_string() && path[i] == "environment") child = json{{"kind", child}};
    if (child.is_null()) child = json::object();
    if (!child.is_object()) invalid(key, "cannot override inside a non-object value");
    node = &child;
  }
  (*node)[path.back()] = value;
  return base;
}

std::vector<AblationRun> ablation_matrix(const json& base, const std::vector<AblationAxis>& axes,
                                         const std::filesystem::path& out_dir, std::size_t jobs) {
  std::vector<std::vector<std::pair<std::string, json>>> cells{{}};
  for (const auto& axis : axes) {
    if (axis.values.empty()) invalid("axis " + axis.key, "no values");
    std::vector<std::vector<std::pair<std::string, json>>> next;
    for (const auto& cell : cells) {
      for (const auto& v : axis.values) {
        auto extended = cell;
        extended.emplace_back(axis.key, v);
        next.push_back(std::move(extended));
      }
    }
    cells = std::move(next);
  }

  // Validate every cell before running any.
  std::vector<RunConfig> configs;
  for (const auto& cell : cells) {
    json doc = base;
    for (const auto& [k, v] : cell) doc = apply_override(std::move(doc), k, v);
    configs.push_back(parse_config(doc));
  }

  std::filesystem::create_directories(out_dir);
  std::vector<AblationRun> runs;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    std::string label;
    for (const auto& [k, v] : cells[i]) label += (label.empty() ? "" : ",") + k + "=" + v.dump();
    std::string dirname = label.empty() ? "base" : label;
    for (char& c : dirname) {
      if (c == '/' || c == '"' || c == ' ' || c == '{' || c == '}' || c == ':') c = '_';
    }
    log_line(LogLevel::Info, "ablation cell " + (label.empty() ? std::string("base") : label));
    runs.push_back({cells[i], run(configs[i], out_dir / dirname, jobs)});
  }

  std::ofstream csv(out_dir / "comparison.csv", std::ios::binary);
  if (!csv) throw Error(ErrorCode::IoError, "cannot write comparison.csv");
  for (const auto& axis : axes) csv << axis.key << ',';
  csv << "seed,status,config_hash," << std::string(kMetricsCsvHeader) << ",initial_l1_error";
  const auto& first = configs.empty() ? TrainConfig{}.metrics : configs.front().training.metrics;
  for (double m : first.mode_milestones) csv << ",modes_" << format_real(m) << "_visits";
  for (double t : first.top_k_thresholds) csv << ",top_k_gt_" << format_real(t) << "_visits";
  csv << '\n';
  for (const auto& r : runs) {
    for (const auto& s : r.summary.seeds) {
      for (const auto& [k, v] : r.overrides) {
        const std::string text = v.is_string() ? v.get<std::string>() : v.dump();
        csv << (text.find(',') != std::string::npos ? "\"" + text + "\"" : text) << ',';
      }
      csv << s.seed << ',' << (s.ok ? "ok" : "failed") << ',' << r.summary.config_hash << ',';
      std::ostringstream row;
      write_csv_row(row, s.result.final_record);
      std::string line = row.str();
      line.pop_back();
      csv << line << ',' << (s.result.initial_l1 ? format_real(*s.result.initial_l1) : "nan");
      for (const auto* table : {&s.result.mode_crossings, &s.result.top_k_crossings}) {
        for (const auto& [threshold, hit] : table->table()) {
          csv << ',' << (hit ? std::to_string(hit->states_visited_trainer) : "");
        }
      }
      csv << '\n';
    }
  }
  return runs;
}

}  // namespace mg2fn
