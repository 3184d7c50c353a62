#include "tlab/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "toml++/toml.hpp"

namespace tlab {

namespace {

// Reads typed values from one TOML table and remembers which keys were used,
// so leftovers can be reported as unknown.
class Section {
 public:
  Section(const toml::table* table, std::string path) : table_(table), path_(std::move(path)) {}

  bool present() const { return table_ != nullptr; }

  Section sub(std::string_view key) {
    used_.emplace(key);
    if (!table_) return {nullptr, qualified(key)};
    const auto* node = table_->get(key);
    if (!node) return {nullptr, qualified(key)};
    const auto* t = node->as_table();
    if (!t) fail(key, "a table");
    return {t, qualified(key)};
  }

  void get(std::string_view key, double& out) {
    if (const auto* n = node(key)) {
      auto v = n->value<double>();
      if (!n->is_number() || !v) fail(key, "a number");
      out = *v;
    }
  }

  void get(std::string_view key, int& out) {
    if (const auto* n = node(key)) {
      if (!n->is_integer()) fail(key, "an integer");
      out = static_cast<int>(n->as_integer()->get());
    }
  }

  void get(std::string_view key, std::size_t& out) {
    if (const auto* n = node(key)) {
      if (!n->is_integer() || n->as_integer()->get() < 0) fail(key, "a non-negative integer");
      out = static_cast<std::size_t>(n->as_integer()->get());
    }
  }

  void get(std::string_view key, std::string& out) {
    if (const auto* n = node(key)) {
      if (!n->is_string()) fail(key, "a string");
      out = n->as_string()->get();
    }
  }

  std::vector<double> numbers(const toml::node& n, std::string_view key) {
    const auto* arr = n.as_array();
    if (!arr) fail(key, "an array of numbers");
    std::vector<double> out;
    for (const auto& e : *arr) {
      auto v = e.value<double>();
      if (!e.is_number() || !v) fail(key, "an array of numbers");
      out.push_back(*v);
    }
    return out;
  }

  /// Accepts a scalar (one entry) or an array.
  void get(std::string_view key, Eigen::VectorXd& out) {
    if (const auto* n = node(key)) {
      std::vector<double> v;
      if (n->is_number()) {
        v.push_back(*n->value<double>());
      } else {
        v = numbers(*n, key);
      }
      out = Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    }
  }

  template <std::size_t N>
  void get(std::string_view key, std::array<double, N>& out) {
    if (const auto* n = node(key)) {
      auto v = numbers(*n, key);
      if (v.size() != N) fail(key, "an array of " + std::to_string(N) + " numbers");
      std::copy(v.begin(), v.end(), out.begin());
    }
  }

  template <int R>
  void get(std::string_view key, Eigen::Matrix<double, R, 1>& out) {
    if (const auto* n = node(key)) {
      auto v = numbers(*n, key);
      if (v.size() != static_cast<std::size_t>(R)) fail(key, "an array of " + std::to_string(R) + " numbers");
      for (int i = 0; i < R; ++i) out(i) = v[static_cast<std::size_t>(i)];
    }
  }

  template <int R, int C>
  void get_matrix(std::string_view key, Eigen::Matrix<double, R, C>& out) {
    if (const auto* n = node(key)) {
      const auto* rows = n->as_array();
      if (!rows || rows->size() != static_cast<std::size_t>(R)) fail(key, std::to_string(R) + " rows");
      for (int r = 0; r < R; ++r) {
        auto v = numbers(*rows->get(static_cast<std::size_t>(r)), key);
        if (v.size() != static_cast<std::size_t>(C)) fail(key, std::to_string(C) + " columns per row");
        for (int c = 0; c < C; ++c) out(r, c) = v[static_cast<std::size_t>(c)];
      }
    }
  }

  template <std::size_t R, std::size_t C>
  void get_table(std::string_view key, std::array<std::array<double, C>, R>& out) {
    if (const auto* n = node(key)) {
      const auto* rows = n->as_array();
      if (!rows || rows->size() != R) fail(key, std::to_string(R) + " rows");
      for (std::size_t r = 0; r < R; ++r) {
        auto v = numbers(*rows->get(r), key);
        if (v.size() != C) fail(key, std::to_string(C) + " columns per row");
        std::copy(v.begin(), v.end(), out[r].begin());
      }
    }
  }

  std::vector<std::string> strings(std::string_view key) {
    std::vector<std::string> out;
    if (const auto* n = node(key)) {
      const auto* arr = n->as_array();
      if (!arr) fail(key, "an array of strings");
      for (const auto& e : *arr) {
        if (!e.is_string()) fail(key, "an array of strings");
        out.push_back(e.as_string()->get());
      }
    }
    return out;
  }

  bool has(std::string_view key) const { return table_ && table_->contains(key); }

  void finish() const {
    if (!table_) return;
    for (const auto& [k, _] : *table_) {
      if (!used_.count(std::string(k.str()))) throw ConfigError("unknown key " + qualified(k.str()));
    }
  }

  [[noreturn]] void fail(std::string_view key, const std::string& expected) const {
    throw ConfigError(qualified(key) + " must be " + expected);
  }

 private:
  const toml::node* node(std::string_view key) {
    used_.emplace(key);
    return table_ ? table_->get(key) : nullptr;
  }
  std::string qualified(std::string_view key) const {
    return path_.empty() ? std::string(key) : path_ + "." + std::string(key);
  }

  const toml::table* table_;
  std::string path_;
  std::set<std::string, std::less<>> used_;
};

void read_outcome(Section s, OutcomeModel& m) {
  s.get("intercept", m.intercept);
  s.get("tendency_weight", m.tendency_weight);
  s.get("circumstance_weight", m.circumstance_weight);
  s.finish();
}

void read_generator(Section s, GeneratorConfig& g) {
  s.get("seed", g.seed);
  s.get("n_agents", g.n_agents);
  s.get("conversations_per_agent", g.conversations_per_agent);
  s.get("tendency_dim", g.tendency_dim);
  s.get("tendency_scale", g.tendency_scale);
  s.get("n_windows", g.n_windows);
  s.get("n_days", g.n_days);
  s.get("n_hour_blocks", g.n_hour_blocks);
  s.get("shifts_per_agent", g.shifts_per_agent);
  s.get("load_factor", g.load_factor);
  s.get("shift_selection_bias", g.shift_selection_bias);
  s.get("selection_loading", g.selection_loading);
  s.get_matrix("interaction_coupling", g.interaction_coupling);
  s.get("behavior_noise", g.behavior_noise);
  s.get("outcome_noise", g.outcome_noise);
  s.get("rating_response_rate", g.rating_response_rate);
  s.get("disengage_length_factor", g.disengage_length_factor);
  std::string mode(to_string(g.assignment_mode));
  s.get("assignment_mode", mode);
  auto parsed = parse_assignment_mode(mode);
  if (!parsed) s.fail("assignment_mode", "random_within_shift or biased");
  g.assignment_mode = *parsed;
  s.get("within_shift_bias", g.within_shift_bias);

  {
    Section c = s.sub("circumstance");
    auto& cm = g.circumstance_by_shift;
    c.get("difficulty_mean", cm.difficulty_mean);
    c.get("congeniality_mean", cm.congeniality_mean);
    c.get("day_congeniality", cm.day_congeniality);
    c.get("sd", cm.sd);
    c.get("issue_difficulty", cm.issue_difficulty);
    c.get_table("issue_probs", cm.issue_probs);
    c.finish();
  }
  {
    Section b = s.sub("behavior_link");
    b.get("base", g.behavior_link.base);
    b.get("scale", g.behavior_link.scale);
    b.finish();
  }
  read_outcome(s.sub("rating"), g.rating);
  read_outcome(s.sub("closure"), g.closure);
  s.finish();
}

template <typename T, typename Parse>
std::vector<T> parse_list(Section& s, std::string_view key, Parse parse, std::vector<T> fallback) {
  if (!s.has(key)) {
    (void)s.strings(key);
    return fallback;
  }
  std::vector<T> out;
  for (const auto& name : s.strings(key)) {
    auto v = parse(name);
    if (!v) throw ConfigError("unknown value '" + name + "' in " + std::string(key));
    out.push_back(*v);
  }
  return out;
}

toml::array to_array(const Eigen::Ref<const Eigen::VectorXd>& v) {
  toml::array a;
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

template <std::size_t N>
toml::array to_array(const std::array<double, N>& v) {
  toml::array a;
  for (double x : v) a.push_back(x);
  return a;
}

toml::table outcome_table(const OutcomeModel& m) {
  toml::table t;
  t.insert("intercept", m.intercept);
  t.insert("tendency_weight", to_array(m.tendency_weight));
  t.insert("circumstance_weight", to_array(m.circumstance_weight));
  return t;
}

}  // namespace

PipelineConfig parse_config(std::string_view text, std::string_view source) {
  toml::table root;
  try {
    root = toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << source << ":" << e.source().begin.line << ":" << e.source().begin.column << ": " << e.description();
    throw ConfigError(msg.str());
  }
  PipelineConfig cfg;
  Section top(&root, "");
  read_generator(top.sub("generator"), cfg.generator);

  {
    Section e = top.sub("estimate");
    auto& es = cfg.estimate;
    es.behaviors = parse_list<Behavior>(e, "behaviors", parse_behavior, es.behaviors);
    es.outcomes = parse_list<Outcome>(e, "outcomes", parse_outcome, es.outcomes);
    es.estimators = parse_list<EstimatorKind>(e, "estimators", parse_estimator, es.estimators);
    e.get("n_resamples", es.n_resamples);
    e.get("confidence", es.confidence);
    e.get("min_agents", es.min_agents);
    e.get("min_pairs", es.min_pairs);
    e.get("min_per_shift", es.min_per_shift);
    e.get("min_exchanges", es.min_exchanges);
    e.finish();
    if (es.n_resamples < 1) throw ConfigError("estimate.n_resamples must be at least 1");
    if (!(es.confidence > 0.0 && es.confidence < 1.0)) throw ConfigError("estimate.confidence must lie in (0, 1)");
  }
  {
    Section p = top.sub("predict");
    auto& ps = cfg.predict;
    p.get("past_window", ps.past_window);
    p.get("future_window", ps.future_window);
    p.get("min_per_shift", ps.min_per_shift);
    Eigen::VectorXd lambdas;
    p.get("lambdas", lambdas);
    if (lambdas.size() > 0) ps.lambdas.assign(lambdas.data(), lambdas.data() + lambdas.size());
    p.get("folds", ps.folds);
    p.get("epochs", ps.epochs);
    p.get("train_fraction", ps.train_fraction);
    p.finish();
    if (ps.past_window < 1 || ps.future_window < 1) throw ConfigError("predict windows must be positive");
    if (!(ps.train_fraction > 0.0 && ps.train_fraction < 1.0))
      throw ConfigError("predict.train_fraction must lie in (0, 1)");
    for (double l : ps.lambdas) {
      if (!(l > 0.0)) throw ConfigError("predict.lambdas must be positive");
    }
  }
  {
    Section s = top.sub("simulate");
    auto& ss = cfg.simulate;
    Eigen::VectorXd ks;
    s.get("k_values", ks);
    if (ks.size() > 0) {
      ss.k_values.clear();
      for (Eigen::Index i = 0; i < ks.size(); ++i) {
        if (ks(i) != std::floor(ks(i)) || ks(i) < 1 || ks(i) > 100)
          throw ConfigError("simulate.k_values must be integers in [1, 100]");
        ss.k_values.push_back(static_cast<int>(ks(i)));
      }
    }
    s.get("min_agents", ss.min_agents);
    s.get("min_convs", ss.min_convs);
    s.get("n_resamples", ss.n_resamples);
    s.finish();
  }
  top.finish();
  validate(cfg.generator);
  return cfg;
}

PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path);
}

std::string to_toml(const PipelineConfig& cfg) {
  const auto& g = cfg.generator;
  toml::table gen;
  gen.insert("seed", static_cast<std::int64_t>(g.seed));
  gen.insert("n_agents", g.n_agents);
  gen.insert("conversations_per_agent", g.conversations_per_agent);
  gen.insert("tendency_dim", g.tendency_dim);
  gen.insert("tendency_scale", to_array(g.tendency_scale));
  gen.insert("n_windows", g.n_windows);
  gen.insert("n_days", g.n_days);
  gen.insert("n_hour_blocks", g.n_hour_blocks);
  gen.insert("shifts_per_agent", g.shifts_per_agent);
  gen.insert("load_factor", g.load_factor);
  gen.insert("shift_selection_bias", g.shift_selection_bias);
  gen.insert("selection_loading", to_array(g.selection_loading));
  toml::array coupling;
  for (int r = 0; r < kBehaviorDims; ++r) coupling.push_back(to_array(g.interaction_coupling.row(r).transpose()));
  gen.insert("interaction_coupling", coupling);
  gen.insert("behavior_noise", g.behavior_noise);
  gen.insert("outcome_noise", g.outcome_noise);
  gen.insert("rating_response_rate", g.rating_response_rate);
  gen.insert("disengage_length_factor", g.disengage_length_factor);
  gen.insert("assignment_mode", std::string(to_string(g.assignment_mode)));
  gen.insert("within_shift_bias", g.within_shift_bias);

  const auto& cm = g.circumstance_by_shift;
  toml::table circ;
  circ.insert("difficulty_mean", to_array(cm.difficulty_mean));
  circ.insert("congeniality_mean", to_array(cm.congeniality_mean));
  circ.insert("day_congeniality", to_array(cm.day_congeniality));
  circ.insert("sd", to_array(cm.sd));
  circ.insert("issue_difficulty", to_array(cm.issue_difficulty));
  toml::array probs;
  for (const auto& row : cm.issue_probs) probs.push_back(to_array(row));
  circ.insert("issue_probs", probs);
  gen.insert("circumstance", circ);
  toml::table link;
  link.insert("base", to_array(g.behavior_link.base));
  link.insert("scale", to_array(g.behavior_link.scale));
  gen.insert("behavior_link", link);
  gen.insert("rating", outcome_table(g.rating));
  gen.insert("closure", outcome_table(g.closure));

  const auto& es = cfg.estimate;
  toml::table est;
  toml::array behaviors, outcomes, estimators;
  for (auto b : es.behaviors) behaviors.push_back(std::string(to_string(b)));
  for (auto o : es.outcomes) outcomes.push_back(std::string(to_string(o)));
  for (auto e : es.estimators) estimators.push_back(std::string(to_string(e)));
  est.insert("behaviors", behaviors);
  est.insert("outcomes", outcomes);
  est.insert("estimators", estimators);
  est.insert("n_resamples", static_cast<std::int64_t>(es.n_resamples));
  est.insert("confidence", es.confidence);
  est.insert("min_agents", static_cast<std::int64_t>(es.min_agents));
  est.insert("min_pairs", static_cast<std::int64_t>(es.min_pairs));
  est.insert("min_per_shift", static_cast<std::int64_t>(es.min_per_shift));
  est.insert("min_exchanges", static_cast<std::int64_t>(es.min_exchanges));

  const auto& ps = cfg.predict;
  toml::table pred;
  pred.insert("past_window", ps.past_window);
  pred.insert("future_window", ps.future_window);
  pred.insert("min_per_shift", static_cast<std::int64_t>(ps.min_per_shift));
  toml::array lambdas;
  for (double l : ps.lambdas) lambdas.push_back(l);
  pred.insert("lambdas", lambdas);
  pred.insert("folds", static_cast<std::int64_t>(ps.folds));
  pred.insert("epochs", static_cast<std::int64_t>(ps.epochs));
  pred.insert("train_fraction", ps.train_fraction);

  const auto& ss = cfg.simulate;
  toml::table sim;
  toml::array ks;
  for (int k : ss.k_values) ks.push_back(k);
  sim.insert("k_values", ks);
  sim.insert("min_agents", static_cast<std::int64_t>(ss.min_agents));
  sim.insert("min_convs", static_cast<std::int64_t>(ss.min_convs));
  sim.insert("n_resamples", static_cast<std::int64_t>(ss.n_resamples));

  toml::table root;
  root.insert("generator", gen);
  root.insert("estimate", est);
  root.insert("predict", pred);
  root.insert("simulate", sim);
  std::ostringstream out;
  out << root << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------
// Ground truth JSON

namespace {

using nlohmann::json;

json row_json(const Eigen::MatrixXd& m, Eigen::Index r) {
  json a = json::array();
  for (Eigen::Index c = 0; c < m.cols(); ++c) a.push_back(m(r, c));
  return a;
}

}  // namespace

void write_truth(std::ostream& out, const GroundTruth& truth) {
  PipelineConfig cfg;
  cfg.generator = truth.config;
  json j;
  j["config_toml"] = to_toml(cfg);
  json agents = json::array();
  for (std::size_t a = 0; a < truth.agent_ids.size(); ++a) {
    const auto r = static_cast<Eigen::Index>(a);
    agents.push_back({{"agent_id", truth.agent_ids[a]},
                      {"tendency", row_json(truth.tendencies, r)},
                      {"rating_propensity", truth.rating_propensity(r)},
                      {"closure_propensity", truth.closure_propensity(r)}});
  }
  j["agents"] = std::move(agents);
  json mix = json::array();
  for (const auto& c : truth.reference.components) {
    mix.push_back({{"weight", c.weight},
                   {"mean", {c.mean(0), c.mean(1)}},
                   {"cov", {c.cov(0, 0), c.cov(0, 1), c.cov(1, 0), c.cov(1, 1)}}});
  }
  j["reference"] = std::move(mix);
  json convs = json::array();
  for (std::size_t i = 0; i < truth.conversation_ids.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    convs.push_back({{"conversation_id", truth.conversation_ids[i]},
                     {"latent_behavior", row_json(truth.latent_behavior, r)},
                     {"target_behavior", row_json(truth.target_behavior, r)}});
  }
  j["conversations"] = std::move(convs);
  out << j.dump() << '\n';
}

void write_truth(const std::string& path, const GroundTruth& truth) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw TruthError("cannot write " + path);
  write_truth(out, truth);
}

GroundTruth read_truth(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TruthError("cannot read ground truth " + path);
  GroundTruth t;
  try {
    const json j = json::parse(in);
    t.config = parse_config(j.at("config_toml").get<std::string>(), path).generator;
    const auto& agents = j.at("agents");
    const auto n = static_cast<Eigen::Index>(agents.size());
    t.tendencies.resize(n, t.config.tendency_dim);
    t.rating_propensity.resize(n);
    t.closure_propensity.resize(n);
    for (Eigen::Index a = 0; a < n; ++a) {
      const auto& e = agents.at(static_cast<std::size_t>(a));
      t.agent_ids.push_back(e.at("agent_id").get<std::string>());
      const auto tau = e.at("tendency").get<std::vector<double>>();
      if (tau.size() != static_cast<std::size_t>(t.config.tendency_dim)) throw TruthError("tendency size mismatch");
      for (int d = 0; d < t.config.tendency_dim; ++d) t.tendencies(a, d) = tau[static_cast<std::size_t>(d)];
      t.rating_propensity(a) = e.at("rating_propensity").get<double>();
      t.closure_propensity(a) = e.at("closure_propensity").get<double>();
    }
    for (const auto& e : j.at("reference")) {
      GaussianComponent c;
      c.weight = e.at("weight").get<double>();
      const auto m = e.at("mean").get<std::vector<double>>();
      const auto cov = e.at("cov").get<std::vector<double>>();
      if (m.size() != 2 || cov.size() != 4) throw TruthError("malformed reference component");
      c.mean = {m[0], m[1]};
      c.cov << cov[0], cov[1], cov[2], cov[3];
      t.reference.components.push_back(c);
    }
    const auto& convs = j.at("conversations");
    const auto nc = static_cast<Eigen::Index>(convs.size());
    t.latent_behavior.resize(nc, kBehaviorDims);
    t.target_behavior.resize(nc, kBehaviorDims);
    for (Eigen::Index i = 0; i < nc; ++i) {
      const auto& e = convs.at(static_cast<std::size_t>(i));
      t.conversation_ids.push_back(e.at("conversation_id").get<std::string>());
      const auto z = e.at("latent_behavior").get<std::vector<double>>();
      const auto y = e.at("target_behavior").get<std::vector<double>>();
      if (z.size() != kBehaviorDims || y.size() != kBehaviorDims) throw TruthError("behavior size mismatch");
      for (int d = 0; d < kBehaviorDims; ++d) {
        t.latent_behavior(i, d) = z[static_cast<std::size_t>(d)];
        t.target_behavior(i, d) = y[static_cast<std::size_t>(d)];
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw TruthError(path + ": " + e.what());
  } catch (const ConfigError& e) {
    throw TruthError(path + ": " + e.what());
  }
  t.rebuild_indices();
  return t;
}

}  // namespace tlab
