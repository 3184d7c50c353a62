#include "tlab/cli.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "tlab/config.hpp"
#include "tlab/estimators.hpp"
#include "tlab/manifest.hpp"
#include "tlab/predict.hpp"
#include "tlab/realloc.hpp"
#include "tlab/rng.hpp"
#include "tlab/synth.hpp"

namespace tlab {

namespace {

using ojson = nlohmann::ordered_json;

// Raised for failures that map to a specific exit code.
struct Exit {
  int code;
  std::string message;
};

struct Common {
  std::string config_path;
  std::string in;
  std::string out;
  std::string lexicon_path;
  std::string markers_path;
  std::uint64_t seed = 1;
  unsigned threads = 1;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T, typename Parse>
std::vector<T> parse_names(const std::string& list, Parse parse, const char* what) {
  std::vector<T> out;
  for (const auto& name : split_list(list)) {
    auto v = parse(name);
    if (!v) throw Exit{kExitUsage, std::string("unknown ") + what + " '" + name + "'"};
    out.push_back(*v);
  }
  if (out.empty()) throw Exit{kExitUsage, std::string("empty ") + what + " list"};
  return out;
}

PipelineConfig load_pipeline(const Common& c) {
  if (c.config_path.empty()) {
    PipelineConfig cfg;
    validate(cfg.generator);
    return cfg;
  }
  try {
    return load_config(c.config_path);
  } catch (const ConfigError& e) {
    throw Exit{kExitUsage, e.what()};
  }
}

ValenceLexicon lexicon_of(const Common& c) {
  try {
    return c.lexicon_path.empty() ? ValenceLexicon::builtin() : ValenceLexicon::load(c.lexicon_path);
  } catch (const std::exception& e) {
    throw Exit{kExitUsage, e.what()};
  }
}

MarkerInventory markers_of(const Common& c) {
  try {
    return c.markers_path.empty() ? MarkerInventory::builtin() : MarkerInventory::load(c.markers_path);
  } catch (const std::exception& e) {
    throw Exit{kExitUsage, e.what()};
  }
}

// Reads and validates a dataset; validation problems exit with code 2.
Dataset load_dataset(const std::string& path, std::ostream& err) {
  LoadResult loaded;
  try {
    loaded = read_jsonl(path);
  } catch (const DatasetError& e) {
    throw Exit{kExitUsage, e.what()};
  }
  auto report = loaded.problems;
  if (report.empty()) report = validate_dataset(loaded.records);
  if (!report.empty()) {
    err << "dataset " << path << " failed validation:\n" << format_report(report);
    throw Exit{kExitValidation, ""};
  }
  return std::move(loaded.records);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Exit{kExitUsage, "cannot write " + path};
  return out;
}

void finish_manifest(const std::string& command, std::span<const std::string> args, const Common& c,
                     const std::vector<std::string>& outputs, std::chrono::steady_clock::time_point start) {
  RunManifest m;
  m.command = command;
  m.args.assign(args.begin(), args.end());
  if (!c.config_path.empty()) m.config_hash = sha256_file(c.config_path);
  if (!c.in.empty()) m.dataset_hash = sha256_file(c.in);
  m.seed = c.seed;
  m.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  for (const auto& o : outputs) m.outputs.push_back({o, sha256_file(o)});
  for (const auto& o : outputs) write_manifest(o, m);
}

std::string fmt(double v, const char* spec = "%.6f") {
  char buf[48];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

ojson optional_json(const std::optional<double>& v) { return v ? ojson(*v) : ojson(nullptr); }

ojson shift_json(const ShiftKey& s) {
  return {{"window_index", s.window_index}, {"day_of_week", s.day_of_week}, {"hour_block", s.hour_block}};
}

// Feature table, pairs and agent split. Shared by predict and simulate.
struct TrainedPredictor {
  AgentFeatureTable table;
  std::vector<PairedInstance> pairs;
  std::set<std::string> train_agents;
  std::set<std::string> test_agents;
  std::vector<PairedInstance> train_pairs;
  std::vector<PairedInstance> test_pairs;
  LinearPairModel model;
};

WindowOptions window_of(const PipelineConfig& cfg) {
  WindowOptions w;
  w.past_window = cfg.predict.past_window;
  w.future_window = cfg.predict.future_window;
  w.min_per_shift = cfg.predict.min_per_shift;
  w.min_exchanges = cfg.estimate.min_exchanges;
  return w;
}

TrainedPredictor prepare_predictor(const Dataset& data, std::span<const BehaviorVector> behaviors, Outcome outcome,
                                 FeatureSet features, const MarkerInventory& markers, const PipelineConfig& cfg,
                                 const Common& c) {
  TrainedPredictor tp;
  const auto window = window_of(cfg);
  tp.table = past_features(data, behaviors, outcome, features, markers, window);
  if (tp.table.agent_ids.size() < 4) {
    throw Exit{kExitUsage, "too few agents with " + std::to_string(window.past_window + window.future_window) +
                               " conversations"};
  }
  tp.pairs = build_pairs(data, tp.table, outcome, window);
  std::tie(tp.train_agents, tp.test_agents) = split_agents(tp.table.agent_ids, c.seed, cfg.predict.train_fraction);
  tp.train_pairs = pairs_within(tp.pairs, tp.table, tp.train_agents);
  tp.test_pairs = pairs_within(tp.pairs, tp.table, tp.test_agents);
  return tp;
}

void fit(TrainedPredictor& tp, const PipelineConfig& cfg, const Common& c) {
  TrainOptions opts;
  opts.lambdas = cfg.predict.lambdas;
  opts.folds = cfg.predict.folds;
  opts.epochs = cfg.predict.epochs;
  opts.seed = derive_seed(c.seed, "predict");
  opts.threads = c.threads;
  tp.model = train(tp.train_pairs, opts);
}

void add_common(CLI::App* app, Common& c, bool needs_in, bool needs_out) {
  app->add_option("--config", c.config_path, "TOML config file")->check(CLI::ExistingFile);
  auto* in = app->add_option("--in", c.in, "input file");
  auto* out = app->add_option("--out", c.out, "output file");
  if (needs_in) in->required()->check(CLI::ExistingFile);
  if (needs_out) out->required();
  app->add_option("--seed", c.seed, "master seed (default 1)");
  app->add_option("--threads", c.threads, "worker thread cap (default 1)")->check(CLI::Range(1u, 1024u));
  app->add_option("--lexicon", c.lexicon_path, "valence lexicon TSV (default built-in)")->check(CLI::ExistingFile);
  app->add_option("--markers", c.markers_path, "marker inventory TSV (default built-in)")->check(CLI::ExistingFile);
}

// ---------------------------------------------------------------------------
// Subcommands

void cmd_generate(const Common& c, bool seed_given, std::optional<int> agents, const std::string& truth_path,
                  std::vector<std::string>& outputs) {
  PipelineConfig cfg = load_pipeline(c);
  if (seed_given) cfg.generator.seed = c.seed;
  if (agents) cfg.generator.n_agents = *agents;
  GeneratedPlatform p;
  try {
    p = generate(cfg.generator, lexicon_of(c));
  } catch (const ConfigError& e) {
    throw Exit{kExitUsage, e.what()};
  }
  {
    auto out = open_out(c.out);
    write_jsonl(out, p.dataset);
  }
  outputs.push_back(c.out);
  if (!truth_path.empty()) {
    auto out = open_out(truth_path);
    write_truth(out, p.truth);
    outputs.push_back(truth_path);
  }
}

void cmd_extract(const Common& c, std::ostream& err, std::vector<std::string>& outputs) {
  const auto data = load_dataset(c.in, err);
  const auto behaviors = extract_behaviors(data, lexicon_of(c), c.threads);
  auto out = open_out(c.out);
  out << "conversation_id,agent_id,agent_conversation_index,window_index,day_of_week,hour_block,"
         "conv_length,response_length,response_speed,sentiment,similarity,rating,closure\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& r = data[i];
    const auto& b = behaviors[i];
    out << r.conversation_id << ',' << r.agent_id << ',' << r.agent_conversation_index << ','
        << r.shift.window_index << ',' << r.shift.day_of_week << ',' << r.shift.hour_block << ','
        << fmt(b.conv_length, "%.0f") << ',' << fmt(b.response_length) << ','
        << (b.response_speed ? fmt(*b.response_speed) : "NA") << ',' << fmt(b.sentiment) << ','
        << fmt(b.similarity) << ',' << to_string(r.rating) << ',' << to_string(r.closure) << '\n';
  }
  outputs.push_back(c.out);
}

void cmd_estimate(const Common& c, const std::string& behaviors_arg, const std::string& outcomes_arg,
                  const std::string& estimators_arg, std::optional<std::size_t> min_per_shift,
                  std::optional<std::size_t> n_resamples, std::ostream& err, std::vector<std::string>& outputs) {
  PipelineConfig cfg = load_pipeline(c);
  auto& es = cfg.estimate;
  if (!behaviors_arg.empty()) es.behaviors = parse_names<Behavior>(behaviors_arg, parse_behavior, "behavior");
  if (!outcomes_arg.empty()) es.outcomes = parse_names<Outcome>(outcomes_arg, parse_outcome, "outcome");
  if (!estimators_arg.empty())
    es.estimators = parse_names<EstimatorKind>(estimators_arg, parse_estimator, "estimator");
  if (min_per_shift) es.min_per_shift = *min_per_shift;
  if (n_resamples) es.n_resamples = *n_resamples;

  const auto data = load_dataset(c.in, err);
  const auto behaviors = extract_behaviors(data, lexicon_of(c), c.threads);
  AggregateOptions agg_opts;
  agg_opts.min_exchanges = es.min_exchanges;
  const auto aggregates = aggregate_agents(data, behaviors, SplitAssignment{}, markers_of(c), agg_opts);

  EstimatorOptions opts;
  opts.bootstrap.n_resamples = es.n_resamples;
  opts.bootstrap.confidence = es.confidence;
  opts.bootstrap.seed = derive_seed(c.seed, "estimate");
  opts.bootstrap.threads = c.threads;
  opts.min_agents = es.min_agents;
  opts.min_pairs = es.min_pairs;
  opts.min_per_shift = es.min_per_shift;

  std::vector<EffectEstimate> rows;
  for (auto outcome : es.outcomes) {
    for (auto behavior : es.behaviors) {
      for (auto kind : es.estimators) {
        try {
          switch (kind) {
            case EstimatorKind::naive:
              if (behavior == Behavior::coordination) continue;
              rows.push_back(naive_estimate(data, behaviors, behavior, outcome));
              break;
            case EstimatorKind::triangle:
              rows.push_back(tau_counselor_level(aggregates, behavior, outcome, opts));
              break;
            case EstimatorKind::square:
              rows.push_back(tau_split(aggregates, behavior, outcome, opts));
              break;
            case EstimatorKind::circle:
              rows.push_back(tau_shift_controlled(aggregates, behavior, outcome, opts));
              break;
          }
        } catch (const EstimationError& e) {
          err << "warning: " << e.what() << '\n';
          EffectEstimate missing;
          missing.behavior = behavior;
          missing.outcome = outcome;
          missing.estimator = kind;
          rows.push_back(missing);
        }
      }
    }
  }
  apply_bonferroni(rows);
  auto out = open_out(c.out);
  write_estimates_csv(out, rows);
  outputs.push_back(c.out);
}

void cmd_predict(const Common& c, const std::string& outcome_arg, const std::string& features_arg, std::ostream& err,
                 std::vector<std::string>& outputs) {
  const PipelineConfig cfg = load_pipeline(c);
  const auto outcome = parse_outcome(outcome_arg);
  const auto features = parse_feature_set(features_arg);
  if (!outcome) throw Exit{kExitUsage, "unknown outcome '" + outcome_arg + "'"};
  if (!features) throw Exit{kExitUsage, "unknown feature set '" + features_arg + "'"};
  const auto data = load_dataset(c.in, err);
  const auto behaviors = extract_behaviors(data, lexicon_of(c), c.threads);
  auto tp = prepare_predictor(data, behaviors, *outcome, *features, markers_of(c), cfg, c);
  fit(tp, cfg, c);
  const auto ev = evaluate(tp.model, tp.test_pairs, tp.table);

  ojson j;
  j["outcome"] = to_string(*outcome);
  j["features"] = to_string(*features);
  j["accuracy"] = ev.accuracy;
  j["p_value"] = ev.p_value;
  j["n_test_pairs"] = ev.n;
  j["n_correct"] = ev.correct;
  j["antisymmetric"] = ev.antisymmetric;
  j["cv_accuracy"] = tp.model.cv_accuracy;
  j["lambda"] = tp.model.lambda;
  j["cv_accuracy_by_lambda"] = tp.model.cv_accuracy_by_lambda;
  ojson weights = ojson::object();
  for (std::size_t i = 0; i < tp.table.names.size(); ++i)
    weights[tp.table.names[i]] = tp.model.weights(static_cast<Eigen::Index>(i));
  j["weights"] = weights;
  j["n_train_pairs"] = tp.train_pairs.size();
  j["n_pairs_total"] = tp.pairs.size();
  j["n_train_agents"] = tp.train_agents.size();
  j["n_test_agents"] = tp.test_agents.size();
  j["min_per_shift"] = cfg.predict.min_per_shift;
  j["past_window"] = cfg.predict.past_window;
  j["future_window"] = cfg.predict.future_window;
  j["folds"] = cfg.predict.folds;
  j["seed"] = c.seed;
  auto out = open_out(c.out);
  out << j.dump(2) << '\n';
  outputs.push_back(c.out);
}

void cmd_simulate(const Common& c, const std::string& outcome_arg, const std::string& ranker_arg,
                  const std::string& features_arg, const std::string& k_arg, const std::string& truth_path,
                  bool model_based, std::ostream& err, std::vector<std::string>& outputs) {
  const PipelineConfig cfg = load_pipeline(c);
  const auto outcome = parse_outcome(outcome_arg);
  const auto features = parse_feature_set(features_arg);
  if (!outcome) throw Exit{kExitUsage, "unknown outcome '" + outcome_arg + "'"};
  if (!features) throw Exit{kExitUsage, "unknown feature set '" + features_arg + "'"};

  SimulationOptions opts;
  opts.k_values = cfg.simulate.k_values;
  if (!k_arg.empty()) {
    opts.k_values.clear();
    for (const auto& k : split_list(k_arg)) {
      try {
        std::size_t used = 0;
        const int v = std::stoi(k, &used);
        if (used != k.size() || v < 1 || v > 100) throw std::invalid_argument(k);
        opts.k_values.push_back(v);
      } catch (const std::exception&) {
        throw Exit{kExitUsage, "--k expects integers in [1, 100], got '" + k + "'"};
      }
    }
  }
  opts.min_agents = cfg.simulate.min_agents;
  opts.min_convs = cfg.simulate.min_convs;
  opts.past_window = cfg.predict.past_window;
  opts.future_window = cfg.predict.future_window;
  opts.bootstrap.n_resamples = cfg.simulate.n_resamples;
  opts.bootstrap.seed = derive_seed(c.seed, "simulate");
  opts.bootstrap.threads = c.threads;

  const auto data = load_dataset(c.in, err);
  const auto markers = markers_of(c);
  const auto behaviors = extract_behaviors(data, lexicon_of(c), c.threads);
  std::optional<GroundTruth> truth;
  if (!truth_path.empty()) {
    try {
      truth = read_truth(truth_path);
    } catch (const TruthError& e) {
      throw Exit{kExitUsage, e.what()};
    }
  }
  if (model_based && !truth) throw Exit{kExitUsage, "--model-based requires --truth"};
  // Evaluation agents are the held-out half of the predictor's agent split.
  auto tp = prepare_predictor(data, behaviors, *outcome, *features, markers, cfg, c);

  Ranker ranker;
  if (ranker_arg == "tendency") {
    fit(tp, cfg, c);
    ShiftFeatureSource src{&data, behaviors, &markers, window_of(cfg)};
    ranker = tendency_ranker(tp.model, tp.table, *outcome, *features, src);
  } else if (ranker_arg == "past_outcome") {
    ranker = past_outcome_ranker(data, *outcome, window_of(cfg));
  } else if (ranker_arg == "oracle") {
    ranker = oracle_ranker();
  } else if (ranker_arg == "truth") {
    if (!truth) throw Exit{kExitUsage, "--ranker truth requires --truth"};
    std::unordered_map<std::string, double> scores;
    for (std::size_t a = 0; a < truth->agent_ids.size(); ++a)
      scores[truth->agent_ids[a]] = truth->propensity(*outcome)(static_cast<Eigen::Index>(a));
    ranker = score_ranker(std::move(scores));
  } else if (ranker_arg == "random") {
    ranker = random_ranker(derive_seed(c.seed, "random-ranker"));
  } else {
    throw Exit{kExitUsage, "unknown ranker '" + ranker_arg + "'"};
  }
  SimulationReport report;
  try {
    report = model_based ? simulate_model_based(data, *truth, *outcome, ranker, opts, tp.test_agents)
                         : simulate(data, *outcome, ranker, opts, tp.test_agents);
  } catch (const SimulationError& e) {
    throw Exit{kExitUsage, e.what()};
  }

  ojson j;
  j["outcome"] = to_string(*outcome);
  j["ranker"] = ranker_arg;
  j["mode"] = model_based ? "model_based" : "empirical";
  j["features"] = to_string(*features);
  j["min_agents"] = opts.min_agents;
  j["min_convs"] = opts.min_convs;
  j["n_evaluation_agents"] = tp.test_agents.size();
  j["n_shifts"] = report.shifts.size();
  j["seed"] = c.seed;
  ojson summary = ojson::array();
  for (const auto& s : report.summary) {
    summary.push_back({{"k", s.k},
                       {"macro_counterfactual", s.macro_counterfactual},
                       {"macro_realized", s.macro_realized},
                       {"mean_difference", s.mean_difference},
                       {"fraction_improved", s.fraction_improved},
                       {"wilcoxon_statistic", s.wilcoxon.statistic},
                       {"p_raw", s.wilcoxon.p_value},
                       {"p_bonferroni", s.p_bonferroni},
                       {"diff_ci_low", optional_json(s.diff_ci_low)},
                       {"diff_ci_high", optional_json(s.diff_ci_high)}});
  }
  j["summary"] = summary;
  ojson shifts = ojson::array();
  for (const auto& sc : report.shifts) {
    ojson agents = ojson::array();
    for (const auto& a : sc.agents)
      agents.push_back({{"agent_id", a.agent_id}, {"good", a.good}, {"n", a.n}, {"score", a.score}});
    shifts.push_back({{"shift", shift_json(sc.shift)},
                      {"realized", sc.realized},
                      {"counterfactual", sc.counterfactual},
                      {"agents", agents}});
  }
  j["shifts"] = shifts;
  auto out = open_out(c.out);
  out << j.dump(2) << '\n';
  outputs.push_back(c.out);
}

std::string cell(const EffectEstimate* e) {
  if (!e || !e->tau) return "NA";
  std::string s = fmt(*e->tau, "%.3f");
  if (e->ci_low && e->ci_high) s += " [" + fmt(*e->ci_low, "%.3f") + ", " + fmt(*e->ci_high, "%.3f") + "]";
  if (e->p_bonferroni < 0.01) s += " *";
  return s;
}

void cmd_report(const Common& c, std::ostream& stdout_stream, std::vector<std::string>& outputs) {
  std::ifstream in(c.in, std::ios::binary);
  if (!in) throw Exit{kExitUsage, "cannot read " + c.in};
  std::vector<EffectEstimate> rows;
  try {
    rows = read_estimates_csv(in);
  } catch (const EstimationError& e) {
    throw Exit{kExitUsage, e.what()};
  }
  std::map<std::pair<Outcome, Behavior>, std::map<EstimatorKind, const EffectEstimate*>> table;
  for (const auto& r : rows) table[{r.outcome, r.behavior}][r.estimator] = &r;

  std::ostringstream md;
  md << "| behavior | outcome | naive | △ | □ | ○ |\n";
  md << "|---|---|---|---|---|---|\n";
  for (const auto& [key, by_kind] : table) {
    auto get = [&](EstimatorKind k) -> const EffectEstimate* {
      auto it = by_kind.find(k);
      return it == by_kind.end() ? nullptr : it->second;
    };
    md << "| " << to_string(key.second) << " | " << to_string(key.first) << " | " << cell(get(EstimatorKind::naive))
       << " | " << cell(get(EstimatorKind::triangle)) << " | " << cell(get(EstimatorKind::square)) << " | "
       << cell(get(EstimatorKind::circle)) << " |\n";
  }
  md << "\nnaive: rank-biserial correlation with Mann-Whitney U. △: counselor-level tau-b. "
        "□: tau-b of split-0 behavior against split-1 propensity. ○: pairwise-concordance tau-b against "
        "shift-controlled split-1 outcome differences. Intervals are percentile bootstraps over agents; "
        "* marks Bonferroni-corrected p < 0.01.\n";
  if (c.out.empty()) {
    stdout_stream << md.str();
  } else {
    auto out = open_out(c.out);
    out << md.str();
    outputs.push_back(c.out);
  }
}

}  // namespace

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  const auto start = std::chrono::steady_clock::now();
  CLI::App app{"tlab: allocation-effect estimation workbench"};
  app.name("tlab");
  app.require_subcommand(1);

  Common gen_c, ext_c, est_c, pred_c, sim_c, rep_c;
  std::optional<int> gen_agents;
  std::string gen_truth;
  auto* gen = app.add_subcommand("generate", "generate a synthetic platform");
  add_common(gen, gen_c, false, true);
  gen->add_option("--truth", gen_truth, "ground-truth JSON output");
  gen->add_option("--agents", gen_agents, "override n_agents");

  auto* ext = app.add_subcommand("extract", "per-conversation behavior features as CSV");
  add_common(ext, ext_c, true, true);

  std::string est_behaviors, est_outcomes, est_estimators;
  std::optional<std::size_t> est_min_per_shift, est_resamples;
  auto* est = app.add_subcommand("estimate", "allocation-effect estimators as CSV");
  add_common(est, est_c, true, true);
  est->add_option("--behaviors", est_behaviors, "comma list (default all)");
  est->add_option("--outcomes", est_outcomes, "comma list of rating,closure (default both)");
  est->add_option("--estimators", est_estimators, "comma list of naive,triangle,square,circle (default all)");
  est->add_option("--min-per-shift", est_min_per_shift, "minimum conversations per agent and shift (default 3)");
  est->add_option("--n-resamples", est_resamples, "bootstrap resamples (default 1000)");

  std::string pred_outcome = "rating", pred_features = "tendency";
  auto* pred = app.add_subcommand("predict", "paired shift-matched prediction report as JSON");
  add_common(pred, pred_c, true, true);
  pred->add_option("--outcome", pred_outcome, "rating or closure (default rating)");
  pred->add_option("--features", pred_features, "tendency, past_outcome or both (default tendency)");

  std::string sim_outcome = "rating", sim_ranker = "tendency", sim_features = "tendency", sim_k, sim_truth;
  bool sim_model_based = false;
  auto* sim = app.add_subcommand("simulate", "counterfactual re-allocation report as JSON");
  add_common(sim, sim_c, true, true);
  sim->add_option("--outcome", sim_outcome, "rating or closure (default rating)");
  sim->add_option("--ranker", sim_ranker, "tendency, past_outcome, oracle, truth or random (default tendency)");
  sim->add_option("--features", sim_features, "feature set of the tendency ranker (default tendency)");
  sim->add_option("--k", sim_k, "comma list of top-k percentages (default 25,50,75)");
  sim->add_option("--truth", sim_truth, "ground-truth JSON for --ranker truth and --model-based")
      ->check(CLI::ExistingFile);
  sim->add_flag("--model-based", sim_model_based,
                "score outcomes by the true outcome model on realized circumstances (needs --truth)");

  auto* rep = app.add_subcommand("report", "Markdown summary of an estimates CSV");
  add_common(rep, rep_c, true, false);

  std::string flags;
  for (const auto* sub : app.get_subcommands({})) {
    flags += "  " + sub->get_name() + ":";
    for (const auto* opt : sub->get_options()) {
      if (!opt->get_lnames().empty()) flags += " --" + opt->get_lnames().front();
    }
    flags += "\n";
  }
  app.footer("Flags by subcommand:\n" + flags +
             "Exit codes: 0 success, 1 usage or I/O error, 2 dataset validation failure.");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(std::move(reversed));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  std::vector<std::string> outputs;
  const Common* used = nullptr;
  std::string command;
  try {
    if (gen->parsed()) {
      used = &gen_c;
      command = "generate";
      cmd_generate(gen_c, gen->count("--seed") > 0, gen_agents, gen_truth, outputs);
    } else if (ext->parsed()) {
      used = &ext_c;
      command = "extract";
      cmd_extract(ext_c, err, outputs);
    } else if (est->parsed()) {
      used = &est_c;
      command = "estimate";
      cmd_estimate(est_c, est_behaviors, est_outcomes, est_estimators, est_min_per_shift, est_resamples, err,
                   outputs);
    } else if (pred->parsed()) {
      used = &pred_c;
      command = "predict";
      cmd_predict(pred_c, pred_outcome, pred_features, err, outputs);
    } else if (sim->parsed()) {
      used = &sim_c;
      command = "simulate";
      cmd_simulate(sim_c, sim_outcome, sim_ranker, sim_features, sim_k, sim_truth, sim_model_based, err,
                   outputs);
    } else if (rep->parsed()) {
      used = &rep_c;
      command = "report";
      cmd_report(rep_c, out, outputs);
    }
    if (used && !outputs.empty()) finish_manifest(command, args, *used, outputs, start);
  } catch (const Exit& e) {
    if (!e.message.empty()) err << "tlab " << command << ": " << e.message << '\n';
    return e.code;
  } catch (const std::exception& e) {
    err << "tlab " << command << ": " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitOk;
}

}  // namespace tlab
