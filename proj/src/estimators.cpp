#include "tlab/estimators.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <istream>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "tlab/rng.hpp"

namespace tlab {

int SplitAssignment::split_of(const ConversationRecord& r) const {
  if (!overrides.empty()) {
    auto it = overrides.find(r.conversation_id);
    if (it != overrides.end()) return it->second;
  }
  return r.agent_conversation_index % 2 == 0 ? 0 : 1;
}

std::vector<BehaviorVector> extract_behaviors(const Dataset& dataset, const ValenceLexicon& lexicon,
                                              unsigned threads) {
  std::vector<BehaviorVector> out(dataset.size());
  const unsigned n_threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(dataset.size() / 256 + 1)));
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&](std::size_t begin, std::size_t end) {
    try {
      for (std::size_t i = begin; i < end; ++i) out[i] = behavior_vector(dataset[i], lexicon);
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
  };
  if (n_threads == 1) {
    work(0, dataset.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (dataset.size() + n_threads - 1) / n_threads;
    for (unsigned t = 0; t < n_threads; ++t) {
      const std::size_t begin = t * chunk, end = std::min(dataset.size(), begin + chunk);
      if (begin < end) pool.emplace_back(work, begin, end);
    }
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

namespace {

AgentSummary summarize(const Dataset& dataset, std::span<const BehaviorVector> behaviors,
                       const std::vector<std::size_t>& rows, const MarkerInventory& markers,
                       const AggregateOptions& options) {
  AgentSummary s;
  s.n_conversations = rows.size();
  std::array<double, kConversationBehaviors.size()> sum{};
  std::array<std::size_t, kConversationBehaviors.size()> count{};
  std::vector<const ConversationRecord*> records;
  records.reserve(rows.size());
  for (std::size_t row : rows) {
    const auto& r = dataset[row];
    records.push_back(&r);
    for (std::size_t b = 0; b < kConversationBehaviors.size(); ++b) {
      if (auto v = behavior_value(behaviors[row], kConversationBehaviors[b])) {
        sum[b] += *v;
        ++count[b];
      }
    }
    ++s.shift_conversations[r.shift];
    auto& shift_tally = s.per_shift[r.shift];
    for (Outcome o : {Outcome::rating, Outcome::closure}) {
      if (!has_outcome(r, o)) continue;
      s.outcome[static_cast<std::size_t>(o)].add(outcome_value(r, o));
      shift_tally[static_cast<std::size_t>(o)].add(outcome_value(r, o));
    }
  }
  for (std::size_t b = 0; b < kConversationBehaviors.size(); ++b) {
    if (count[b] > 0) s.behavior[b] = sum[b] / static_cast<double>(count[b]);
  }
  s.behavior[static_cast<std::size_t>(Behavior::coordination)] =
      coordination(std::span<const ConversationRecord* const>(records), markers, options.min_exchanges);
  return s;
}

const AgentSummary* pick(const AgentAggregates& a, int which) {
  if (which < 0) return &a.all;
  if (!a.split) throw EstimationError("aggregates lack split summaries");
  return &(*a.split)[static_cast<std::size_t>(which)];
}

std::string stream_name(EstimatorKind e, Behavior b, Outcome o) {
  return std::string(to_string(e)) + "/" + std::string(to_string(b)) + "/" + std::string(to_string(o));
}

void finish(EffectEstimate& est, const stats::BootstrapResult& boot) {
  est.flagged = boot.flagged;
  if (boot.low && boot.high && est.tau) {
    // The percentile interval can exclude the point estimate when the
    // resampling distribution is skewed; widen it to contain tau.
    est.ci_low = std::min(*boot.low, *est.tau);
    est.ci_high = std::max(*boot.high, *est.tau);
  }
  est.p_raw = stats::bootstrap_p_value(boot.replicates);
  est.p_bonferroni = est.p_raw;
}

// Agent-level tau between behavior (from `behavior_split`) and outcome
// propensity (from `outcome_split`), bootstrapped over agents.
EffectEstimate agent_level_tau(std::span<const AgentAggregates> aggregates, Behavior behavior, Outcome outcome,
                               const EstimatorOptions& options, EstimatorKind kind, int behavior_split,
                               int outcome_split) {
  std::vector<double> xs, ys;
  for (const auto& a : aggregates) {
    auto x = pick(a, behavior_split)->behavior_mean(behavior);
    auto y = pick(a, outcome_split)->propensity(outcome);
    if (!x || !y) continue;
    xs.push_back(*x);
    ys.push_back(*y);
  }
  EffectEstimate est;
  est.behavior = behavior;
  est.outcome = outcome;
  est.estimator = kind;
  est.n_units = xs.size();
  if (xs.size() < std::max<std::size_t>(options.min_agents, 2)) {
    throw EstimationError(std::string(to_string(kind)) + " estimator needs at least " +
                          std::to_string(options.min_agents) + " agents with defined " +
                          std::string(to_string(behavior)) + " and " + std::string(to_string(outcome)) + ", got " +
                          std::to_string(xs.size()));
  }
  const Eigen::Map<const Eigen::VectorXd> x(xs.data(), static_cast<Eigen::Index>(xs.size()));
  const Eigen::Map<const Eigen::VectorXd> y(ys.data(), static_cast<Eigen::Index>(ys.size()));
  est.tau = stats::kendall_tau(x, y);

  stats::BootstrapConfig cfg = options.bootstrap;
  cfg.seed = derive_seed(options.bootstrap.seed, stream_name(kind, behavior, outcome));
  const stats::KendallResampler resampler(x, y);
  const auto boot = stats::bootstrap(
      xs.size(), [&](std::span<const std::size_t> idx) { return stats::tau_b(resampler.counts(idx)); }, cfg);
  finish(est, boot);
  return est;
}

int sign(double v) { return (v > 0.0) - (v < 0.0); }

}  // namespace

std::vector<AgentAggregates> aggregate_agents(const Dataset& dataset, std::span<const BehaviorVector> behaviors,
                                              const std::optional<SplitAssignment>& splits,
                                              const MarkerInventory& markers, const AggregateOptions& options) {
  if (behaviors.size() != dataset.size()) throw EstimationError("behaviors do not align with the dataset");
  std::map<std::string, std::vector<std::size_t>> by_agent;
  for (std::size_t i = 0; i < dataset.size(); ++i) by_agent[dataset[i].agent_id].push_back(i);

  std::vector<AgentAggregates> out;
  out.reserve(by_agent.size());
  for (auto& [agent, rows] : by_agent) {
    std::sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) {
      return dataset[a].agent_conversation_index < dataset[b].agent_conversation_index;
    });
    AgentAggregates agg;
    agg.agent_id = agent;
    agg.all = summarize(dataset, behaviors, rows, markers, options);
    if (splits) {
      std::array<std::vector<std::size_t>, 2> parts;
      for (std::size_t row : rows) parts[static_cast<std::size_t>(splits->split_of(dataset[row]) == 0 ? 0 : 1)].push_back(row);
      agg.split = std::array<AgentSummary, 2>{summarize(dataset, behaviors, parts[0], markers, options),
                                               summarize(dataset, behaviors, parts[1], markers, options)};
    }
    out.push_back(std::move(agg));
  }
  return out;
}

std::string_view to_string(EstimatorKind e) {
  switch (e) {
    case EstimatorKind::naive: return "naive";
    case EstimatorKind::triangle: return "triangle";
    case EstimatorKind::square: return "square";
    case EstimatorKind::circle: return "circle";
  }
  return "?";
}

std::optional<EstimatorKind> parse_estimator(std::string_view s) {
  for (auto e : {EstimatorKind::naive, EstimatorKind::triangle, EstimatorKind::square, EstimatorKind::circle}) {
    if (to_string(e) == s) return e;
  }
  return std::nullopt;
}

NaiveResult naive_conversation_level(const Dataset& dataset, std::span<const BehaviorVector> behaviors,
                                     Behavior behavior, Outcome outcome) {
  if (behavior == Behavior::coordination) throw EstimationError("coordination has no conversation-level value");
  if (behaviors.size() != dataset.size()) throw EstimationError("behaviors do not align with the dataset");
  std::vector<double> good, bad;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (!has_outcome(dataset[i], outcome)) continue;
    auto v = behavior_value(behaviors[i], behavior);
    if (!v) continue;
    (outcome_value(dataset[i], outcome) ? good : bad).push_back(*v);
  }
  if (good.empty() || bad.empty()) {
    throw EstimationError("naive comparison of " + std::string(to_string(behavior)) + " needs both " +
                          std::string(to_string(outcome)) + " outcome groups");
  }
  NaiveResult r;
  r.n_good = good.size();
  r.n_bad = bad.size();
  for (double v : good) r.mean_good += v;
  for (double v : bad) r.mean_bad += v;
  r.mean_good /= static_cast<double>(good.size());
  r.mean_bad /= static_cast<double>(bad.size());
  const Eigen::Map<const Eigen::VectorXd> a(good.data(), static_cast<Eigen::Index>(good.size()));
  const Eigen::Map<const Eigen::VectorXd> b(bad.data(), static_cast<Eigen::Index>(bad.size()));
  r.u_test = stats::mann_whitney_u(a, b);
  r.rank_biserial = 2.0 * r.u_test.statistic / (static_cast<double>(good.size()) * static_cast<double>(bad.size())) - 1.0;
  return r;
}

EffectEstimate naive_estimate(const Dataset& dataset, std::span<const BehaviorVector> behaviors, Behavior behavior,
                              Outcome outcome) {
  const auto r = naive_conversation_level(dataset, behaviors, behavior, outcome);
  EffectEstimate est;
  est.behavior = behavior;
  est.outcome = outcome;
  est.estimator = EstimatorKind::naive;
  est.tau = r.rank_biserial;
  est.p_raw = est.p_bonferroni = r.u_test.p_value;
  est.n_units = r.n_good + r.n_bad;
  return est;
}

EffectEstimate tau_counselor_level(std::span<const AgentAggregates> aggregates, Behavior behavior, Outcome outcome,
                                   const EstimatorOptions& options) {
  return agent_level_tau(aggregates, behavior, outcome, options, EstimatorKind::triangle, -1, -1);
}

EffectEstimate tau_split(std::span<const AgentAggregates> aggregates, Behavior behavior, Outcome outcome,
                         const EstimatorOptions& options) {
  return agent_level_tau(aggregates, behavior, outcome, options, EstimatorKind::square, 0, 1);
}

std::vector<PairwiseShiftDiff> pairwise_shift_diffs(std::span<const AgentAggregates> aggregates, Outcome outcome,
                                                    std::size_t min_per_shift, TallySource source) {
  const int which = source == TallySource::all ? -1 : (source == TallySource::split0 ? 0 : 1);
  struct Entry {
    std::size_t agent;
    double propensity;
    std::size_t n;
  };
  std::map<ShiftKey, std::vector<Entry>> by_shift;
  for (std::size_t a = 0; a < aggregates.size(); ++a) {
    for (const auto& [shift, tallies] : pick(aggregates[a], which)->per_shift) {
      const auto& t = tallies[static_cast<std::size_t>(outcome)];
      if (t.n == 0 || t.n < min_per_shift) continue;
      by_shift[shift].push_back({a, *t.propensity(), t.n});
    }
  }
  std::map<std::pair<std::size_t, std::size_t>, PairwiseShiftDiff> pairs;
  for (const auto& [shift, entries] : by_shift) {
    for (std::size_t i = 0; i < entries.size(); ++i) {
      for (std::size_t j = i + 1; j < entries.size(); ++j) {
        const auto& ej = entries[i];
        const auto& ek = entries[j];
        auto& p = pairs[{ej.agent, ek.agent}];
        p.agent_j = ej.agent;
        p.agent_k = ek.agent;
        const std::size_t w = std::min(ej.n, ek.n);
        p.per_shift[shift] = {ej.propensity - ek.propensity, w};
      }
    }
  }
  std::vector<PairwiseShiftDiff> out;
  out.reserve(pairs.size());
  for (auto& [_, p] : pairs) {
    double num = 0.0, den = 0.0;
    for (const auto& [shift, dw] : p.per_shift) {
      num += dw.first * static_cast<double>(dw.second);
      den += static_cast<double>(dw.second);
    }
    if (den <= 0.0) continue;
    p.aggregate = num / den;
    p.total_weight = den;
    out.push_back(std::move(p));
  }
  return out;
}

EffectEstimate tau_shift_controlled(std::span<const AgentAggregates> aggregates, Behavior behavior, Outcome outcome,
                                    const EstimatorOptions& options) {
  EffectEstimate est;
  est.behavior = behavior;
  est.outcome = outcome;
  est.estimator = EstimatorKind::circle;

  // Pairs need split-0 behavior for both agents.
  struct Pair {
    std::uint32_t j, k;  // bootstrap unit indices
    int outcome_sign, behavior_sign;
  };
  std::vector<Pair> pairs;
  std::vector<std::size_t> unit_of(aggregates.size(), SIZE_MAX);
  std::size_t n_units = 0;
  for (const auto& d : pairwise_shift_diffs(aggregates, outcome, options.min_per_shift, TallySource::split1)) {
    auto bj = pick(aggregates[d.agent_j], 0)->behavior_mean(behavior);
    auto bk = pick(aggregates[d.agent_k], 0)->behavior_mean(behavior);
    if (!bj || !bk) continue;
    for (std::size_t a : {d.agent_j, d.agent_k}) {
      if (unit_of[a] == SIZE_MAX) unit_of[a] = n_units++;
    }
    pairs.push_back({static_cast<std::uint32_t>(unit_of[d.agent_j]), static_cast<std::uint32_t>(unit_of[d.agent_k]),
                     sign(d.aggregate), sign(*bj - *bk)});
  }
  est.n_units = pairs.size();
  if (pairs.size() < options.min_pairs) {
    throw EstimationError("circle estimator needs at least " + std::to_string(options.min_pairs) +
                          " qualifying agent pairs for " + std::string(to_string(outcome)) + ", got " +
                          std::to_string(pairs.size()));
  }

  // tau-b over pairs with multiplicity weights: ties in either difference
  // count toward neither C nor D.
  const std::size_t n_pairs = pairs.size();
  std::vector<std::uint32_t> pj(n_pairs), pk(n_pairs);
  std::vector<double> sgn(n_pairs), untied_b(n_pairs), untied_o(n_pairs);
  for (std::size_t i = 0; i < n_pairs; ++i) {
    pj[i] = pairs[i].j;
    pk[i] = pairs[i].k;
    sgn[i] = pairs[i].behavior_sign * pairs[i].outcome_sign;
    untied_b[i] = pairs[i].behavior_sign != 0;
    untied_o[i] = pairs[i].outcome_sign != 0;
  }
  auto concordance = [&](const std::vector<double>* mult) -> std::optional<double> {
    double cd = 0.0, ub = 0.0, uo = 0.0;
    if (mult) {
      const double* m = mult->data();
      for (std::size_t i = 0; i < n_pairs; ++i) {
        const double w = m[pj[i]] * m[pk[i]];
        cd += w * sgn[i];
        ub += w * untied_b[i];
        uo += w * untied_o[i];
      }
    } else {
      for (std::size_t i = 0; i < n_pairs; ++i) {
        cd += sgn[i];
        ub += untied_b[i];
        uo += untied_o[i];
      }
    }
    const double denom = ub * uo;
    if (!(denom > 0.0)) return std::nullopt;
    return cd / std::sqrt(denom);
  };
  est.tau = concordance(nullptr);

  stats::BootstrapConfig cfg = options.bootstrap;
  cfg.seed = derive_seed(options.bootstrap.seed, stream_name(EstimatorKind::circle, behavior, outcome));
  const auto boot = stats::bootstrap(
      n_units,
      [&](std::span<const std::size_t> idx) {
        std::vector<double> mult(n_units, 0.0);
        for (std::size_t i : idx) mult[i] += 1.0;
        return concordance(&mult);
      },
      cfg);
  finish(est, boot);
  return est;
}

void apply_bonferroni(std::vector<EffectEstimate>& estimates) {
  std::map<std::pair<EstimatorKind, Outcome>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < estimates.size(); ++i) groups[{estimates[i].estimator, estimates[i].outcome}].push_back(i);
  for (const auto& [_, members] : groups) {
    std::vector<double> p;
    for (std::size_t i : members) p.push_back(estimates[i].p_raw);
    const auto adjusted = stats::bonferroni(p);
    for (std::size_t m = 0; m < members.size(); ++m) estimates[members[m]].p_bonferroni = adjusted[m];
  }
}

std::vector<std::optional<double>> shift_controlled_scores(std::span<const AgentAggregates> aggregates,
                                                           Outcome outcome, std::size_t min_per_shift,
                                                           TallySource source) {
  const auto diffs = pairwise_shift_diffs(aggregates, outcome, min_per_shift, source);
  const auto n = static_cast<Eigen::Index>(aggregates.size());
  std::vector<bool> connected(aggregates.size(), false);
  Eigen::MatrixXd laplacian = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  for (const auto& d : diffs) {
    const auto j = static_cast<Eigen::Index>(d.agent_j), k = static_cast<Eigen::Index>(d.agent_k);
    const double w = d.total_weight;
    laplacian(j, j) += w;
    laplacian(k, k) += w;
    laplacian(j, k) -= w;
    laplacian(k, j) -= w;
    rhs(j) += w * d.aggregate;
    rhs(k) -= w * d.aggregate;
    connected[d.agent_j] = connected[d.agent_k] = true;
  }
  // Scores are identified up to a shift per connected component; pin the
  // overall mean and regularize isolated agents.
  Eigen::MatrixXd system = laplacian;
  if (n > 0) system.array() += 1.0 / static_cast<double>(n);
  system.diagonal().array() += 1e-9;
  const Eigen::VectorXd scores = system.ldlt().solve(rhs);

  std::vector<std::optional<double>> out(aggregates.size());
  for (std::size_t a = 0; a < aggregates.size(); ++a) {
    if (connected[a]) out[a] = scores(static_cast<Eigen::Index>(a));
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::string fmt_optional(const std::optional<double>& v) {
  if (!v) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

std::string fmt_p(double p) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", p);
  return buf;
}

std::optional<double> parse_optional(const std::string& s) {
  if (s == "NA" || s.empty()) return std::nullopt;
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument(s);
  return v;
}

}  // namespace

void write_estimates_csv(std::ostream& out, std::span<const EffectEstimate> estimates) {
  out << "behavior,outcome,estimator,tau,ci_low,ci_high,p_raw,p_bonferroni,n_units\n";
  for (const auto& e : estimates) {
    out << to_string(e.behavior) << ',' << to_string(e.outcome) << ',' << to_string(e.estimator) << ','
        << fmt_optional(e.tau) << ',' << fmt_optional(e.ci_low) << ',' << fmt_optional(e.ci_high) << ','
        << fmt_p(e.p_raw) << ',' << fmt_p(e.p_bonferroni) << ',' << e.n_units << '\n';
  }
}

std::vector<EffectEstimate> read_estimates_csv(std::istream& in) {
  std::vector<EffectEstimate> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 || line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    const std::string where = "estimates line " + std::to_string(line_no);
    if (f.size() != 9) throw EstimationError(where + ": expected 9 fields");
    EffectEstimate e;
    auto b = parse_behavior(f[0]);
    auto o = parse_outcome(f[1]);
    auto k = parse_estimator(f[2]);
    if (!b || !o || !k) throw EstimationError(where + ": unknown behavior, outcome or estimator");
    e.behavior = *b;
    e.outcome = *o;
    e.estimator = *k;
    try {
      e.tau = parse_optional(f[3]);
      e.ci_low = parse_optional(f[4]);
      e.ci_high = parse_optional(f[5]);
      e.p_raw = std::stod(f[6]);
      e.p_bonferroni = std::stod(f[7]);
      e.n_units = static_cast<std::size_t>(std::stoull(f[8]));
    } catch (const std::exception&) {
      throw EstimationError(where + ": malformed number");
    }
    out.push_back(e);
  }
  return out;
}

}  // namespace tlab
