#include "tlab/realloc.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <unordered_map>

#include "tlab/rng.hpp"

namespace tlab {

std::size_t top_count(int k, std::size_t n) {
  if (k < 1 || k > 100) throw SimulationError("k must lie in [1, 100]");
  const std::size_t top = (static_cast<std::size_t>(k) * n + 99) / 100;
  return std::max<std::size_t>(1, std::min(top, n));
}

namespace {

double pooled(std::span<const AgentShiftOutcome> agents) {
  std::size_t good = 0, n = 0;
  for (const auto& a : agents) {
    good += a.good;
    n += a.n;
  }
  return n > 0 ? static_cast<double>(good) / static_cast<double>(n) : 0.0;
}

bool in_window(const ConversationRecord& r, int begin, int end) {
  return r.agent_conversation_index >= begin && r.agent_conversation_index < end;
}

// Conversations usable for ranking an agent in `shift`: past ones and future
// ones from other shifts.
bool usable_for(const ConversationRecord& r, const ShiftKey& shift, const WindowOptions& w) {
  if (r.agent_conversation_index < w.past_window) return true;
  return in_window(r, w.past_window, w.past_window + w.future_window) && r.shift != shift;
}

using AgentRows = std::unordered_map<std::string, std::vector<std::size_t>>;

std::shared_ptr<const AgentRows> index_rows(const Dataset& dataset) {
  auto rows = std::make_shared<AgentRows>();
  for (std::size_t i = 0; i < dataset.size(); ++i) (*rows)[dataset[i].agent_id].push_back(i);
  return rows;
}

}  // namespace

namespace {

// Qualifying shifts with their agents in rank order; `rows` holds each ranked
// agent's counted dataset rows.
struct RankedShifts {
  std::vector<ShiftScenario> shifts;
  std::vector<std::vector<std::vector<std::size_t>>> rows;
};

RankedShifts rank_shifts(const Dataset& dataset, Outcome outcome, const Ranker& ranker,
                         const SimulationOptions& options, const std::optional<std::set<std::string>>& agents) {
  if (options.k_values.empty()) throw SimulationError("no k values");
  for (int k : options.k_values) (void)top_count(k, 1);

  std::map<ShiftKey, std::map<std::string, std::pair<AgentShiftOutcome, std::vector<std::size_t>>>> tallies;
  const int begin = options.past_window, end = options.past_window + options.future_window;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& r = dataset[i];
    if (!in_window(r, begin, end) || !has_outcome(r, outcome)) continue;
    if (agents && !agents->count(r.agent_id)) continue;
    auto& [t, rows] = tallies[r.shift][r.agent_id];
    t.agent_id = r.agent_id;
    t.good += static_cast<std::size_t>(outcome_value(r, outcome));
    ++t.n;
    rows.push_back(i);
  }

  RankedShifts out;
  for (auto& [shift, by_agent] : tallies) {
    std::vector<std::pair<AgentShiftOutcome, std::vector<std::size_t>>> qualifying;
    for (auto& [id, entry] : by_agent) {
      if (entry.first.n >= options.min_convs) qualifying.push_back(std::move(entry));
    }
    if (qualifying.size() < options.min_agents || qualifying.empty()) continue;
    for (auto& q : qualifying) q.first.score = ranker(q.first.agent_id, shift, q.first);
    std::sort(qualifying.begin(), qualifying.end(), [](const auto& x, const auto& y) {
      return x.first.score != y.first.score ? x.first.score > y.first.score : x.first.agent_id < y.first.agent_id;
    });
    ShiftScenario sc;
    sc.shift = shift;
    std::vector<std::vector<std::size_t>> rows;
    for (auto& q : qualifying) {
      sc.agents.push_back(q.first);
      rows.push_back(std::move(q.second));
    }
    out.shifts.push_back(std::move(sc));
    out.rows.push_back(std::move(rows));
  }
  if (out.shifts.empty()) throw SimulationError("no shift has enough qualifying agents");
  return out;
}

void summarize(SimulationReport& report, const SimulationOptions& options) {
  const double n_shifts = static_cast<double>(report.shifts.size());
  std::vector<double> raw_p;
  for (std::size_t ki = 0; ki < options.k_values.size(); ++ki) {
    KSummary s;
    s.k = options.k_values[ki];
    std::vector<double> diffs;
    for (const auto& sc : report.shifts) {
      s.macro_counterfactual += sc.counterfactual[ki];
      s.macro_realized += sc.realized;
      diffs.push_back(sc.counterfactual[ki] - sc.realized);
      s.fraction_improved += diffs.back() > 0.0;
    }
    s.macro_counterfactual /= n_shifts;
    s.macro_realized /= n_shifts;
    s.mean_difference = s.macro_counterfactual - s.macro_realized;
    s.fraction_improved /= n_shifts;
    const Eigen::Map<const Eigen::VectorXd> d(diffs.data(), static_cast<Eigen::Index>(diffs.size()));
    s.wilcoxon = stats::wilcoxon_signed_rank(d);
    raw_p.push_back(s.wilcoxon.p_value);

    stats::BootstrapConfig cfg = options.bootstrap;
    cfg.seed = derive_seed(options.bootstrap.seed, "realloc-k" + std::to_string(s.k));
    const auto boot = stats::bootstrap(
        diffs.size(),
        [&](std::span<const std::size_t> idx) -> std::optional<double> {
          double acc = 0.0;
          for (std::size_t i : idx) acc += diffs[i];
          return acc / static_cast<double>(idx.size());
        },
        cfg);
    s.diff_ci_low = boot.low;
    s.diff_ci_high = boot.high;
    report.summary.push_back(s);
  }
  const auto adjusted = stats::bonferroni(raw_p);
  for (std::size_t i = 0; i < report.summary.size(); ++i) report.summary[i].p_bonferroni = adjusted[i];
}

}  // namespace

SimulationReport simulate(const Dataset& dataset, Outcome outcome, const Ranker& ranker,
                          const SimulationOptions& options, const std::optional<std::set<std::string>>& agents) {
  auto ranked = rank_shifts(dataset, outcome, ranker, options, agents);
  SimulationReport report;
  report.shifts = std::move(ranked.shifts);
  for (auto& sc : report.shifts) {
    sc.realized = pooled(sc.agents);
    for (int k : options.k_values) {
      const std::size_t top = top_count(k, sc.agents.size());
      sc.counterfactual.push_back(pooled(std::span<const AgentShiftOutcome>(sc.agents).first(top)));
    }
  }
  summarize(report, options);
  return report;
}

SimulationReport simulate_model_based(const Dataset& dataset, const GroundTruth& truth, Outcome outcome,
                                      const Ranker& ranker, const SimulationOptions& options,
                                      const std::optional<std::set<std::string>>& agents) {
  auto ranked = rank_shifts(dataset, outcome, ranker, options, agents);
  const auto& model = truth.config.outcome_model(outcome);
  const double noise = truth.config.outcome_noise;
  SimulationReport report;
  report.shifts = std::move(ranked.shifts);
  for (std::size_t s = 0; s < report.shifts.size(); ++s) {
    auto& sc = report.shifts[s];
    const auto& rows = ranked.rows[s];
    std::vector<Eigen::VectorXd> tendency;
    for (const auto& a : sc.agents) {
      const auto it = truth.agent_index.find(a.agent_id);
      if (it == truth.agent_index.end()) throw SimulationError("agent " + a.agent_id + " is unknown to the truth");
      tendency.emplace_back(truth.tendencies.row(static_cast<Eigen::Index>(it->second)).transpose());
    }
    std::vector<CircumstanceVector> circumstances;
    std::vector<std::size_t> owner;
    for (std::size_t a = 0; a < rows.size(); ++a)
      for (std::size_t i : rows[a]) {
        const auto& c = dataset[i].circumstance;
        if (!c) throw SimulationError("conversation " + dataset[i].conversation_id + " has no circumstance");
        circumstances.emplace_back(c->difficulty, c->congeniality);
        owner.push_back(a);
      }
    // mean_prob[a]: agent a's expected outcome over every conversation of the shift
    std::vector<double> mean_prob(sc.agents.size(), 0.0);
    double realized = 0.0;
    for (std::size_t c = 0; c < circumstances.size(); ++c) {
      for (std::size_t a = 0; a < sc.agents.size(); ++a) {
        const double p = outcome_probability(model, noise, tendency[a], circumstances[c]);
        mean_prob[a] += p;
        if (owner[c] == a) realized += p;
      }
    }
    const double n = static_cast<double>(circumstances.size());
    for (auto& m : mean_prob) m /= n;
    sc.realized = realized / n;
    for (int k : options.k_values) {
      const std::size_t top = top_count(k, sc.agents.size());
      double acc = 0.0;
      for (std::size_t a = 0; a < top; ++a) acc += mean_prob[a];
      sc.counterfactual.push_back(acc / static_cast<double>(top));
    }
  }
  summarize(report, options);
  return report;
}

Ranker oracle_ranker() {
  return [](const std::string&, const ShiftKey&, const AgentShiftOutcome& f) {
    return f.n > 0 ? static_cast<double>(f.good) / static_cast<double>(f.n) : 0.0;
  };
}

Ranker score_ranker(std::unordered_map<std::string, double> scores) {
  auto table = std::make_shared<const std::unordered_map<std::string, double>>(std::move(scores));
  return [table](const std::string& id, const ShiftKey&, const AgentShiftOutcome&) {
    auto it = table->find(id);
    return it == table->end() ? -std::numeric_limits<double>::infinity() : it->second;
  };
}

Ranker random_ranker(std::uint64_t seed) {
  return [seed](const std::string& id, const ShiftKey& shift, const AgentShiftOutcome&) {
    Rng rng(derive_seed(derive_seed(seed, id), static_cast<std::uint64_t>(ShiftKeyHash{}(shift))));
    return rng.uniform();
  };
}

Ranker tendency_ranker(const LinearPairModel& model, const AgentFeatureTable& table, Outcome outcome,
                       FeatureSet feature_set, const ShiftFeatureSource& source) {
  if (!source.dataset || !source.markers) throw SimulationError("feature source is incomplete");
  if (source.behaviors.size() != source.dataset->size()) throw SimulationError("behaviors do not align with the dataset");
  const auto dim = static_cast<Eigen::Index>(table.names.size());
  if (model.weights.size() != dim) throw SimulationError("model and feature table dimensions differ");
  Eigen::VectorXd fill = table.values.rows() > 0 ? Eigen::VectorXd(table.values.colwise().mean().transpose())
                                                 : Eigen::VectorXd::Zero(dim);
  auto rows = index_rows(*source.dataset);
  const bool use_tendency = feature_set != FeatureSet::past_outcome;
  const bool use_outcome = feature_set != FeatureSet::tendency;

  return [=, weights = model.weights](const std::string& id, const ShiftKey& shift, const AgentShiftOutcome&) {
    Eigen::VectorXd x = fill;
    auto it = rows->find(id);
    if (it == rows->end()) return weights.dot(x);
    const auto& ds = *source.dataset;
    std::vector<const ConversationRecord*> used;
    std::array<double, kConversationBehaviors.size()> sum{};
    std::array<std::size_t, kConversationBehaviors.size()> count{};
    std::size_t good = 0, n = 0;
    for (std::size_t i : it->second) {
      const auto& r = ds[i];
      if (!usable_for(r, shift, source.window)) continue;
      used.push_back(&r);
      for (std::size_t b = 0; b < kConversationBehaviors.size(); ++b) {
        if (auto v = behavior_value(source.behaviors[i], kConversationBehaviors[b])) {
          sum[b] += *v;
          ++count[b];
        }
      }
      if (has_outcome(r, outcome)) {
        good += static_cast<std::size_t>(outcome_value(r, outcome));
        ++n;
      }
    }
    Eigen::Index col = 0;
    if (use_tendency) {
      for (std::size_t b = 0; b < kConversationBehaviors.size(); ++b, ++col) {
        if (count[b] > 0) x(col) = sum[b] / static_cast<double>(count[b]);
      }
      if (auto c = coordination(std::span<const ConversationRecord* const>(used), *source.markers,
                                source.window.min_exchanges))
        x(col) = *c;
      ++col;
    }
    if (use_outcome && n > 0) x(col) = static_cast<double>(good) / static_cast<double>(n);
    return weights.dot(x);
  };
}

Ranker past_outcome_ranker(const Dataset& dataset, Outcome outcome, const WindowOptions& window) {
  auto rows = index_rows(dataset);
  return [rows, &dataset, outcome, window](const std::string& id, const ShiftKey& shift, const AgentShiftOutcome&) {
    auto it = rows->find(id);
    if (it == rows->end()) return -1.0;
    std::size_t good = 0, n = 0;
    for (std::size_t i : it->second) {
      const auto& r = dataset[i];
      if (!usable_for(r, shift, window) || !has_outcome(r, outcome)) continue;
      good += static_cast<std::size_t>(outcome_value(r, outcome));
      ++n;
    }
    return n > 0 ? static_cast<double>(good) / static_cast<double>(n) : -1.0;
  };
}

SimulationReport baseline_past_outcome(const Dataset& dataset, Outcome outcome, const SimulationOptions& options,
                                       const std::optional<std::set<std::string>>& agents) {
  WindowOptions window;
  window.past_window = options.past_window;
  window.future_window = options.future_window;
  return simulate(dataset, outcome, past_outcome_ranker(dataset, outcome, window), options, agents);
}

}  // namespace tlab
