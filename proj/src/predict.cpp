#include "tlab/predict.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <thread>

#include "tlab/rng.hpp"
#include "tlab/stats.hpp"

namespace tlab {

std::string_view to_string(FeatureSet f) {
  switch (f) {
    case FeatureSet::tendency: return "tendency";
    case FeatureSet::past_outcome: return "past_outcome";
    case FeatureSet::both: return "both";
  }
  return "?";
}

std::optional<FeatureSet> parse_feature_set(std::string_view s) {
  for (auto f : {FeatureSet::tendency, FeatureSet::past_outcome, FeatureSet::both}) {
    if (to_string(f) == s) return f;
  }
  return std::nullopt;
}

std::optional<std::size_t> AgentFeatureTable::row(const std::string& agent_id) const {
  auto it = std::lower_bound(agent_ids.begin(), agent_ids.end(), agent_id);
  if (it == agent_ids.end() || *it != agent_id) return std::nullopt;
  return static_cast<std::size_t>(it - agent_ids.begin());
}

namespace {

void check_windows(const WindowOptions& o) {
  if (o.past_window < 1 || o.future_window < 1) throw PredictError("past and future windows must be positive");
}

std::map<std::string, std::vector<std::size_t>> rows_by_agent(const Dataset& dataset) {
  std::map<std::string, std::vector<std::size_t>> by_agent;
  for (std::size_t i = 0; i < dataset.size(); ++i) by_agent[dataset[i].agent_id].push_back(i);
  return by_agent;
}

bool in_past(const ConversationRecord& r, const WindowOptions& o) { return r.agent_conversation_index < o.past_window; }

bool in_future(const ConversationRecord& r, const WindowOptions& o) {
  return r.agent_conversation_index >= o.past_window &&
         r.agent_conversation_index < o.past_window + o.future_window;
}

// Tie-break for zero scores: the lower agent id (lower table row) wins.
int orient(double score, std::size_t row_j, std::size_t row_k) {
  if (score > 0.0) return 1;
  if (score < 0.0) return -1;
  return row_j < row_k ? 1 : -1;
}

int orient_ids(double score, const std::string& id_j, const std::string& id_k) {
  if (score > 0.0) return 1;
  if (score < 0.0) return -1;
  return id_j < id_k ? 1 : -1;
}

Eigen::VectorXd rms_scale(std::span<const PairedInstance> pairs, std::span<const std::size_t> idx, Eigen::Index dim) {
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(dim);
  for (std::size_t i : idx) sq += pairs[i].feature_diff.array().square().matrix();
  Eigen::VectorXd s = (sq / std::max<double>(1.0, static_cast<double>(idx.size()))).array().sqrt();
  for (Eigen::Index d = 0; d < dim; ++d) {
    if (!(s(d) > 1e-12)) s(d) = 1.0;
  }
  return s;
}

// Pegasos on scaled features; returns weights in raw units.
Eigen::VectorXd pegasos(std::span<const PairedInstance> pairs, std::span<const std::size_t> idx, double lambda,
                        std::size_t epochs, std::uint64_t seed) {
  const Eigen::Index dim = pairs[idx.front()].feature_diff.size();
  const Eigen::VectorXd scale = rms_scale(pairs, idx, dim);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(dim);
  std::vector<std::size_t> order(idx.begin(), idx.end());
  Rng rng(seed);
  const double radius = 1.0 / std::sqrt(lambda);
  double t = 0.0;
  Eigen::VectorXd x(dim);
  for (std::size_t e = 0; e < epochs; ++e) {
    rng.shuffle(order.begin(), order.end());
    for (std::size_t i : order) {
      t += 1.0;
      const double eta = 1.0 / (lambda * t);
      x = pairs[i].feature_diff.cwiseQuotient(scale);
      const double y = pairs[i].label;
      const double margin = y * w.dot(x);
      w *= 1.0 - eta * lambda;
      if (margin < 1.0) w += eta * y * x;
      const double norm = w.norm();
      if (norm > radius) w *= radius / norm;
    }
  }
  return w.cwiseQuotient(scale);
}

}  // namespace

AgentFeatureTable past_features(const Dataset& dataset, std::span<const BehaviorVector> behaviors, Outcome outcome,
                                FeatureSet feature_set, const MarkerInventory& markers,
                                const WindowOptions& options) {
  check_windows(options);
  if (behaviors.size() != dataset.size()) throw PredictError("behaviors do not align with the dataset");
  const bool use_tendency = feature_set != FeatureSet::past_outcome;
  const bool use_outcome = feature_set != FeatureSet::tendency;

  AgentFeatureTable table;
  if (use_tendency) {
    for (auto b : kAllBehaviors) table.names.emplace_back(to_string(b));
  }
  if (use_outcome) table.names.push_back("past_" + std::string(to_string(outcome)));
  const auto dim = static_cast<Eigen::Index>(table.names.size());

  std::vector<std::vector<double>> rows;
  const std::size_t needed = static_cast<std::size_t>(options.past_window + options.future_window);
  for (const auto& [agent, idx] : rows_by_agent(dataset)) {
    if (idx.size() < needed) continue;
    std::vector<double> v(static_cast<std::size_t>(dim), std::nan(""));
    std::vector<const ConversationRecord*> past;
    std::array<double, kConversationBehaviors.size()> sum{};
    std::array<std::size_t, kConversationBehaviors.size()> count{};
    std::size_t good = 0, n = 0;
    for (std::size_t i : idx) {
      const auto& r = dataset[i];
      if (!in_past(r, options)) continue;
      past.push_back(&r);
      for (std::size_t b = 0; b < kConversationBehaviors.size(); ++b) {
        if (auto x = behavior_value(behaviors[i], kConversationBehaviors[b])) {
          sum[b] += *x;
          ++count[b];
        }
      }
      if (has_outcome(r, outcome)) {
        good += static_cast<std::size_t>(outcome_value(r, outcome));
        ++n;
      }
    }
    std::size_t col = 0;
    if (use_tendency) {
      for (std::size_t b = 0; b < kConversationBehaviors.size(); ++b, ++col) {
        if (count[b] > 0) v[col] = sum[b] / static_cast<double>(count[b]);
      }
      if (auto c = coordination(std::span<const ConversationRecord* const>(past), markers, options.min_exchanges))
        v[col] = *c;
      ++col;
    }
    if (use_outcome && n > 0) v[col] = static_cast<double>(good) / static_cast<double>(n);
    table.agent_ids.push_back(agent);
    rows.push_back(std::move(v));
  }

  table.values.resize(static_cast<Eigen::Index>(rows.size()), dim);
  for (Eigen::Index d = 0; d < dim; ++d) {
    double sum = 0.0;
    std::size_t defined = 0;
    for (const auto& r : rows) {
      if (!std::isnan(r[static_cast<std::size_t>(d)])) {
        sum += r[static_cast<std::size_t>(d)];
        ++defined;
      }
    }
    const double fill = defined > 0 ? sum / static_cast<double>(defined) : 0.0;
    for (std::size_t a = 0; a < rows.size(); ++a) {
      const double x = rows[a][static_cast<std::size_t>(d)];
      table.values(static_cast<Eigen::Index>(a), d) = std::isnan(x) ? fill : x;
    }
  }
  return table;
}

std::vector<PairedInstance> build_pairs(const Dataset& dataset, const AgentFeatureTable& table, Outcome outcome,
                                        const WindowOptions& options) {
  check_windows(options);
  // Future tallies per shift, per table row.
  std::map<ShiftKey, std::map<std::size_t, std::pair<std::size_t, std::size_t>>> tallies;  // good, n
  for (const auto& r : dataset) {
    if (!in_future(r, options) || !has_outcome(r, outcome)) continue;
    auto row = table.row(r.agent_id);
    if (!row) continue;
    auto& t = tallies[r.shift][*row];
    t.first += static_cast<std::size_t>(outcome_value(r, outcome));
    ++t.second;
  }
  std::vector<PairedInstance> out;
  for (const auto& [shift, agents] : tallies) {
    std::vector<std::pair<std::size_t, double>> eligible;
    for (const auto& [row, t] : agents) {
      if (t.second >= std::max<std::size_t>(1, options.min_per_shift))
        eligible.emplace_back(row, static_cast<double>(t.first) / static_cast<double>(t.second));
    }
    for (std::size_t i = 0; i < eligible.size(); ++i) {
      for (std::size_t j = i + 1; j < eligible.size(); ++j) {
        const auto [rj, pj] = eligible[i];
        const auto [rk, pk] = eligible[j];
        if (pj == pk) continue;
        PairedInstance inst;
        inst.shift = shift;
        inst.agent_j = rj;
        inst.agent_k = rk;
        inst.feature_diff = (table.values.row(static_cast<Eigen::Index>(rj)) -
                             table.values.row(static_cast<Eigen::Index>(rk))).transpose();
        inst.label = pj > pk ? 1 : -1;
        out.push_back(std::move(inst));
      }
    }
  }
  return out;
}

int LinearPairModel::predict(const Eigen::Ref<const Eigen::VectorXd>& diff, const std::string& id_j,
                             const std::string& id_k) const {
  return orient_ids(weights.dot(diff), id_j, id_k);
}

Eigen::VectorXd fit_hinge(std::span<const PairedInstance> pairs, double lambda, std::size_t epochs,
                          std::uint64_t seed) {
  if (pairs.empty()) throw PredictError("no training pairs");
  if (!(lambda > 0.0)) throw PredictError("lambda must be positive");
  std::vector<std::size_t> idx(pairs.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return pegasos(pairs, idx, lambda, epochs, seed);
}

LinearPairModel train(std::span<const PairedInstance> pairs, const TrainOptions& options) {
  if (options.folds < 2) throw PredictError("need at least 2 folds");
  if (options.lambdas.empty()) throw PredictError("no lambda candidates");
  if (pairs.size() < 10 * options.folds) {
    throw PredictError("training needs at least " + std::to_string(10 * options.folds) + " pairs, got " +
                       std::to_string(pairs.size()));
  }
  const bool has_pos = std::any_of(pairs.begin(), pairs.end(), [](const auto& p) { return p.label > 0; });
  const bool has_neg = std::any_of(pairs.begin(), pairs.end(), [](const auto& p) { return p.label < 0; });
  if (!has_pos || !has_neg) throw PredictError("training pairs carry a single label class");

  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng fold_rng(derive_seed(options.seed, "cv-folds"));
  fold_rng.shuffle(order.begin(), order.end());
  std::vector<std::size_t> fold_of(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) fold_of[order[i]] = i % options.folds;

  const std::size_t n_tasks = options.lambdas.size() * options.folds;
  std::vector<std::size_t> correct(n_tasks, 0);
  auto run_task = [&](std::size_t task) {
    const std::size_t li = task / options.folds, f = task % options.folds;
    std::vector<std::size_t> fit_idx;
    for (std::size_t i : order) {
      if (fold_of[i] != f) fit_idx.push_back(i);
    }
    const auto w = pegasos(pairs, fit_idx, options.lambdas[li], options.epochs,
                           derive_seed(options.seed, static_cast<std::uint64_t>(task)));
    std::size_t ok = 0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      if (fold_of[i] != f) continue;
      ok += orient(w.dot(pairs[i].feature_diff), pairs[i].agent_j, pairs[i].agent_k) == pairs[i].label;
    }
    correct[task] = ok;
  };
  const unsigned threads = std::max(1u, std::min<unsigned>(options.threads, static_cast<unsigned>(n_tasks)));
  if (threads == 1) {
    for (std::size_t t = 0; t < n_tasks; ++t) run_task(t);
  } else {
    std::vector<std::thread> pool;
    for (unsigned th = 0; th < threads; ++th) {
      pool.emplace_back([&, th] {
        for (std::size_t t = th; t < n_tasks; t += threads) run_task(t);
      });
    }
    for (auto& t : pool) t.join();
  }

  LinearPairModel model;
  std::size_t best = 0;
  for (std::size_t li = 0; li < options.lambdas.size(); ++li) {
    std::size_t total = 0;
    for (std::size_t f = 0; f < options.folds; ++f) total += correct[li * options.folds + f];
    const double acc = static_cast<double>(total) / static_cast<double>(pairs.size());
    model.cv_accuracy_by_lambda.push_back(acc);
    if (acc > model.cv_accuracy_by_lambda[best]) best = li;
  }
  model.lambda = options.lambdas[best];
  model.cv_accuracy = model.cv_accuracy_by_lambda[best];
  model.weights = pegasos(pairs, order, model.lambda, options.epochs, derive_seed(options.seed, "final-fit"));
  model.n_train = pairs.size();
  return model;
}

Evaluation evaluate(const LinearPairModel& model, std::span<const PairedInstance> test_pairs,
                    const AgentFeatureTable& table) {
  if (test_pairs.empty()) throw PredictError("empty test set");
  Evaluation ev;
  ev.n = test_pairs.size();
  for (const auto& p : test_pairs) {
    const auto& id_j = table.agent_ids.at(p.agent_j);
    const auto& id_k = table.agent_ids.at(p.agent_k);
    const int forward = model.predict(p.feature_diff, id_j, id_k);
    const int backward = model.predict(-p.feature_diff, id_k, id_j);
    ev.antisymmetric = ev.antisymmetric && forward == -backward;
    ev.correct += forward == p.label;
  }
  ev.accuracy = static_cast<double>(ev.correct) / static_cast<double>(ev.n);
  ev.p_value = stats::binomial_test(static_cast<std::int64_t>(ev.correct), static_cast<std::int64_t>(ev.n));
  return ev;
}

std::vector<std::string> rank_agents(const LinearPairModel& model, const AgentFeatureTable& table,
                                     std::span<const std::string> agents) {
  std::vector<std::pair<double, std::string>> scored;
  for (const auto& a : agents) {
    auto row = table.row(a);
    if (!row) throw PredictError("agent " + a + " has no feature aggregates");
    scored.emplace_back(model.score(table.values.row(static_cast<Eigen::Index>(*row)).transpose()), a);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) {
    return x.first != y.first ? x.first > y.first : x.second < y.second;
  });
  std::vector<std::string> out;
  for (auto& [_, a] : scored) out.push_back(std::move(a));
  return out;
}

std::pair<std::set<std::string>, std::set<std::string>> split_agents(std::span<const std::string> agent_ids,
                                                                     std::uint64_t seed, double train_fraction) {
  std::vector<std::string> ids(agent_ids.begin(), agent_ids.end());
  std::sort(ids.begin(), ids.end());
  Rng rng(derive_seed(seed, "agent-split"));
  rng.shuffle(ids.begin(), ids.end());
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(ids.size())));
  std::pair<std::set<std::string>, std::set<std::string>> out;
  for (std::size_t i = 0; i < ids.size(); ++i) (i < n_train ? out.first : out.second).insert(ids[i]);
  return out;
}

std::vector<PairedInstance> pairs_within(std::span<const PairedInstance> pairs, const AgentFeatureTable& table,
                                         const std::set<std::string>& agents) {
  std::vector<PairedInstance> out;
  for (const auto& p : pairs) {
    if (agents.count(table.agent_ids.at(p.agent_j)) && agents.count(table.agent_ids.at(p.agent_k))) out.push_back(p);
  }
  return out;
}

}  // namespace tlab
