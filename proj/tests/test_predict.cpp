#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "helpers.hpp"
#include "tlab/config.hpp"
#include "tlab/estimators.hpp"
#include "tlab/predict.hpp"
#include "tlab/stats.hpp"

using namespace tlab;
using tlab::testing::conversation;

namespace {

// Agent with `past` conversations in shift P and future closure outcomes in shift F.
void add_agent(Dataset& d, const std::string& agent, int past, const std::vector<bool>& future, ShiftKey f = {0, 1, 0}) {
  for (int i = 0; i < past; ++i) d.push_back(conversation(agent, i, {0, 0, 0}));
  for (std::size_t i = 0; i < future.size(); ++i)
    d.push_back(conversation(agent, past + static_cast<int>(i), f, future[i] ? Closure::closed : Closure::disengaged));
}

std::vector<bool> closes(int good, int n) {
  std::vector<bool> v(static_cast<std::size_t>(n), false);
  std::fill(v.begin(), v.begin() + good, true);
  return v;
}

WindowOptions windows(int past, int future, std::size_t min_per_shift = 1) {
  WindowOptions w;
  w.past_window = past;
  w.future_window = future;
  w.min_per_shift = min_per_shift;
  return w;
}

AgentFeatureTable features_of(const Dataset& d, const WindowOptions& w, FeatureSet fs = FeatureSet::tendency,
                              Outcome o = Outcome::closure) {
  const auto b = extract_behaviors(d, ValenceLexicon::builtin());
  return past_features(d, b, o, fs, MarkerInventory::builtin(), w);
}

// Synthetic instances over a random table: label = sign of feature 0.
struct Toy {
  AgentFeatureTable table;
  std::vector<PairedInstance> pairs;
};

Toy separable(std::size_t n_agents, std::uint64_t seed, bool shuffle_labels = false) {
  Toy t;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  t.table.names = {"f0", "f1", "f2"};
  t.table.values.resize(static_cast<Eigen::Index>(n_agents), 3);
  for (std::size_t a = 0; a < n_agents; ++a) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "a%04zu", a);
    t.table.agent_ids.emplace_back(buf);
    for (int c = 0; c < 3; ++c) t.table.values(static_cast<Eigen::Index>(a), c) = n01(rng) * (c + 1);
  }
  for (std::size_t j = 0; j < n_agents; ++j)
    for (std::size_t k = j + 1; k < n_agents; ++k) {
      PairedInstance p;
      p.agent_j = j;
      p.agent_k = k;
      p.feature_diff = (t.table.values.row(static_cast<Eigen::Index>(j)) - t.table.values.row(static_cast<Eigen::Index>(k))).transpose();
      p.label = p.feature_diff(0) > 0 ? 1 : -1;
      t.pairs.push_back(p);
    }
  if (shuffle_labels) {
    std::vector<int> labels;
    for (const auto& p : t.pairs) labels.push_back(p.label);
    std::shuffle(labels.begin(), labels.end(), rng);
    for (std::size_t i = 0; i < labels.size(); ++i) t.pairs[i].label = labels[i];
  }
  return t;
}

LinearPairModel with_weights(std::initializer_list<double> w) {
  LinearPairModel m;
  m.weights = Eigen::VectorXd(static_cast<Eigen::Index>(w.size()));
  Eigen::Index i = 0;
  for (double x : w) m.weights(i++) = x;
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// build_pairs

TEST(BuildPairs, LabelPointsToBetterAgent) {
  Dataset d;
  add_agent(d, "a1", 1, closes(1, 5));  // 0.2
  add_agent(d, "a2", 1, closes(4, 5));  // 0.8
  const auto w = windows(1, 5);
  const auto t = features_of(d, w);
  ASSERT_EQ(t.agent_ids, (std::vector<std::string>{"a1", "a2"}));
  const auto p = build_pairs(d, t, Outcome::closure, w);
  ASSERT_EQ(p.size(), 1u);
  EXPECT_EQ(p[0].agent_j, 0u);
  EXPECT_EQ(p[0].agent_k, 1u);
  EXPECT_EQ(p[0].label, -1);  // a2, the 0.8 agent, is better
  EXPECT_EQ(p[0].shift, (ShiftKey{0, 1, 0}));
  EXPECT_TRUE(p[0].feature_diff.allFinite());
}

TEST(BuildPairs, EqualPropensitiesGiveNoInstance) {
  Dataset d;
  add_agent(d, "a1", 1, closes(2, 4));
  add_agent(d, "a2", 1, closes(1, 2));
  const auto w = windows(1, 4);
  d.push_back(conversation("a2", 3, {0, 1, 0}, Closure::closed));
  d.push_back(conversation("a2", 4, {0, 1, 0}, Closure::disengaged));
  EXPECT_TRUE(build_pairs(d, features_of(d, w), Outcome::closure, w).empty());
}

TEST(BuildPairs, RequiresSharedShiftAndMinimumActivity) {
  Dataset d;
  add_agent(d, "a1", 1, closes(1, 3));
  add_agent(d, "a2", 1, closes(3, 3), {0, 2, 0});
  const auto w = windows(1, 3);
  EXPECT_TRUE(build_pairs(d, features_of(d, w), Outcome::closure, w).empty());
  Dataset e;
  add_agent(e, "a1", 1, closes(1, 3));
  add_agent(e, "a2", 1, closes(3, 3));
  EXPECT_EQ(build_pairs(e, features_of(e, w), Outcome::closure, w).size(), 1u);
  const auto strict = windows(1, 3, 4);
  EXPECT_TRUE(build_pairs(e, features_of(e, strict), Outcome::closure, strict).empty());
}

TEST(BuildPairs, RatingCountsOnlyRatedConversations) {
  Dataset d;
  for (const auto* a : {"a1", "a2"}) {
    d.push_back(conversation(a, 0, {0, 0, 0}));
    d.push_back(conversation(a, 1, {0, 1, 0}, Closure::closed, std::string(a) == "a1" ? Rating::positive : Rating::negative));
    d.push_back(conversation(a, 2, {0, 1, 0}, Closure::closed, Rating::unrated));
  }
  const auto w1 = windows(1, 2, 1), w2 = windows(1, 2, 2);
  EXPECT_EQ(build_pairs(d, features_of(d, w1, FeatureSet::tendency, Outcome::rating), Outcome::rating, w1).size(), 1u);
  EXPECT_TRUE(build_pairs(d, features_of(d, w2, FeatureSet::tendency, Outcome::rating), Outcome::rating, w2).empty());
}

TEST(BuildPairs, CountMatchesCombinatorialOracle) {
  auto pc = load_config(std::string(TLAB_DATA_DIR) + "/default.toml");
  pc.generator.n_agents = 120;
  const auto p = generate(pc.generator);
  const WindowOptions w;
  const auto t = features_of(p.dataset, w);
  const auto pairs = build_pairs(p.dataset, t, Outcome::closure, w);

  // independent count: per shift, agents with >= 3 future conversations, unequal propensities
  std::map<ShiftKey, std::map<std::string, std::pair<int, int>>> tally;
  for (const auto& r : p.dataset)
    if (r.agent_conversation_index >= 40 && r.agent_conversation_index < 80) {
      auto& x = tally[r.shift][r.agent_id];
      x.first += r.closure == Closure::closed;
      ++x.second;
    }
  std::size_t expected = 0, all_pairs = 0;
  for (const auto& [shift, agents] : tally) {
    std::vector<double> props;
    for (const auto& [a, x] : agents)
      if (x.second >= 3) props.push_back(double(x.first) / x.second);
    all_pairs += props.size() * (props.size() - (props.empty() ? 0 : 1)) / 2;
    for (std::size_t i = 0; i < props.size(); ++i)
      for (std::size_t j = i + 1; j < props.size(); ++j) expected += props[i] != props[j];
  }
  EXPECT_EQ(pairs.size(), expected);
  EXPECT_GT(pairs.size(), all_pairs / 2);  // ties are a minority

  // doubling agents roughly quadruples pairs at a fixed shift grid
  pc.generator.n_agents = 240;
  const auto q = generate(pc.generator);
  const auto qt = features_of(q.dataset, w);
  const double ratio = double(build_pairs(q.dataset, qt, Outcome::closure, w).size()) / double(pairs.size());
  EXPECT_GT(ratio, 3.0);
  EXPECT_LT(ratio, 5.0);
}

TEST(BuildPairs, PastAndFutureAreDisjoint) {
  auto pc = load_config(std::string(TLAB_DATA_DIR) + "/default.toml");
  pc.generator.n_agents = 40;
  const auto p = generate(pc.generator);
  const WindowOptions w;
  const auto t = features_of(p.dataset, w, FeatureSet::both);
  const auto base = build_pairs(p.dataset, t, Outcome::closure, w);
  // flipping every past outcome leaves labels unchanged; past outcomes only move features
  auto flipped = p.dataset;
  for (auto& r : flipped)
    if (r.agent_conversation_index < 40) r.closure = r.closure == Closure::closed ? Closure::disengaged : Closure::closed;
  const auto t2 = features_of(flipped, w, FeatureSet::both);
  const auto again = build_pairs(flipped, t2, Outcome::closure, w);
  ASSERT_EQ(again.size(), base.size());
  for (std::size_t i = 0; i < base.size(); ++i) EXPECT_EQ(again[i].label, base[i].label);
  // changing future transcripts leaves features unchanged
  auto muted = p.dataset;
  for (auto& r : muted)
    if (r.agent_conversation_index >= 40)
      for (auto& m : r.messages) m.tokens = {"x"};
  EXPECT_EQ(features_of(muted, w, FeatureSet::both).values, t.values);
}

TEST(PastFeatures, NamesAndShortAgents) {
  Dataset d;
  add_agent(d, "a1", 2, closes(1, 2));
  add_agent(d, "a2", 1, closes(1, 2));  // short of 2 + 2
  const auto w = windows(2, 2);
  const auto t = features_of(d, w, FeatureSet::both);
  EXPECT_EQ(t.agent_ids, (std::vector<std::string>{"a1"}));
  EXPECT_EQ(t.names.size(), kAllBehaviors.size() + 1);
  EXPECT_EQ(t.names.back(), "past_closure");
  EXPECT_TRUE(t.values.allFinite());
  EXPECT_EQ(features_of(d, w, FeatureSet::past_outcome).names, (std::vector<std::string>{"past_closure"}));
}

// ---------------------------------------------------------------------------
// training

TEST(Train, SeparablePairs) {
  const auto t = separable(40, 1);
  TrainOptions o;
  o.seed = 3;
  const auto m = train(t.pairs, o);
  EXPECT_GE(m.cv_accuracy, 0.99);
  EXPECT_EQ(m.cv_accuracy_by_lambda.size(), o.lambdas.size());
  EXPECT_EQ(m.n_train, t.pairs.size());
  EXPECT_GT(std::abs(m.weights(0)), std::abs(m.weights(1)));
}

TEST(Train, ShuffledLabelsAtChance) {
  const auto t = separable(40, 2, true);
  TrainOptions o;
  o.seed = 4;
  const auto m = train(t.pairs, o);
  const auto n = static_cast<std::int64_t>(t.pairs.size());
  const auto correct = static_cast<std::int64_t>(std::llround(m.cv_accuracy * static_cast<double>(n)));
  // inside the exact two-sided 95% acceptance region of Binomial(n, 1/2)
  EXPECT_GE(stats::binomial_test(correct, n), 0.05) << m.cv_accuracy;
}

TEST(Train, DeterministicAndThreadInvariant) {
  const auto t = separable(30, 5);
  TrainOptions o;
  o.seed = 9;
  const auto a = train(t.pairs, o);
  o.threads = 3;
  const auto b = train(t.pairs, o);
  EXPECT_EQ(a.weights, b.weights);
  EXPECT_EQ(a.cv_accuracy_by_lambda, b.cv_accuracy_by_lambda);
}

TEST(Train, RejectsDegenerateInput) {
  auto t = separable(30, 6);
  for (auto& p : t.pairs) p.label = 1;
  EXPECT_THROW(train(t.pairs), PredictError);
  const auto small = separable(5, 6);  // 10 pairs < 10 per fold
  EXPECT_THROW(train(small.pairs), PredictError);
}

TEST(Predict, ZeroDifferenceGoesToLowerId) {
  const auto m = with_weights({1.0, -2.0});
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(2);
  EXPECT_EQ(m.predict(zero, "a0001", "a0002"), 1);
  EXPECT_EQ(m.predict(zero, "a0002", "a0001"), -1);
  const Eigen::VectorXd orthogonal = (Eigen::VectorXd(2) << 2.0, 1.0).finished();
  EXPECT_EQ(m.predict(orthogonal, "a0009", "a0003"), -1);
}

// ---------------------------------------------------------------------------
// evaluation and ranking

TEST(Evaluate, OracleScorerIsPerfectAndAntisymmetric) {
  const auto t = separable(25, 7);
  const auto m = with_weights({1.0, 0.0, 0.0});
  const auto ev = evaluate(m, t.pairs, t.table);
  EXPECT_EQ(ev.accuracy, 1.0);
  EXPECT_TRUE(ev.antisymmetric);
  EXPECT_LT(ev.p_value, 1e-10);
  EXPECT_THROW(evaluate(m, {}, t.table), PredictError);
}

TEST(Evaluate, FlippedOrientationAndOrderGiveSameAccuracy) {
  const auto t = separable(25, 8, true);
  const auto m = with_weights({0.3, -1.0, 0.5});
  const auto ev = evaluate(m, t.pairs, t.table);
  auto flipped = t.pairs;
  for (auto& p : flipped) {
    std::swap(p.agent_j, p.agent_k);
    p.feature_diff = -p.feature_diff;
    p.label = -p.label;
  }
  EXPECT_EQ(evaluate(m, flipped, t.table).correct, ev.correct);
  auto shuffled = t.pairs;
  std::shuffle(shuffled.begin(), shuffled.end(), std::mt19937_64(1));
  EXPECT_EQ(evaluate(m, shuffled, t.table).correct, ev.correct);
  // zero weights: every prediction falls to the lower id, still antisymmetric
  EXPECT_TRUE(evaluate(with_weights({0, 0, 0}), t.pairs, t.table).antisymmetric);
}

TEST(Rank, ProjectionConsistencyReversal) {
  const auto t = separable(12, 9);
  const auto m = with_weights({1.0, 0.0, 0.0});
  const auto ranked = rank_agents(m, t.table, t.table.agent_ids);
  for (std::size_t i = 1; i < ranked.size(); ++i)
    EXPECT_GE(t.table.values(static_cast<Eigen::Index>(*t.table.row(ranked[i - 1])), 0),
              t.table.values(static_cast<Eigen::Index>(*t.table.row(ranked[i])), 0));

  const auto g = with_weights({0.4, -1.3, 0.2});
  const auto order = rank_agents(g, t.table, t.table.agent_ids);
  std::map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < order.size(); ++i) pos[order[i]] = i;
  for (const auto& p : t.pairs) {
    const auto& j = t.table.agent_ids[p.agent_j];
    const auto& k = t.table.agent_ids[p.agent_k];
    EXPECT_EQ(g.predict(p.feature_diff, j, k), pos[j] < pos[k] ? 1 : -1);
  }
  auto neg = g;
  neg.weights = -g.weights;
  auto reversed = rank_agents(neg, t.table, t.table.agent_ids);
  std::reverse(reversed.begin(), reversed.end());
  EXPECT_EQ(reversed, order);

  const std::vector<std::string> ghost{"nobody"};
  EXPECT_THROW(rank_agents(g, t.table, ghost), PredictError);
}

TEST(Rank, TiesByAscendingId) {
  const auto t = separable(6, 10);
  const auto ranked = rank_agents(with_weights({0, 0, 0}), t.table, t.table.agent_ids);
  EXPECT_EQ(ranked, t.table.agent_ids);
}

TEST(Split, DisjointCoveringDeterministic) {
  std::vector<std::string> ids;
  for (int i = 0; i < 101; ++i) ids.push_back("a" + std::to_string(1000 + i));
  const auto [train_set, test_set] = split_agents(ids, 17);
  EXPECT_EQ(train_set.size() + test_set.size(), ids.size());
  EXPECT_NEAR(double(train_set.size()), 50.5, 1.0);
  for (const auto& a : train_set) EXPECT_EQ(test_set.count(a), 0u);
  EXPECT_EQ(split_agents(ids, 17).first, train_set);
  EXPECT_NE(split_agents(ids, 18).first, train_set);
}

// ---------------------------------------------------------------------------

TEST(Benchmark, TendencyBeatsPastOutcomeOnSparseRatings) {
  const auto pc = load_config(std::string(TLAB_DATA_DIR) + "/sparse_rating.toml");
  const auto p = generate(pc.generator);
  const auto b = extract_behaviors(p.dataset, ValenceLexicon::builtin());
  WindowOptions w;
  w.min_per_shift = pc.predict.min_per_shift;
  TrainOptions o;
  o.seed = 11;
  std::map<FeatureSet, double> acc;
  for (auto fs : {FeatureSet::tendency, FeatureSet::past_outcome}) {
    const auto t = past_features(p.dataset, b, Outcome::rating, fs, MarkerInventory::builtin(), w);
    const auto pairs = build_pairs(p.dataset, t, Outcome::rating, w);
    const auto [tr, te] = split_agents(t.agent_ids, 11);
    const auto m = train(pairs_within(pairs, t, tr), o);
    const auto ev = evaluate(m, pairs_within(pairs, t, te), t);
    EXPECT_TRUE(ev.antisymmetric);
    acc[fs] = ev.accuracy;
  }
  EXPECT_GT(acc[FeatureSet::tendency], acc[FeatureSet::past_outcome]);
  EXPECT_GT(acc[FeatureSet::tendency], 0.55);
}
