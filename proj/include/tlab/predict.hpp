#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "tlab/features.hpp"
#include "tlab/model.hpp"

namespace tlab {

class PredictError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class FeatureSet { tendency, past_outcome, both };

std::string_view to_string(FeatureSet f);
std::optional<FeatureSet> parse_feature_set(std::string_view s);

struct WindowOptions {
  int past_window = 40;    // past = index < past_window
  int future_window = 40;  // future = index in [past_window, past_window + future_window)
  std::size_t min_per_shift = 3;
  std::size_t min_exchanges = kDefaultMinExchanges;
};

/// Per-agent feature vectors from past conversations. Undefined values are
/// imputed with the column mean so that pair differences and agent scores
/// stay consistent.
struct AgentFeatureTable {
  std::vector<std::string> agent_ids;  // ascending
  std::vector<std::string> names;
  Eigen::MatrixXd values;              // agent x feature

  std::optional<std::size_t> row(const std::string& agent_id) const;
};

/// Feature names: the six behaviors for `tendency`, "past_<outcome>" for
/// `past_outcome`. Agents with fewer than past+future conversations are left
/// out.
AgentFeatureTable past_features(const Dataset& dataset, std::span<const BehaviorVector> behaviors, Outcome outcome,
                                FeatureSet feature_set, const MarkerInventory& markers,
                                const WindowOptions& options = {});

struct PairedInstance {
  ShiftKey shift;
  std::size_t agent_j = 0;  // rows of the feature table; agent_j has the lower id
  std::size_t agent_k = 0;
  Eigen::VectorXd feature_diff;
  int label = 0;  // +1 when J's future propensity in the shift is higher
};

/// One instance per unordered agent pair per shared future shift where both
/// have at least min_per_shift conversations carrying the outcome. Ties in
/// propensity are dropped.
std::vector<PairedInstance> build_pairs(const Dataset& dataset, const AgentFeatureTable& table, Outcome outcome,
                                        const WindowOptions& options = {});

struct TrainOptions {
  std::vector<double> lambdas{1e-4, 1e-3, 1e-2, 1e-1};
  std::size_t folds = 10;
  std::size_t epochs = 20;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

/// Linear scorer with no bias term, so predictions flip with orientation.
struct LinearPairModel {
  Eigen::VectorXd weights;  // in raw feature units
  double lambda = 0.0;
  double cv_accuracy = 0.0;
  std::vector<double> cv_accuracy_by_lambda;
  std::size_t n_train = 0;

  double score(const Eigen::Ref<const Eigen::VectorXd>& features) const { return weights.dot(features); }
  /// +1 when J is predicted better. A zero score goes to the lower agent id.
  int predict(const Eigen::Ref<const Eigen::VectorXd>& diff, const std::string& id_j, const std::string& id_k) const;
};

/// Hinge-loss linear model (Pegasos subgradient descent) with features scaled
/// by their root mean square on each training fold; lambda chosen by k-fold
/// CV accuracy. Throws PredictError with fewer than 10 instances per fold or a
/// single label class.
LinearPairModel train(std::span<const PairedInstance> pairs, const TrainOptions& options = {});

/// Fits a model at a fixed lambda without cross-validation.
Eigen::VectorXd fit_hinge(std::span<const PairedInstance> pairs, double lambda, std::size_t epochs,
                          std::uint64_t seed);

struct Evaluation {
  double accuracy = 0.0;
  std::size_t n = 0;
  std::size_t correct = 0;
  double p_value = 1.0;  // exact binomial test against 0.5
  /// Every pair evaluated in both orientations gave opposite predictions.
  bool antisymmetric = true;
};

Evaluation evaluate(const LinearPairModel& model, std::span<const PairedInstance> test_pairs,
                    const AgentFeatureTable& table);

/// Agents sorted by descending model score, ties by ascending id. Throws
/// PredictError for agents missing from the table.
std::vector<std::string> rank_agents(const LinearPairModel& model, const AgentFeatureTable& table,
                                     std::span<const std::string> agents);

/// Random agent-level split; first element trains, second tests.
std::pair<std::set<std::string>, std::set<std::string>> split_agents(std::span<const std::string> agent_ids,
                                                                     std::uint64_t seed,
                                                                     double train_fraction = 0.5);

/// Pairs whose two agents both belong to `agents`.
std::vector<PairedInstance> pairs_within(std::span<const PairedInstance> pairs, const AgentFeatureTable& table,
                                         const std::set<std::string>& agents);

}  // namespace tlab
