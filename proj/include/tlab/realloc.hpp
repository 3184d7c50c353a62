#pragma once

#include <functional>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "tlab/features.hpp"
#include "tlab/model.hpp"
#include "tlab/predict.hpp"
#include "tlab/stats.hpp"
#include "tlab/synth.hpp"

namespace tlab {

class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One agent's future conversations in a shift.
struct AgentShiftOutcome {
  std::string agent_id;
  std::size_t good = 0;
  std::size_t n = 0;
  double score = 0.0;  // ranker score; higher is better
};

struct ShiftScenario {
  ShiftKey shift;
  std::vector<AgentShiftOutcome> agents;  // qualifying agents in rank order
  double realized = 0.0;
  std::vector<double> counterfactual;  // one per k value
};

/// Ranker score of an agent for a shift; higher ranks first. Receives the
/// agent's future tallies in that shift (used only by the oracle ranker).
using Ranker = std::function<double(const std::string& agent_id, const ShiftKey& shift,
                                    const AgentShiftOutcome& future)>;

struct SimulationOptions {
  std::vector<int> k_values{25, 50, 75};
  std::size_t min_agents = 6;
  std::size_t min_convs = 3;
  int past_window = 40;
  int future_window = 40;
  stats::BootstrapConfig bootstrap;
};

struct KSummary {
  int k = 0;
  double macro_counterfactual = 0.0;
  double macro_realized = 0.0;
  double mean_difference = 0.0;
  double fraction_improved = 0.0;
  stats::TestResult wilcoxon;
  double p_bonferroni = 1.0;
  std::optional<double> diff_ci_low;  // bootstrap over shifts
  std::optional<double> diff_ci_high;
};

struct SimulationReport {
  std::vector<ShiftScenario> shifts;
  std::vector<KSummary> summary;
};

/// Number of top-ranked agents kept at k percent of n: ceil(k*n/100), at least 1.
std::size_t top_count(int k, std::size_t n);

/// Re-allocates every qualifying shift's conversations to the ranker's top k%
/// agents and compares pooled outcomes with the realized ones. Future =
/// conversations with index in [past_window, past_window + future_window).
/// `agents` restricts the evaluation population. Throws SimulationError when
/// no shift qualifies.
SimulationReport simulate(const Dataset& dataset, Outcome outcome, const Ranker& ranker,
                          const SimulationOptions& options = {},
                          const std::optional<std::set<std::string>>& agents = std::nullopt);

/// Oracle mode for synthetic data. Same qualification and ranking as
/// simulate(), but outcomes are replaced by their expectation under the true
/// outcome model on each conversation's realized circumstance. Realized is
/// the mean over the shift's conversations of P(good | owner's tendency);
/// the counterfactual at k reassigns those conversations uniformly to the top
/// agents. Throws SimulationError for records without circumstances or agents
/// unknown to the truth.
SimulationReport simulate_model_based(const Dataset& dataset, const GroundTruth& truth, Outcome outcome,
                                      const Ranker& ranker, const SimulationOptions& options = {},
                                      const std::optional<std::set<std::string>>& agents = std::nullopt);

/// Ranks by within-shift empirical future proportion.
Ranker oracle_ranker();

/// Ranks by fixed per-agent scores (e.g. true propensities); unknown agents
/// rank last.
Ranker score_ranker(std::unordered_map<std::string, double> scores);

/// Seeded random scores, independent of the data.
Ranker random_ranker(std::uint64_t seed);

/// Features for ranking an agent in a shift: past conversations plus future
/// conversations taken in other shifts.
struct ShiftFeatureSource {
  const Dataset* dataset = nullptr;
  std::span<const BehaviorVector> behaviors;
  const MarkerInventory* markers = nullptr;
  WindowOptions window;
};

/// Scores agents with a trained model on features that exclude the shift
/// being re-allocated. Column means of `table` impute undefined values.
Ranker tendency_ranker(const LinearPairModel& model, const AgentFeatureTable& table, Outcome outcome,
                       FeatureSet feature_set, const ShiftFeatureSource& source);

/// Ranks by outcome propensity over past conversations plus future
/// conversations in other shifts.
Ranker past_outcome_ranker(const Dataset& dataset, Outcome outcome, const WindowOptions& window);

/// simulate() with the past-outcome ranker.
SimulationReport baseline_past_outcome(const Dataset& dataset, Outcome outcome, const SimulationOptions& options = {},
                                       const std::optional<std::set<std::string>>& agents = std::nullopt);

}  // namespace tlab
