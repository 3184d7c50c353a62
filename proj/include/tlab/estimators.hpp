#pragma once

#include <array>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "tlab/features.hpp"
#include "tlab/model.hpp"
#include "tlab/stats.hpp"

namespace tlab {

class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Conversation -> split in {0, 1}: even agent_conversation_index is split 0,
/// odd is split 1, unless overridden by conversation id.
struct SplitAssignment {
  std::unordered_map<std::string, int> overrides;

  int split_of(const ConversationRecord& r) const;
};

/// Per-conversation behaviors aligned with the dataset.
std::vector<BehaviorVector> extract_behaviors(const Dataset& dataset, const ValenceLexicon& lexicon,
                                              unsigned threads = 1);

struct OutcomeTally {
  std::size_t good = 0;
  std::size_t n = 0;  // conversations carrying the outcome

  std::optional<double> propensity() const {
    if (n == 0) return std::nullopt;
    return static_cast<double>(good) / static_cast<double>(n);
  }
  void add(int value) {
    good += static_cast<std::size_t>(value);
    ++n;
  }
};

/// Aggregates of one agent over a set of conversations.
struct AgentSummary {
  /// Mean of each behavior over conversations where it is defined, indexed by
  /// Behavior; coordination is computed over the whole set.
  std::array<std::optional<double>, kAllBehaviors.size()> behavior;
  std::size_t n_conversations = 0;
  std::array<OutcomeTally, 2> outcome;  // indexed by Outcome
  std::map<ShiftKey, std::array<OutcomeTally, 2>> per_shift;
  std::map<ShiftKey, std::size_t> shift_conversations;

  std::optional<double> behavior_mean(Behavior b) const { return behavior[static_cast<std::size_t>(b)]; }
  const OutcomeTally& tally(Outcome o) const { return outcome[static_cast<std::size_t>(o)]; }
  std::optional<double> propensity(Outcome o) const { return tally(o).propensity(); }
};

struct AgentAggregates {
  std::string agent_id;
  AgentSummary all;
  std::optional<std::array<AgentSummary, 2>> split;  // present when splits were requested
};

struct AggregateOptions {
  std::size_t min_exchanges = kDefaultMinExchanges;
};

/// Per-agent aggregates in ascending agent id order. `behaviors` must align
/// with `dataset`.
std::vector<AgentAggregates> aggregate_agents(const Dataset& dataset, std::span<const BehaviorVector> behaviors,
                                              const std::optional<SplitAssignment>& splits,
                                              const MarkerInventory& markers, const AggregateOptions& options = {});

// ---------------------------------------------------------------------------

enum class EstimatorKind { naive, triangle, square, circle };

std::string_view to_string(EstimatorKind e);
std::optional<EstimatorKind> parse_estimator(std::string_view s);

struct EffectEstimate {
  Behavior behavior = Behavior::conv_length;
  Outcome outcome = Outcome::rating;
  EstimatorKind estimator = EstimatorKind::triangle;
  std::optional<double> tau;
  std::optional<double> ci_low;
  std::optional<double> ci_high;
  double p_raw = 1.0;
  double p_bonferroni = 1.0;
  std::size_t n_units = 0;
  /// Bootstrap statistic undefined on more than half the resamples.
  bool flagged = false;
};

struct EstimatorOptions {
  stats::BootstrapConfig bootstrap;
  std::size_t min_agents = 10;
  std::size_t min_pairs = 10;
  std::size_t min_per_shift = 3;
};

struct NaiveResult {
  double mean_good = 0.0;
  double mean_bad = 0.0;
  std::size_t n_good = 0;
  std::size_t n_bad = 0;
  stats::TestResult u_test;  // U for the good-outcome group
  double rank_biserial = 0.0;
};

/// Conversation-level comparison of a behavior between good- and bad-outcome
/// conversations. Throws EstimationError for an empty group or coordination.
NaiveResult naive_conversation_level(const Dataset& dataset, std::span<const BehaviorVector> behaviors,
                                     Behavior behavior, Outcome outcome);

/// Naive result as an estimate row: tau = rank-biserial correlation, no
/// interval, p from the U test.
EffectEstimate naive_estimate(const Dataset& dataset, std::span<const BehaviorVector> behaviors, Behavior behavior,
                              Outcome outcome);

/// Counselor-level tau between behavior and outcome propensity over all
/// conversations.
EffectEstimate tau_counselor_level(std::span<const AgentAggregates> aggregates, Behavior behavior, Outcome outcome,
                                   const EstimatorOptions& options = {});

/// Split-0 behavior against split-1 propensity.
EffectEstimate tau_split(std::span<const AgentAggregates> aggregates, Behavior behavior, Outcome outcome,
                         const EstimatorOptions& options = {});

/// Weighted per-shift outcome differences of an agent pair.
struct PairwiseShiftDiff {
  std::size_t agent_j = 0;  // indices into the aggregates
  std::size_t agent_k = 0;
  std::map<ShiftKey, std::pair<double, std::size_t>> per_shift;  // (diff J - K, weight)
  double aggregate = 0.0;
  double total_weight = 0.0;
};

/// Split selector for shift-level outcome tallies.
enum class TallySource { all, split0, split1 };

/// Pairs sharing at least one shift where both have >= min_per_shift
/// conversations carrying the outcome; J < K.
std::vector<PairwiseShiftDiff> pairwise_shift_diffs(std::span<const AgentAggregates> aggregates, Outcome outcome,
                                                    std::size_t min_per_shift,
                                                    TallySource source = TallySource::split1);

/// Pairwise-concordance tau between split-0 behavior differences and
/// shift-controlled split-1 outcome differences.
EffectEstimate tau_shift_controlled(std::span<const AgentAggregates> aggregates, Behavior behavior, Outcome outcome,
                                    const EstimatorOptions& options = {});

/// Multiplies p-values by the number of behaviors within each
/// (estimator, outcome) group.
void apply_bonferroni(std::vector<EffectEstimate>& estimates);

/// Agent scores from the shift-controlled pairwise differences: weighted least
/// squares fit of score_J - score_K to each pair's aggregate difference.
/// Absent for agents without any qualifying pair.
std::vector<std::optional<double>> shift_controlled_scores(std::span<const AgentAggregates> aggregates,
                                                           Outcome outcome, std::size_t min_per_shift,
                                                           TallySource source = TallySource::all);

/// Writes the estimate CSV: behavior, outcome, estimator, tau, ci_low, ci_high,
/// p_raw, p_bonferroni, n_units. Absent values are written as NA.
void write_estimates_csv(std::ostream& out, std::span<const EffectEstimate> estimates);
std::vector<EffectEstimate> read_estimates_csv(std::istream& in);  // throws EstimationError

}  // namespace tlab
