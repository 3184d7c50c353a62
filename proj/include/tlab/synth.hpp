#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "tlab/features.hpp"
#include "tlab/model.hpp"

namespace tlab {

inline constexpr int kBehaviorDims = 5;      // conv_length .. similarity
inline constexpr int kCircumstanceDims = 2;  // difficulty, congeniality
inline constexpr int kDays = 7;
inline constexpr int kHourBlocks = 4;

using CircumstanceVector = Eigen::Vector2d;
using BehaviorLoadings = Eigen::Matrix<double, kBehaviorDims, kCircumstanceDims>;
using BehaviorLatent = Eigen::Matrix<double, kBehaviorDims, 1>;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class AssignmentMode { random_within_shift, biased };

std::string_view to_string(AssignmentMode m);
std::optional<AssignmentMode> parse_assignment_mode(std::string_view s);

/// P(good outcome) = logistic(intercept + tendency_weight . tau + circumstance_weight . c + noise * eps).
struct OutcomeModel {
  double intercept = 0.0;
  Eigen::VectorXd tendency_weight;            // alpha, one entry per tendency dimension
  CircumstanceVector circumstance_weight{0, 0};  // beta over (difficulty, congeniality)
};

/// Shift-level circumstance distribution: difficulty and congeniality means by
/// hour block (congeniality shifted by day of week), issue mix by hour block,
/// and an issue-specific difficulty offset.
struct CircumstanceModel {
  std::array<double, kHourBlocks> difficulty_mean{0.1, 0.2, 0.0, -0.1};
  std::array<double, kHourBlocks> congeniality_mean{0.2, 0.0, -0.2, 0.0};
  std::array<double, kDays> day_congeniality{0, 0, 0, 0, 0, 0, 0};
  CircumstanceVector sd{1.0, 1.0};
  std::array<double, kIssueCount> issue_difficulty{0.8, 0.4, 0.0, -0.3, -0.2};
  std::array<std::array<double, kIssueCount>, kHourBlocks> issue_probs{{{0.26, 0.30, 0.20, 0.09, 0.15},
                                                                        {0.28, 0.28, 0.18, 0.11, 0.15},
                                                                        {0.22, 0.28, 0.22, 0.13, 0.15},
                                                                        {0.24, 0.29, 0.22, 0.10, 0.15}}};
};

/// Maps latent behavior z (standardized units) to rendered feature targets:
/// conv_length = base + scale*z, response_length = base + scale*z,
/// response_speed = base * exp(scale*z), sentiment = tanh(base + scale*z),
/// similarity = logistic(base + scale*z).
struct BehaviorLink {
  BehaviorLatent base = (BehaviorLatent() << 24.0, 9.0, 25.0, 0.15, -1.2).finished();
  BehaviorLatent scale = (BehaviorLatent() << 4.0, 2.0, 0.3, 0.25, 0.5).finished();
};

struct GeneratorConfig {
  int n_agents = 200;
  int conversations_per_agent = 80;
  int tendency_dim = kBehaviorDims;
  Eigen::VectorXd tendency_scale = Eigen::VectorXd::Ones(kBehaviorDims);

  // Shift grid: windows x days x hour blocks.
  int n_windows = 2;
  int n_days = kDays;
  int n_hour_blocks = kHourBlocks;
  int shifts_per_agent = 6;
  double load_factor = 1.5;

  /// Agents favor shifts whose expected (congeniality - difficulty) matches the
  /// sign of selection_loading . tau, with strength shift_selection_bias.
  double shift_selection_bias = 0.0;
  Eigen::VectorXd selection_loading = Eigen::VectorXd::Zero(kBehaviorDims);

  CircumstanceModel circumstance_by_shift;
  BehaviorLoadings interaction_coupling = BehaviorLoadings::Zero();  // gamma
  BehaviorLink behavior_link;
  OutcomeModel rating;
  OutcomeModel closure;

  double behavior_noise = 1.0;
  double outcome_noise = 0.5;
  double rating_response_rate = 0.29;
  /// Disengaged conversations are cut to this fraction of their target length.
  double disengage_length_factor = 1.0;

  AssignmentMode assignment_mode = AssignmentMode::random_within_shift;
  double within_shift_bias = 0.0;

  std::uint64_t seed = 1;

  const OutcomeModel& outcome_model(Outcome o) const { return o == Outcome::rating ? rating : closure; }
  OutcomeModel& outcome_model(Outcome o) { return o == Outcome::rating ? rating : closure; }
};

/// Fills zero-sized vectors with correctly sized zeros/ones and checks ranges.
/// Throws ConfigError.
void validate(GeneratorConfig& config);

// ---------------------------------------------------------------------------
// Circumstance distributions

struct GaussianComponent {
  double weight = 0.0;
  CircumstanceVector mean = CircumstanceVector::Zero();
  Eigen::Matrix2d cov = Eigen::Matrix2d::Identity();
};

/// Mixture over (difficulty, congeniality).
struct CircumstanceMixture {
  std::vector<GaussianComponent> components;

  CircumstanceVector mean() const;
};

/// Volume-weighted mixture of the shift-level distributions of `dataset`.
CircumstanceMixture reference_mixture(const GeneratorConfig& config, const Dataset& dataset);

/// E[logistic(X)] for X ~ N(mean, var), Gauss-Hermite quadrature.
double expected_logistic(double mean, double var);

/// P(good outcome | tau, c) with the outcome noise integrated out.
double outcome_probability(const OutcomeModel& model, double outcome_noise, const Eigen::VectorXd& tendency,
                           const CircumstanceVector& c);

/// P(good outcome | tau) under a circumstance mixture.
double outcome_probability(const OutcomeModel& model, double outcome_noise, const Eigen::VectorXd& tendency,
                           const CircumstanceMixture& mixture);

// ---------------------------------------------------------------------------
// Ground truth

struct GroundTruth {
  GeneratorConfig config;
  std::vector<std::string> agent_ids;
  Eigen::MatrixXd tendencies;  // agent x tendency_dim
  Eigen::VectorXd rating_propensity;
  Eigen::VectorXd closure_propensity;
  CircumstanceMixture reference;

  /// Per conversation, aligned with the generated dataset order.
  std::vector<std::string> conversation_ids;
  Eigen::MatrixXd latent_behavior;  // conversation x kBehaviorDims
  Eigen::MatrixXd target_behavior;  // conversation x kBehaviorDims, rendered targets

  std::unordered_map<std::string, std::size_t> agent_index;
  std::unordered_map<std::string, std::size_t> conversation_index;

  const Eigen::VectorXd& propensity(Outcome o) const {
    return o == Outcome::rating ? rating_propensity : closure_propensity;
  }
  std::size_t agent(const std::string& id) const;  // throws std::out_of_range
  void rebuild_indices();
};

struct GeneratedPlatform {
  Dataset dataset;
  GroundTruth truth;
};

/// Simulates a platform realizing tendency -> behavior/outcome, circumstance ->
/// behavior/outcome, and tendency -> shift-selection dependencies.
/// Throws ConfigError for invalid configs.
GeneratedPlatform generate(GeneratorConfig config, const ValenceLexicon& lexicon = ValenceLexicon::builtin());

/// Maps a latent behavior vector to feature-scale targets (before truncation).
BehaviorLatent behavior_targets(const BehaviorLink& link, const BehaviorLatent& latent);

struct MonteCarloEstimate {
  double value = 0.0;
  double std_error = 0.0;
};

/// E[Y | T = tau_J] - E[Y | T = tau_K] under `reference`, by Monte Carlo with
/// common random numbers for both agents. Throws std::out_of_range for unknown
/// agents, std::invalid_argument for n_mc == 0.
MonteCarloEstimate true_allocation_effect(const GroundTruth& truth, const std::string& agent_j,
                                          const std::string& agent_k, Outcome outcome,
                                          const CircumstanceMixture& reference, std::size_t n_mc,
                                          std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Bias decompositions

class TruthError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BiasDecomposition {
  double tendency_term = 0.0;
  /// Assignment: selection term. Interaction: circumstance term.
  double bias_term = 0.0;
  double naive_difference = 0.0;  // observed mean outcome of J minus K
  double naive_std_error = 0.0;   // model-based, from realized circumstances
  std::size_t n_j = 0;
  std::size_t n_k = 0;
};

/// Splits the naive outcome difference of J and K into a tendency term (swap
/// tendencies over J's realized circumstances) and a selection term (K's
/// tendency over J's versus K's realized circumstances). Throws TruthError when
/// records lack circumstances or agents are unknown to the truth.
BiasDecomposition decompose_assignment_bias(const Dataset& dataset, const GroundTruth& truth,
                                            const std::string& agent_j, const std::string& agent_k,
                                            Outcome outcome);

enum class BehaviorConditioning {
  same_conversations,  // behavior and outcome from the same conversations
  split,               // behavior from even-indexed, outcome from odd-indexed conversations
};

/// Splits the outcome difference conditional on observed behavior into a
/// tendency term and a circumstance term. Conditional expectations integrate
/// circumstances over their posterior given the behavior and tendency, with
/// the reference mixture as prior.
BiasDecomposition decompose_interaction_bias(const Dataset& dataset, const GroundTruth& truth,
                                             const std::string& agent_j, const std::string& agent_k,
                                             Outcome outcome,
                                             BehaviorConditioning conditioning = BehaviorConditioning::same_conversations);

}  // namespace tlab
