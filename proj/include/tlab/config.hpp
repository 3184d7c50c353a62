#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "tlab/estimators.hpp"
#include "tlab/synth.hpp"

namespace tlab {

struct EstimateSettings {
  std::vector<Behavior> behaviors{kAllBehaviors.begin(), kAllBehaviors.end()};
  std::vector<Outcome> outcomes{Outcome::rating, Outcome::closure};
  std::vector<EstimatorKind> estimators{EstimatorKind::naive, EstimatorKind::triangle, EstimatorKind::square,
                                        EstimatorKind::circle};
  std::size_t n_resamples = 1000;
  double confidence = 0.95;
  std::size_t min_agents = 10;
  std::size_t min_pairs = 10;
  std::size_t min_per_shift = 3;
  std::size_t min_exchanges = kDefaultMinExchanges;
};

struct PredictSettings {
  int past_window = 40;
  int future_window = 40;
  std::size_t min_per_shift = 3;
  std::vector<double> lambdas{1e-4, 1e-3, 1e-2, 1e-1};
  std::size_t folds = 10;
  std::size_t epochs = 20;
  double train_fraction = 0.5;
};

struct SimulateSettings {
  std::vector<int> k_values{25, 50, 75};
  std::size_t min_agents = 6;
  std::size_t min_convs = 3;
  std::size_t n_resamples = 1000;
};

/// Everything a config file can set. Sections: [generator] (with
/// [generator.circumstance], [generator.behavior_link], [generator.rating],
/// [generator.closure]), [estimate], [predict], [simulate].
struct PipelineConfig {
  GeneratorConfig generator;
  EstimateSettings estimate;
  PredictSettings predict;
  SimulateSettings simulate;
};

/// Throws ConfigError on syntax errors, unknown keys and mistyped values.
PipelineConfig parse_config(std::string_view text, std::string_view source = "config");
PipelineConfig load_config(const std::string& path);

/// Canonical TOML rendering; parse_config(to_toml(c)) reproduces c.
std::string to_toml(const PipelineConfig& config);

/// Ground truth as JSON (config, tendencies, propensities, reference mixture,
/// per-conversation latent and target behaviors).
void write_truth(std::ostream& out, const GroundTruth& truth);
void write_truth(const std::string& path, const GroundTruth& truth);
GroundTruth read_truth(const std::string& path);  // throws TruthError

}  // namespace tlab
