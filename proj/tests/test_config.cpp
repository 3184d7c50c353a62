#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "tlab/config.hpp"

using namespace tlab;

namespace {

std::string data(const std::string& name) { return std::string(TLAB_DATA_DIR) + "/" + name; }

}  // namespace

TEST(Config, ShippedConfigsLoadAndRoundTrip) {
  for (const char* name : {"default.toml", "null.toml", "low_noise.toml", "sparse_rating.toml"}) {
    const auto c = load_config(data(name));
    const auto text = to_toml(c);
    EXPECT_EQ(to_toml(parse_config(text)), text) << name;
  }
}

TEST(Config, DefaultValuesAreRead) {
  const auto c = load_config(data("default.toml"));
  EXPECT_EQ(c.generator.seed, 7u);
  EXPECT_EQ(c.generator.n_agents, 500);
  EXPECT_EQ(c.generator.shift_selection_bias, 1.5);
  EXPECT_EQ(c.generator.interaction_coupling(0, 1), 1.0);
  EXPECT_EQ(c.generator.interaction_coupling(3, 0), -0.6);
  EXPECT_EQ(c.generator.disengage_length_factor, 0.7);
  EXPECT_EQ(c.generator.closure.circumstance_weight(1), 0.7);
  EXPECT_EQ(c.generator.assignment_mode, AssignmentMode::random_within_shift);
}

TEST(Config, NullConfigHasNoEffects) {
  const auto c = load_config(data("null.toml"));
  for (auto o : {Outcome::rating, Outcome::closure}) {
    EXPECT_EQ(c.generator.outcome_model(o).tendency_weight.squaredNorm(), 0.0);
    EXPECT_EQ(c.generator.outcome_model(o).circumstance_weight.squaredNorm(), 0.0);
  }
  EXPECT_EQ(c.generator.interaction_coupling.squaredNorm(), 0.0);
  EXPECT_EQ(c.generator.shift_selection_bias, 0.0);
}

TEST(Config, OverridesOnlyWhatIsGiven) {
  const auto c = parse_config("[generator]\nn_agents = 12\n[predict]\nmin_per_shift = 2\n");
  EXPECT_EQ(c.generator.n_agents, 12);
  EXPECT_EQ(c.predict.min_per_shift, 2u);
  const PipelineConfig defaults;
  EXPECT_EQ(c.generator.conversations_per_agent, defaults.generator.conversations_per_agent);
  EXPECT_EQ(c.estimate.n_resamples, defaults.estimate.n_resamples);
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(parse_config("[generator]\nn_agentz = 3\n"), ConfigError);
  EXPECT_THROW(parse_config("[nonsense]\nx = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("[generator]\nn_agents = \"many\"\n"), ConfigError);
  EXPECT_THROW(parse_config("[generator\n"), ConfigError);
  EXPECT_THROW(parse_config("[generator]\nassignment_mode = \"sideways\"\n"), ConfigError);
  EXPECT_THROW(parse_config("[generator]\ninteraction_coupling = [[1.0]]\n"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/file.toml"), ConfigError);
}

TEST(Config, EstimateListsParse) {
  const auto c = parse_config(
      "[estimate]\nbehaviors = [\"sentiment\", \"coordination\"]\noutcomes = [\"closure\"]\n"
      "estimators = [\"circle\"]\n");
  EXPECT_EQ(c.estimate.behaviors, (std::vector<Behavior>{Behavior::sentiment, Behavior::coordination}));
  EXPECT_EQ(c.estimate.outcomes, (std::vector<Outcome>{Outcome::closure}));
  EXPECT_EQ(c.estimate.estimators, (std::vector<EstimatorKind>{EstimatorKind::circle}));
  EXPECT_THROW(parse_config("[estimate]\nbehaviors = [\"charm\"]\n"), ConfigError);
}

TEST(Truth, WriteReadRoundTrip) {
  auto pc = load_config(data("default.toml"));
  pc.generator.n_agents = 8;
  pc.generator.conversations_per_agent = 12;
  const auto p = generate(pc.generator);
  const auto path = std::filesystem::temp_directory_path() / "tlab_truth_roundtrip.json";
  write_truth(path.string(), p.truth);
  const auto back = read_truth(path.string());
  std::filesystem::remove(path);
  EXPECT_EQ(back.agent_ids, p.truth.agent_ids);
  EXPECT_EQ(back.tendencies, p.truth.tendencies);
  EXPECT_EQ(back.rating_propensity, p.truth.rating_propensity);
  EXPECT_EQ(back.closure_propensity, p.truth.closure_propensity);
  EXPECT_EQ(back.latent_behavior, p.truth.latent_behavior);
  EXPECT_EQ(back.conversation_ids, p.truth.conversation_ids);
  ASSERT_EQ(back.reference.components.size(), p.truth.reference.components.size());
  EXPECT_EQ(back.agent(p.truth.agent_ids[5]), 5u);
  // the recovered truth drives the same effect computations
  const auto& j = p.truth.agent_ids[1];
  const auto& k = p.truth.agent_ids[2];
  EXPECT_EQ(true_allocation_effect(back, j, k, Outcome::closure, back.reference, 500).value,
            true_allocation_effect(p.truth, j, k, Outcome::closure, p.truth.reference, 500).value);
}

TEST(Truth, MissingOrMalformedFileThrows) {
  EXPECT_THROW(read_truth("/nonexistent/truth.json"), TruthError);
  const auto path = std::filesystem::temp_directory_path() / "tlab_truth_bad.json";
  std::ofstream(path) << "{\"agent_ids\": 3}";
  EXPECT_THROW(read_truth(path.string()), TruthError);
  std::filesystem::remove(path);
}
