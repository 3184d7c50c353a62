#include "tlab/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "tlab/rng.hpp"

namespace tlab {

namespace {

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Probabilists' Gauss-Hermite rule by Golub-Welsch: nodes are the eigenvalues
// of the Jacobi matrix with off-diagonal sqrt(i), weights the squared first
// eigenvector components.
struct QuadratureRule {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;
};

const QuadratureRule& hermite_rule() {
  static const QuadratureRule rule = [] {
    constexpr int n = 64;
    Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
    for (int i = 1; i < n; ++i) jacobi(i, i - 1) = jacobi(i - 1, i) = std::sqrt(static_cast<double>(i));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jacobi);
    QuadratureRule r;
    r.nodes = es.eigenvalues();
    r.weights = es.eigenvectors().row(0).transpose().array().square();
    r.weights /= r.weights.sum();
    return r;
  }();
  return rule;
}

void fit_vector(Eigen::VectorXd& v, int dim, double fill, const char* name) {
  if (v.size() == 0) {
    v = Eigen::VectorXd::Constant(dim, fill);
  } else if (v.size() == 1 && dim > 1) {
    v = Eigen::VectorXd::Constant(dim, v(0));
  } else if (v.size() < dim) {
    Eigen::VectorXd padded = Eigen::VectorXd::Zero(dim);
    padded.head(v.size()) = v;
    v = padded;
  } else if (v.size() > dim) {
    throw ConfigError(std::string(name) + " has " + std::to_string(v.size()) + " entries, tendency_dim is " +
                      std::to_string(dim));
  }
}

struct ShiftCell {
  ShiftKey key;
  double quality = 0.0;                 // standardized expected congeniality - difficulty
  std::vector<std::size_t> agents;      // present agents, ascending
  std::size_t volume = 0;
};

struct Assignment {
  std::size_t shift = 0;
  Circumstance circumstance;
};

Circumstance draw_circumstance(const CircumstanceModel& m, const ShiftKey& key, Rng& rng) {
  const auto& probs = m.issue_probs[static_cast<std::size_t>(key.hour_block)];
  const auto tag = rng.categorical(probs);
  Circumstance c;
  c.issue_tag = static_cast<Issue>(tag);
  c.difficulty = m.difficulty_mean[static_cast<std::size_t>(key.hour_block)] + m.issue_difficulty[tag] +
                 m.sd(0) * rng.normal();
  c.congeniality = m.congeniality_mean[static_cast<std::size_t>(key.hour_block)] +
                   m.day_congeniality[static_cast<std::size_t>(key.day_of_week)] + m.sd(1) * rng.normal();
  return c;
}

double expected_congeniality(const CircumstanceModel& m, const ShiftKey& key) {
  return m.congeniality_mean[static_cast<std::size_t>(key.hour_block)] +
         m.day_congeniality[static_cast<std::size_t>(key.day_of_week)];
}

double expected_difficulty(const CircumstanceModel& m, int hour_block) {
  const auto h = static_cast<std::size_t>(hour_block);
  double d = m.difficulty_mean[h];
  for (std::size_t t = 0; t < kIssueCount; ++t) d += m.issue_probs[h][t] * m.issue_difficulty[t];
  return d;
}

CircumstanceVector as_vector(const Circumstance& c) { return {c.difficulty, c.congeniality}; }

std::string padded(std::size_t value, std::size_t width) {
  std::string s = std::to_string(value);
  if (s.size() < width) s.insert(0, width - s.size(), '0');
  return s;
}

// ---------------------------------------------------------------------------
// Transcript rendering

// Words are interned; rendering works on ids and converts at the end.
using WordId = std::uint32_t;

struct Vocabulary {
  std::vector<std::string> words;
  std::vector<WordId> client;  // content pseudo-words plus marker words
  std::vector<WordId> agent;
  std::vector<std::pair<WordId, double>> positive;  // by ascending |valence|
  std::vector<std::pair<WordId, double>> negative;
};

Vocabulary build_vocabulary(const ValenceLexicon& lexicon) {
  static constexpr std::array<std::string_view, 10> onset = {"ba", "ke", "lo", "mi", "nu", "po", "ra", "si", "tu", "ve"};
  static constexpr std::array<std::string_view, 6> client_coda = {"dan", "rem", "sol", "vik", "tor", "mel"};
  static constexpr std::array<std::string_view, 6> agent_coda = {"gar", "lin", "pex", "sud", "wen", "zob"};
  std::vector<std::string> client, agent;
  for (auto o : onset) {
    for (auto c : client_coda) client.push_back(std::string(o) + std::string(c));
    for (auto c : agent_coda) agent.push_back(std::string(o) + std::string(c));
  }
  const auto markers = MarkerInventory::builtin();
  for (const auto& [_, tokens] : markers.categories()) {
    for (const auto& t : tokens) {
      if (lexicon.entries().count(t)) continue;
      client.push_back(t);
      agent.push_back(t);
    }
  }
  std::vector<std::pair<std::string, double>> positive, negative;
  for (const auto& [token, val] : lexicon.entries()) {
    if (val > 0) positive.emplace_back(token, val);
    if (val < 0) negative.emplace_back(token, val);
  }
  auto by_magnitude = [](const auto& x, const auto& y) {
    return std::abs(x.second) != std::abs(y.second) ? std::abs(x.second) < std::abs(y.second) : x.first < y.first;
  };
  std::sort(positive.begin(), positive.end(), by_magnitude);
  std::sort(negative.begin(), negative.end(), by_magnitude);

  Vocabulary v;
  std::unordered_map<std::string, WordId> ids;
  auto intern = [&](const std::string& w) {
    auto [it, fresh] = ids.emplace(w, static_cast<WordId>(v.words.size()));
    if (fresh) v.words.push_back(w);
    return it->second;
  };
  auto pool = [&](std::vector<std::string>& words, std::vector<WordId>& out) {
    std::sort(words.begin(), words.end());
    words.erase(std::unique(words.begin(), words.end()), words.end());
    for (const auto& w : words) out.push_back(intern(w));
  };
  pool(client, v.client);
  pool(agent, v.agent);
  for (const auto& [w, val] : positive) v.positive.emplace_back(intern(w), val);
  for (const auto& [w, val] : negative) v.negative.emplace_back(intern(w), val);
  return v;
}

bool contains(const std::vector<WordId>& bag, WordId token) {
  return std::find(bag.begin(), bag.end(), token) != bag.end();
}

// Draws up to `count` distinct pool words absent from `exclude` and `out`.
void draw_distinct(const std::vector<WordId>& pool, std::size_t count, const std::vector<WordId>& exclude,
                   std::vector<WordId>& out, Rng& rng) {
  std::size_t attempts = 0;
  const std::size_t target = out.size() + count;
  while (out.size() < target && attempts < 50 * count + 50) {
    ++attempts;
    const WordId w = pool[rng.below(pool.size())];
    if (contains(out, w) || contains(exclude, w)) continue;
    out.push_back(w);
  }
}

// Greedy valence words moving the running sum toward `target`.
void draw_valence(const Vocabulary& vocab, double target, std::size_t max_words, std::vector<WordId>& out,
                  Rng& rng) {
  double sum = 0.0;
  std::vector<WordId> used;
  std::vector<std::pair<double, std::size_t>> cand;
  for (std::size_t k = 0; k < max_words; ++k) {
    const double remaining = target - sum;
    const auto& side = remaining > 0 ? vocab.positive : vocab.negative;
    if (side.empty()) break;
    // Best few candidates by resulting error; pick one at random for variety.
    cand.clear();
    for (std::size_t i = 0; i < side.size(); ++i) {
      if (std::abs(side[i].second) >= 2.0 * std::abs(remaining)) break;  // sorted by magnitude
      if (contains(used, side[i].first)) continue;
      cand.emplace_back(std::abs(remaining - side[i].second), i);
    }
    if (cand.empty()) break;
    const std::size_t n_best = std::min<std::size_t>(3, cand.size());
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(n_best), cand.end());
    const auto& pick = side[cand[rng.below(n_best)].second];
    used.push_back(pick.first);
    out.push_back(pick.first);
    sum += pick.second;
  }
}

std::vector<Message> render(const BehaviorLatent& target, std::size_t n_messages, const Vocabulary& vocab,
                            double alpha_norm, Rng& rng) {
  const double words_mean = target(1);
  const double speed = target(2);
  const double s = std::clamp(target(3), -0.95, 0.95);
  const double sigma = std::clamp(target(4), 0.0, 1.0);
  const double valence_target = s * std::sqrt(alpha_norm) / std::sqrt(1.0 - s * s);

  std::vector<Message> messages(n_messages);
  std::vector<WordId> client, tokens, pool;
  double t = 0.0;
  for (std::size_t i = 0; i < n_messages; ++i) {
    Message& m = messages[i];
    tokens.clear();
    if (i % 2 == 0) {
      m.sender = Sender::client;
      if (i > 0) t += 20.0 + rng.exponential(30.0);
      const auto k = static_cast<std::size_t>(std::max(2L, std::lround(7.0 + 2.0 * rng.normal())));
      draw_distinct(vocab.client, k, {}, tokens, rng);
      client = tokens;
    } else {
      m.sender = Sender::agent;
      const auto n = static_cast<std::size_t>(std::max(1L, std::lround(words_mean + rng.normal())));
      const double k = static_cast<double>(client.size());
      const auto echo = std::min<std::size_t>(
          {static_cast<std::size_t>(std::lround(sigma * std::sqrt(static_cast<double>(n) * k))), n, client.size()});
      pool = client;
      rng.shuffle(pool.begin(), pool.end());
      tokens.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(echo));
      draw_valence(vocab, valence_target, n - echo, tokens, rng);
      draw_distinct(vocab.agent, n - tokens.size(), client, tokens, rng);
      rng.shuffle(tokens.begin(), tokens.end());
      const double jitter = std::exp(0.1 * rng.normal() - 0.005);
      t += 60.0 * static_cast<double>(tokens.size()) / speed * jitter;
    }
    m.timestamp_s = t;
    m.tokens.reserve(tokens.size());
    for (WordId w : tokens) m.tokens.push_back(vocab.words[w]);
  }
  return messages;
}

}  // namespace

std::string_view to_string(AssignmentMode m) {
  return m == AssignmentMode::biased ? "biased" : "random_within_shift";
}

std::optional<AssignmentMode> parse_assignment_mode(std::string_view s) {
  if (s == "random_within_shift") return AssignmentMode::random_within_shift;
  if (s == "biased") return AssignmentMode::biased;
  return std::nullopt;
}

void validate(GeneratorConfig& c) {
  if (c.n_agents < 2) throw ConfigError("n_agents must be at least 2");
  if (c.conversations_per_agent < 1) throw ConfigError("conversations_per_agent must be positive");
  if (c.n_windows < 1 || c.n_days < 1 || c.n_hour_blocks < 1) throw ConfigError("shift grid is empty");
  if (c.n_days > kDays) throw ConfigError("n_days must be at most 7");
  if (c.n_hour_blocks > kHourBlocks) throw ConfigError("n_hour_blocks must be at most 4");
  if (c.tendency_dim < kBehaviorDims) throw ConfigError("tendency_dim must be at least 5");
  if (c.shifts_per_agent < 1) throw ConfigError("shifts_per_agent must be positive");
  if (!(c.load_factor > 0.0)) throw ConfigError("load_factor must be positive");
  if (c.behavior_noise < 0.0 || c.outcome_noise < 0.0) throw ConfigError("noise scales must be non-negative");
  if (c.rating_response_rate < 0.0 || c.rating_response_rate > 1.0)
    throw ConfigError("rating_response_rate must lie in [0, 1]");
  if (!(c.disengage_length_factor > 0.0) || c.disengage_length_factor > 1.0)
    throw ConfigError("disengage_length_factor must lie in (0, 1]");
  if ((c.circumstance_by_shift.sd.array() < 0.0).any()) throw ConfigError("circumstance sd must be non-negative");
  if (c.behavior_link.base(1) <= 0.0 || c.behavior_link.base(2) <= 0.0 || c.behavior_link.base(0) < 2.0)
    throw ConfigError("behavior_link base must keep lengths and speeds positive");

  fit_vector(c.tendency_scale, c.tendency_dim, 1.0, "tendency_scale");
  fit_vector(c.selection_loading, c.tendency_dim, 0.0, "selection_loading");
  fit_vector(c.rating.tendency_weight, c.tendency_dim, 0.0, "rating.tendency_weight");
  fit_vector(c.closure.tendency_weight, c.tendency_dim, 0.0, "closure.tendency_weight");
  if ((c.tendency_scale.array() < 0.0).any()) throw ConfigError("tendency_scale must be non-negative");

  for (auto& row : c.circumstance_by_shift.issue_probs) {
    double total = 0.0;
    for (double p : row) {
      if (p < 0.0) throw ConfigError("issue probabilities must be non-negative");
      total += p;
    }
    if (!(total > 0.0)) throw ConfigError("issue probabilities must not all be zero");
    for (double& p : row) p /= total;
  }
}

// ---------------------------------------------------------------------------

CircumstanceVector CircumstanceMixture::mean() const {
  CircumstanceVector m = CircumstanceVector::Zero();
  double total = 0.0;
  for (const auto& comp : components) {
    m += comp.weight * comp.mean;
    total += comp.weight;
  }
  return total > 0.0 ? CircumstanceVector(m / total) : m;
}

CircumstanceMixture reference_mixture(const GeneratorConfig& config, const Dataset& dataset) {
  const auto& cm = config.circumstance_by_shift;
  std::array<std::array<double, kHourBlocks>, kDays> volume{};
  for (const auto& r : dataset) {
    volume[static_cast<std::size_t>(r.shift.day_of_week)][static_cast<std::size_t>(r.shift.hour_block)] += 1.0;
  }
  const double total = dataset.empty() ? 0.0 : static_cast<double>(dataset.size());
  Eigen::Matrix2d cov = cm.sd.array().square().matrix().asDiagonal();
  CircumstanceMixture mix;
  for (int d = 0; d < config.n_days; ++d) {
    for (int h = 0; h < config.n_hour_blocks; ++h) {
      const double share = total > 0.0 ? volume[static_cast<std::size_t>(d)][static_cast<std::size_t>(h)] / total
                                       : 1.0 / (config.n_days * config.n_hour_blocks);
      if (share <= 0.0) continue;
      const ShiftKey key{0, d, h};
      for (std::size_t t = 0; t < kIssueCount; ++t) {
        const double w = share * cm.issue_probs[static_cast<std::size_t>(h)][t];
        if (w <= 0.0) continue;
        GaussianComponent comp;
        comp.weight = w;
        comp.mean = {cm.difficulty_mean[static_cast<std::size_t>(h)] + cm.issue_difficulty[t],
                     expected_congeniality(cm, key)};
        comp.cov = cov;
        mix.components.push_back(comp);
      }
    }
  }
  return mix;
}

double expected_logistic(double mean, double var) {
  if (!(var > 0.0)) return logistic(mean);
  const auto& rule = hermite_rule();
  const double sd = std::sqrt(var);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < rule.nodes.size(); ++i) acc += rule.weights(i) * logistic(mean + sd * rule.nodes(i));
  return acc;
}

double outcome_probability(const OutcomeModel& model, double outcome_noise, const Eigen::VectorXd& tendency,
                           const CircumstanceVector& c) {
  const double eta = model.intercept + model.tendency_weight.dot(tendency) + model.circumstance_weight.dot(c);
  return expected_logistic(eta, outcome_noise * outcome_noise);
}

double outcome_probability(const OutcomeModel& model, double outcome_noise, const Eigen::VectorXd& tendency,
                           const CircumstanceMixture& mixture) {
  const double base = model.intercept + model.tendency_weight.dot(tendency);
  const auto& beta = model.circumstance_weight;
  double acc = 0.0, total = 0.0;
  for (const auto& comp : mixture.components) {
    const double var = beta.dot(comp.cov * beta) + outcome_noise * outcome_noise;
    acc += comp.weight * expected_logistic(base + beta.dot(comp.mean), var);
    total += comp.weight;
  }
  return total > 0.0 ? acc / total : expected_logistic(base, outcome_noise * outcome_noise);
}

BehaviorLatent behavior_targets(const BehaviorLink& link, const BehaviorLatent& z) {
  BehaviorLatent t;
  t(0) = std::max(4.0, std::round(link.base(0) + link.scale(0) * z(0)));
  t(1) = std::max(2.0, link.base(1) + link.scale(1) * z(1));
  t(2) = link.base(2) * std::exp(link.scale(2) * z(2));
  t(3) = std::tanh(link.base(3) + link.scale(3) * z(3));
  t(4) = logistic(link.base(4) + link.scale(4) * z(4));
  return t;
}

std::size_t GroundTruth::agent(const std::string& id) const {
  auto it = agent_index.find(id);
  if (it == agent_index.end()) throw std::out_of_range("unknown agent " + id);
  return it->second;
}

void GroundTruth::rebuild_indices() {
  agent_index.clear();
  conversation_index.clear();
  for (std::size_t i = 0; i < agent_ids.size(); ++i) agent_index.emplace(agent_ids[i], i);
  for (std::size_t i = 0; i < conversation_ids.size(); ++i) conversation_index.emplace(conversation_ids[i], i);
}

// ---------------------------------------------------------------------------
// Generation

GeneratedPlatform generate(GeneratorConfig config, const ValenceLexicon& lexicon) {
  validate(config);
  const auto& cm = config.circumstance_by_shift;
  const auto n_agents = static_cast<std::size_t>(config.n_agents);
  const auto per_agent = static_cast<std::size_t>(config.conversations_per_agent);
  const int dim = config.tendency_dim;

  GeneratedPlatform out;
  GroundTruth& truth = out.truth;
  truth.config = config;

  // Tendencies.
  Rng tendency_rng(derive_seed(config.seed, "tendency"));
  truth.tendencies.resize(static_cast<Eigen::Index>(n_agents), dim);
  for (std::size_t a = 0; a < n_agents; ++a)
    for (int d = 0; d < dim; ++d)
      truth.tendencies(static_cast<Eigen::Index>(a), d) = config.tendency_scale(d) * tendency_rng.normal();
  const std::size_t id_width = std::max<std::size_t>(4, std::to_string(n_agents).size());
  for (std::size_t a = 0; a < n_agents; ++a) truth.agent_ids.push_back("a" + padded(a, id_width));

  // Shift grid in chronological order with standardized quality.
  std::vector<ShiftCell> shifts;
  for (int w = 0; w < config.n_windows; ++w)
    for (int d = 0; d < config.n_days; ++d)
      for (int h = 0; h < config.n_hour_blocks; ++h) {
        ShiftCell cell;
        cell.key = {w, d, h};
        cell.quality = expected_congeniality(cm, cell.key) - expected_difficulty(cm, h);
        shifts.push_back(cell);
      }
  {
    double mean = 0.0, sq = 0.0;
    for (const auto& s : shifts) mean += s.quality;
    mean /= static_cast<double>(shifts.size());
    for (const auto& s : shifts) sq += (s.quality - mean) * (s.quality - mean);
    const double sd = std::sqrt(sq / static_cast<double>(shifts.size()));
    for (auto& s : shifts) s.quality = sd > 1e-12 ? (s.quality - mean) / sd : 0.0;
  }

  // Shift selection: Gumbel-top-k with log-weights bias * (loading . tau) * quality.
  Rng schedule_rng(derive_seed(config.seed, "schedule"));
  const std::size_t k_shifts = std::min(static_cast<std::size_t>(config.shifts_per_agent), shifts.size());
  Eigen::VectorXd selection_score = truth.tendencies * config.selection_loading;
  std::vector<std::vector<std::size_t>> agent_shifts(n_agents);
  for (std::size_t a = 0; a < n_agents; ++a) {
    std::vector<std::pair<double, std::size_t>> keys;
    keys.reserve(shifts.size());
    for (std::size_t s = 0; s < shifts.size(); ++s) {
      const double logw = config.shift_selection_bias * selection_score(static_cast<Eigen::Index>(a)) * shifts[s].quality;
      keys.emplace_back(logw - std::log(-std::log(schedule_rng.uniform_open())), s);
    }
    std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(k_shifts), keys.end(),
                      [](const auto& x, const auto& y) { return x.first > y.first || (x.first == y.first && x.second < y.second); });
    for (std::size_t i = 0; i < k_shifts; ++i) {
      agent_shifts[a].push_back(keys[i].second);
      shifts[keys[i].second].agents.push_back(a);
    }
    std::sort(agent_shifts[a].begin(), agent_shifts[a].end());
  }
  for (auto& s : shifts) {
    std::sort(s.agents.begin(), s.agents.end());
    const double v = config.load_factor * static_cast<double>(s.agents.size()) * static_cast<double>(per_agent) /
                     static_cast<double>(k_shifts);
    s.volume = static_cast<std::size_t>(std::llround(v));
  }

  // Client arrivals and within-shift assignment.
  Rng client_rng(derive_seed(config.seed, "clients"));
  std::vector<std::vector<Assignment>> queue(n_agents);
  std::vector<double> weights;
  for (std::size_t s = 0; s < shifts.size(); ++s) {
    const auto& cell = shifts[s];
    if (cell.agents.empty()) continue;
    const double mean_cong = expected_congeniality(cm, cell.key);
    const double sd_cong = cm.sd(1) > 0.0 ? cm.sd(1) : 1.0;
    for (std::size_t i = 0; i < cell.volume; ++i) {
      Assignment asg{s, draw_circumstance(cm, cell.key, client_rng)};
      std::size_t pick = 0;
      if (config.assignment_mode == AssignmentMode::random_within_shift || config.within_shift_bias == 0.0) {
        pick = client_rng.below(cell.agents.size());
      } else {
        const double zc = (asg.circumstance.congeniality - mean_cong) / sd_cong;
        weights.assign(cell.agents.size(), 0.0);
        double top = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < cell.agents.size(); ++j) {
          weights[j] = config.within_shift_bias * selection_score(static_cast<Eigen::Index>(cell.agents[j])) * zc;
          top = std::max(top, weights[j]);
        }
        for (double& w : weights) w = std::exp(w - top);
        pick = client_rng.categorical(weights);
      }
      queue[cell.agents[pick]].push_back(asg);
    }
  }
  // Agents short of their quota receive extra clients in their last shift.
  for (std::size_t a = 0; a < n_agents; ++a) {
    const std::size_t last = agent_shifts[a].back();
    while (queue[a].size() < per_agent) queue[a].push_back({last, draw_circumstance(cm, shifts[last].key, client_rng)});
    queue[a].resize(per_agent);
  }

  // Behaviors, outcomes and transcripts.
  Rng behavior_rng(derive_seed(config.seed, "behavior"));
  Rng outcome_rng(derive_seed(config.seed, "outcome"));
  Rng render_rng(derive_seed(config.seed, "render"));
  const Vocabulary vocab = build_vocabulary(lexicon);
  const std::size_t n_conv = n_agents * per_agent;
  truth.latent_behavior.resize(static_cast<Eigen::Index>(n_conv), kBehaviorDims);
  truth.target_behavior.resize(static_cast<Eigen::Index>(n_conv), kBehaviorDims);
  out.dataset.reserve(n_conv);
  const std::size_t idx_width = std::max<std::size_t>(3, std::to_string(per_agent - 1).size());

  for (std::size_t a = 0; a < n_agents; ++a) {
    const Eigen::VectorXd tau = truth.tendencies.row(static_cast<Eigen::Index>(a)).transpose();
    const BehaviorLatent tau_b = tau.head<kBehaviorDims>();
    for (std::size_t i = 0; i < per_agent; ++i) {
      const auto& asg = queue[a][i];
      const CircumstanceVector c = as_vector(asg.circumstance);
      const auto row = static_cast<Eigen::Index>(out.dataset.size());

      BehaviorLatent noise;
      for (int d = 0; d < kBehaviorDims; ++d) noise(d) = behavior_rng.normal();
      const BehaviorLatent z = tau_b + config.interaction_coupling * c + config.behavior_noise * noise;

      const double eps_rating = outcome_rng.normal();
      const double eps_closure = outcome_rng.normal();
      const double u_rating = outcome_rng.uniform();
      const double u_closure = outcome_rng.uniform();
      const double u_response = outcome_rng.uniform();
      const auto eta = [&](const OutcomeModel& m, double eps) {
        return m.intercept + m.tendency_weight.dot(tau) + m.circumstance_weight.dot(c) + config.outcome_noise * eps;
      };
      const bool good_rating = u_rating < logistic(eta(config.rating, eps_rating));
      const bool closed = u_closure < logistic(eta(config.closure, eps_closure));
      const bool responded = u_response < config.rating_response_rate;

      BehaviorLatent target = behavior_targets(config.behavior_link, z);
      if (!closed) target(0) = std::max(2.0, std::round(target(0) * config.disengage_length_factor));
      truth.latent_behavior.row(row) = z.transpose();
      truth.target_behavior.row(row) = target.transpose();

      ConversationRecord r;
      r.agent_id = truth.agent_ids[a];
      r.conversation_id = r.agent_id + "-" + padded(i, idx_width);
      r.shift = shifts[asg.shift].key;
      r.agent_conversation_index = static_cast<int>(i);
      r.rating = responded ? (good_rating ? Rating::positive : Rating::negative) : Rating::unrated;
      r.closure = closed ? Closure::closed : Closure::disengaged;
      r.circumstance = asg.circumstance;
      r.messages = render(target, static_cast<std::size_t>(target(0)), vocab, lexicon.alpha_norm(), render_rng);
      truth.conversation_ids.push_back(r.conversation_id);
      out.dataset.push_back(std::move(r));
    }
  }

  truth.reference = reference_mixture(config, out.dataset);
  truth.rating_propensity.resize(static_cast<Eigen::Index>(n_agents));
  truth.closure_propensity.resize(static_cast<Eigen::Index>(n_agents));
  for (std::size_t a = 0; a < n_agents; ++a) {
    const Eigen::VectorXd tau = truth.tendencies.row(static_cast<Eigen::Index>(a)).transpose();
    truth.rating_propensity(static_cast<Eigen::Index>(a)) =
        outcome_probability(config.rating, config.outcome_noise, tau, truth.reference);
    truth.closure_propensity(static_cast<Eigen::Index>(a)) =
        outcome_probability(config.closure, config.outcome_noise, tau, truth.reference);
  }
  truth.rebuild_indices();
  return out;
}

// ---------------------------------------------------------------------------

MonteCarloEstimate true_allocation_effect(const GroundTruth& truth, const std::string& agent_j,
                                          const std::string& agent_k, Outcome outcome,
                                          const CircumstanceMixture& reference, std::size_t n_mc,
                                          std::uint64_t seed) {
  if (n_mc == 0) throw std::invalid_argument("n_mc must be positive");
  const auto j = static_cast<Eigen::Index>(truth.agent(agent_j));
  const auto k = static_cast<Eigen::Index>(truth.agent(agent_k));
  const auto& model = truth.config.outcome_model(outcome);
  const double eta_j = model.intercept + model.tendency_weight.dot(truth.tendencies.row(j).transpose());
  const double eta_k = model.intercept + model.tendency_weight.dot(truth.tendencies.row(k).transpose());
  if (reference.components.empty()) throw std::invalid_argument("reference distribution is empty");

  std::vector<double> w;
  for (const auto& comp : reference.components) w.push_back(comp.weight);
  std::vector<Eigen::Matrix2d> chol;
  for (const auto& comp : reference.components) chol.push_back(comp.cov.llt().matrixL());

  Rng rng(derive_seed(truth.config.seed ^ seed, "allocation-effect"));
  double mean = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < n_mc; ++i) {
    const auto comp = rng.categorical(w);
    const Eigen::Vector2d e{rng.normal(), rng.normal()};
    const CircumstanceVector c = reference.components[comp].mean + chol[comp] * e;
    const double noise = truth.config.outcome_noise * rng.normal();
    const double shared = model.circumstance_weight.dot(c) + noise;
    const double d = logistic(eta_j + shared) - logistic(eta_k + shared);
    const double delta = d - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (d - mean);
  }
  MonteCarloEstimate est;
  est.value = mean;
  est.std_error = n_mc > 1 ? std::sqrt(m2 / static_cast<double>(n_mc - 1) / static_cast<double>(n_mc)) : 0.0;
  return est;
}

// ---------------------------------------------------------------------------
// Decompositions

namespace {

struct AgentRows {
  Eigen::VectorXd tendency;
  std::vector<const ConversationRecord*> records;
};

AgentRows collect(const Dataset& dataset, const GroundTruth& truth, const std::string& agent, Outcome outcome,
                  int parity) {
  AgentRows rows;
  auto it = truth.agent_index.find(agent);
  if (it == truth.agent_index.end()) throw TruthError("agent " + agent + " has no ground truth");
  rows.tendency = truth.tendencies.row(static_cast<Eigen::Index>(it->second)).transpose();
  for (const auto& r : dataset) {
    if (r.agent_id != agent) continue;
    if (parity >= 0 && r.agent_conversation_index % 2 != parity) continue;
    if (!has_outcome(r, outcome)) continue;
    if (!r.circumstance) throw TruthError("conversation " + r.conversation_id + " has no circumstance");
    rows.records.push_back(&r);
  }
  if (rows.records.empty()) throw TruthError("agent " + agent + " has no conversations with the outcome observed");
  return rows;
}

double observed_mean(const std::vector<const ConversationRecord*>& records, Outcome outcome) {
  double s = 0.0;
  for (const auto* r : records) s += outcome_value(*r, outcome);
  return s / static_cast<double>(records.size());
}

// Posterior over circumstances given a latent behavior vector and tendency,
// with a Gaussian-mixture prior; exact per component (linear Gaussian).
class CircumstancePosterior {
 public:
  CircumstancePosterior(const CircumstanceMixture& prior, const BehaviorLoadings& gamma, double noise)
      : prior_(prior), gamma_(gamma) {
    using Mat5 = Eigen::Matrix<double, kBehaviorDims, kBehaviorDims>;
    for (const auto& comp : prior.components) {
      Cached c;
      const Mat5 s = gamma * comp.cov * gamma.transpose() + (noise * noise + 1e-9) * Mat5::Identity();
      Eigen::LLT<Mat5> llt(s);
      c.s_inv = llt.solve(Mat5::Identity());
      c.log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
      c.gain = comp.cov * gamma.transpose() * c.s_inv;
      c.post_cov = comp.cov - c.gain * gamma * comp.cov;
      c.log_weight = std::log(comp.weight);
      cache_.push_back(c);
    }
  }

  /// E[P(good outcome | tau, c)] over c | (z, tau).
  double expected_outcome(const OutcomeModel& model, double outcome_noise, const Eigen::VectorXd& tau,
                          const BehaviorLatent& z) const {
    const BehaviorLatent tau_b = tau.head<kBehaviorDims>();
    const double base = model.intercept + model.tendency_weight.dot(tau);
    const auto& beta = model.circumstance_weight;
    std::vector<double> logp(cache_.size());
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < cache_.size(); ++i) {
      const BehaviorLatent r = z - tau_b - gamma_ * prior_.components[i].mean;
      logp[i] = cache_[i].log_weight - 0.5 * r.dot(cache_[i].s_inv * r) - 0.5 * cache_[i].log_det;
      top = std::max(top, logp[i]);
    }
    double acc = 0.0, total = 0.0;
    for (std::size_t i = 0; i < cache_.size(); ++i) {
      const double w = std::exp(logp[i] - top);
      if (w < 1e-300) continue;
      const BehaviorLatent r = z - tau_b - gamma_ * prior_.components[i].mean;
      const CircumstanceVector mean = prior_.components[i].mean + cache_[i].gain * r;
      const double var = beta.dot(cache_[i].post_cov * beta) + outcome_noise * outcome_noise;
      acc += w * expected_logistic(base + beta.dot(mean), std::max(var, 0.0));
      total += w;
    }
    return acc / total;
  }

 private:
  struct Cached {
    Eigen::Matrix<double, kBehaviorDims, kBehaviorDims> s_inv;
    double log_det = 0.0;
    Eigen::Matrix<double, kCircumstanceDims, kBehaviorDims> gain;
    Eigen::Matrix2d post_cov;
    double log_weight = 0.0;
  };
  const CircumstanceMixture& prior_;
  BehaviorLoadings gamma_;
  std::vector<Cached> cache_;
};

}  // namespace

BiasDecomposition decompose_assignment_bias(const Dataset& dataset, const GroundTruth& truth,
                                            const std::string& agent_j, const std::string& agent_k,
                                            Outcome outcome) {
  const auto J = collect(dataset, truth, agent_j, outcome, -1);
  const auto K = collect(dataset, truth, agent_k, outcome, -1);
  const auto& model = truth.config.outcome_model(outcome);
  const double noise = truth.config.outcome_noise;

  double own_j = 0.0, swap_j = 0.0, var_j = 0.0;
  for (const auto* r : J.records) {
    const CircumstanceVector c = as_vector(*r->circumstance);
    const double pj = outcome_probability(model, noise, J.tendency, c);
    own_j += pj;
    swap_j += outcome_probability(model, noise, K.tendency, c);
    var_j += pj * (1.0 - pj);
  }
  double own_k = 0.0, var_k = 0.0;
  for (const auto* r : K.records) {
    const double pk = outcome_probability(model, noise, K.tendency, as_vector(*r->circumstance));
    own_k += pk;
    var_k += pk * (1.0 - pk);
  }
  const double nj = static_cast<double>(J.records.size());
  const double nk = static_cast<double>(K.records.size());

  BiasDecomposition out;
  out.tendency_term = (own_j - swap_j) / nj;
  out.bias_term = swap_j / nj - own_k / nk;
  out.naive_difference = observed_mean(J.records, outcome) - observed_mean(K.records, outcome);
  out.naive_std_error = std::sqrt(var_j / (nj * nj) + var_k / (nk * nk));
  out.n_j = J.records.size();
  out.n_k = K.records.size();
  return out;
}

BiasDecomposition decompose_interaction_bias(const Dataset& dataset, const GroundTruth& truth,
                                             const std::string& agent_j, const std::string& agent_k,
                                             Outcome outcome, BehaviorConditioning conditioning) {
  const int parity = conditioning == BehaviorConditioning::split ? 1 : -1;
  const auto J = collect(dataset, truth, agent_j, outcome, parity);
  const auto K = collect(dataset, truth, agent_k, outcome, parity);
  const auto& model = truth.config.outcome_model(outcome);
  const double noise = truth.config.outcome_noise;
  if (truth.reference.components.empty()) throw TruthError("ground truth lacks a reference distribution");

  const double nj = static_cast<double>(J.records.size());
  const double nk = static_cast<double>(K.records.size());
  BiasDecomposition out;
  out.n_j = J.records.size();
  out.n_k = K.records.size();
  out.naive_difference = observed_mean(J.records, outcome) - observed_mean(K.records, outcome);

  double var_j = 0.0, var_k = 0.0;
  for (const auto* r : J.records) {
    const double p = outcome_probability(model, noise, J.tendency, as_vector(*r->circumstance));
    var_j += p * (1.0 - p);
  }
  for (const auto* r : K.records) {
    const double p = outcome_probability(model, noise, K.tendency, as_vector(*r->circumstance));
    var_k += p * (1.0 - p);
  }
  out.naive_std_error = std::sqrt(var_j / (nj * nj) + var_k / (nk * nk));

  if (conditioning == BehaviorConditioning::split) {
    // Outcome conversations are disjoint from the behavior conversations, so
    // their circumstances are independent of the observed behavior given the
    // tendency and the conditional expectation reduces to the prior.
    const double pj = outcome_probability(model, noise, J.tendency, truth.reference);
    const double pk = outcome_probability(model, noise, K.tendency, truth.reference);
    out.tendency_term = pj - pk;
    out.bias_term = 0.0;
    return out;
  }

  const CircumstancePosterior posterior(truth.reference, truth.config.interaction_coupling,
                                        truth.config.behavior_noise);
  const auto latent = [&](const ConversationRecord* r) -> BehaviorLatent {
    auto it = truth.conversation_index.find(r->conversation_id);
    if (it == truth.conversation_index.end())
      throw TruthError("conversation " + r->conversation_id + " has no ground truth");
    return truth.latent_behavior.row(static_cast<Eigen::Index>(it->second)).transpose();
  };
  double own_j = 0.0, swap_j = 0.0, own_k = 0.0;
  for (const auto* r : J.records) {
    const BehaviorLatent z = latent(r);
    own_j += posterior.expected_outcome(model, noise, J.tendency, z);
    swap_j += posterior.expected_outcome(model, noise, K.tendency, z);
  }
  for (const auto* r : K.records) own_k += posterior.expected_outcome(model, noise, K.tendency, latent(r));
  out.tendency_term = (own_j - swap_j) / nj;
  out.bias_term = swap_j / nj - own_k / nk;
  return out;
}

}  // namespace tlab
