#pragma once

#include <array>
#include <bitset>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tlab/model.hpp"

namespace tlab {

/// Behavioral measurements of one conversation. response_speed is absent
/// when the agent's total reply latency is zero.
struct BehaviorVector {
  double conv_length = 0.0;
  double response_length = 0.0;
  std::optional<double> response_speed;
  double sentiment = 0.0;
  double similarity = 0.0;

  bool operator==(const BehaviorVector&) const = default;
};

/// Per-conversation behaviors plus the agent-level coordination score.
enum class Behavior { conv_length, response_length, response_speed, sentiment, similarity, coordination };

inline constexpr std::array kConversationBehaviors = {Behavior::conv_length, Behavior::response_length,
                                                      Behavior::response_speed, Behavior::sentiment,
                                                      Behavior::similarity};
inline constexpr std::array kAllBehaviors = {Behavior::conv_length, Behavior::response_length,
                                             Behavior::response_speed, Behavior::sentiment,
                                             Behavior::similarity, Behavior::coordination};

std::string_view to_string(Behavior b);
std::optional<Behavior> parse_behavior(std::string_view s);

/// Value of a conversation-level behavior; coordination is never stored here.
std::optional<double> behavior_value(const BehaviorVector& v, Behavior b);

class FeatureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Token valences in [-4, 4] with the compound normalization constant.
class ValenceLexicon {
 public:
  ValenceLexicon() = default;
  explicit ValenceLexicon(std::unordered_map<std::string, double> valences, double alpha_norm = 15.0);

  /// Parses `token<TAB>value` lines; '#' starts a comment.
  static ValenceLexicon parse(std::string_view text, double alpha_norm = 15.0);
  static ValenceLexicon load(const std::string& path, double alpha_norm = 15.0);
  static ValenceLexicon builtin();

  double valence(const std::string& token) const;
  double alpha_norm() const { return alpha_norm_; }
  const std::unordered_map<std::string, double>& entries() const { return valences_; }

 private:
  std::unordered_map<std::string, double> valences_;
  double alpha_norm_ = 15.0;
};

/// Named function-word categories used by the coordination measure.
class MarkerInventory {
 public:
  MarkerInventory() = default;
  explicit MarkerInventory(std::map<std::string, std::set<std::string>> categories);

  /// Parses `category<TAB>token` lines.
  static MarkerInventory parse(std::string_view text);
  static MarkerInventory load(const std::string& path);
  static MarkerInventory builtin();

  const std::map<std::string, std::set<std::string>>& categories() const { return categories_; }
  bool exhibits(const Message& m, const std::string& category) const;

  /// Bit i set when the message uses a token of the i-th category (map order).
  std::uint64_t category_mask(const Message& m) const;

 private:
  std::map<std::string, std::set<std::string>> categories_;
  std::unordered_map<std::string, std::uint64_t> token_masks_;
  std::bitset<256 * 16> shapes_;  // (first char, length) of marker tokens; cheap rejection before hashing
};

/// Valence sum S over tokens, normalized to S / sqrt(S^2 + alpha_norm).
double compound(const Message& message, const ValenceLexicon& lexicon);

/// Raw term-frequency cosine between two token bags; 0 if either is empty.
double cosine_similarity(std::span<const std::string> a, std::span<const std::string> b);

/// Requires at least one agent and one client message (throws FeatureError).
BehaviorVector behavior_vector(const ConversationRecord& conversation, const ValenceLexicon& lexicon);

inline constexpr std::size_t kDefaultMinExchanges = 10;

/// Agent-level linguistic coordination over exchanges (client message
/// immediately followed by an agent message). Absent when no marker category
/// has at least `min_exchanges` conditioning events.
std::optional<double> coordination(std::span<const ConversationRecord* const> agent_conversations,
                                   const MarkerInventory& markers,
                                   std::size_t min_exchanges = kDefaultMinExchanges);

std::optional<double> coordination(std::span<const ConversationRecord> agent_conversations,
                                   const MarkerInventory& markers,
                                   std::size_t min_exchanges = kDefaultMinExchanges);

}  // namespace tlab
