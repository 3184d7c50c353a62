#pragma once

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tlab {

/// Temporal bin within which assignment is treated as random.
struct ShiftKey {
  int window_index = 0;  // ordinal of 3-month window
  int day_of_week = 0;   // 0..6
  int hour_block = 0;    // 0..3, six-hour blocks

  auto operator<=>(const ShiftKey&) const = default;
};

std::string to_string(const ShiftKey& shift);

struct ShiftKeyHash {
  std::size_t operator()(const ShiftKey& s) const noexcept {
    return static_cast<std::size_t>(s.window_index) * 131 + static_cast<std::size_t>(s.day_of_week) * 7 +
           static_cast<std::size_t>(s.hour_block);
  }
};

enum class Sender { agent, client };
enum class Issue { suicide, depression, relationship, work, other };
enum class Rating { positive, negative, unrated };
enum class Closure { closed, disengaged };
enum class Outcome { rating, closure };

inline constexpr int kIssueCount = 5;

struct Message {
  Sender sender = Sender::client;
  double timestamp_s = 0.0;
  std::vector<std::string> tokens;

  bool operator==(const Message&) const = default;
};

/// Latent per-conversation context; only present in synthetic data.
struct Circumstance {
  double difficulty = 0.0;
  double congeniality = 0.0;
  Issue issue_tag = Issue::other;

  bool operator==(const Circumstance&) const = default;
};

struct ConversationRecord {
  std::string conversation_id;
  std::string agent_id;
  ShiftKey shift;
  int agent_conversation_index = 0;
  std::vector<Message> messages;
  Rating rating = Rating::unrated;
  Closure closure = Closure::closed;
  std::optional<Circumstance> circumstance;

  bool operator==(const ConversationRecord&) const = default;
};

using Dataset = std::vector<ConversationRecord>;

/// Whether the conversation carries an observation of `outcome`.
inline bool has_outcome(const ConversationRecord& r, Outcome outcome) {
  return outcome == Outcome::closure || r.rating != Rating::unrated;
}

/// 1 for a good outcome (positive rating, closed); callers check has_outcome first.
inline int outcome_value(const ConversationRecord& r, Outcome outcome) {
  return outcome == Outcome::rating ? (r.rating == Rating::positive ? 1 : 0)
                                    : (r.closure == Closure::closed ? 1 : 0);
}

std::string_view to_string(Sender v);
std::string_view to_string(Issue v);
std::string_view to_string(Rating v);
std::string_view to_string(Closure v);
std::string_view to_string(Outcome v);

std::optional<Sender> parse_sender(std::string_view s);
std::optional<Issue> parse_issue(std::string_view s);
std::optional<Rating> parse_rating(std::string_view s);
std::optional<Closure> parse_closure(std::string_view s);
std::optional<Outcome> parse_outcome(std::string_view s);

// ---------------------------------------------------------------------------
// Validation

enum class ViolationKind { range, ordering, uniqueness, missing_role, missing_field, parse };

std::string_view to_string(ViolationKind kind);

struct Violation {
  std::size_t record_index = 0;
  ViolationKind kind = ViolationKind::range;
  std::string detail;

  bool operator==(const Violation&) const = default;
};

using ValidationReport = std::vector<Violation>;

/// Checks every type invariant of the records; an empty report means valid.
ValidationReport validate_dataset(const Dataset& records);

std::string format_report(const ValidationReport& report, std::size_t max_lines = 50);

// ---------------------------------------------------------------------------
// JSON Lines (de)serialization

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LoadResult {
  Dataset records;
  /// Lines that could not be turned into a record (malformed JSON, missing or
  /// mistyped fields). record_index is the 0-based line number.
  ValidationReport problems;
};

std::string to_json_line(const ConversationRecord& record);
ConversationRecord from_json_line(std::string_view line);  // throws DatasetError

void write_jsonl(std::ostream& out, const Dataset& records);
void write_jsonl(const std::string& path, const Dataset& records);
LoadResult read_jsonl(std::istream& in);
LoadResult read_jsonl(const std::string& path);  // throws DatasetError if unreadable

}  // namespace tlab
