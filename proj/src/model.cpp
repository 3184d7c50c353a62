#include "tlab/model.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include "json.hpp"

namespace tlab {

using nlohmann::json;

std::string to_string(const ShiftKey& s) {
  std::ostringstream os;
  os << 'w' << s.window_index << "-d" << s.day_of_week << "-h" << s.hour_block;
  return os.str();
}

std::string_view to_string(Sender v) { return v == Sender::agent ? "agent" : "client"; }

std::string_view to_string(Issue v) {
  switch (v) {
    case Issue::suicide: return "suicide";
    case Issue::depression: return "depression";
    case Issue::relationship: return "relationship";
    case Issue::work: return "work";
    case Issue::other: return "other";
  }
  return "other";
}

std::string_view to_string(Rating v) {
  switch (v) {
    case Rating::positive: return "positive";
    case Rating::negative: return "negative";
    case Rating::unrated: return "unrated";
  }
  return "unrated";
}

std::string_view to_string(Closure v) { return v == Closure::closed ? "closed" : "disengaged"; }

std::string_view to_string(Outcome v) { return v == Outcome::rating ? "rating" : "closure"; }

std::optional<Sender> parse_sender(std::string_view s) {
  if (s == "agent") return Sender::agent;
  if (s == "client") return Sender::client;
  return std::nullopt;
}

std::optional<Issue> parse_issue(std::string_view s) {
  for (int i = 0; i < kIssueCount; ++i) {
    if (to_string(static_cast<Issue>(i)) == s) return static_cast<Issue>(i);
  }
  return std::nullopt;
}

std::optional<Rating> parse_rating(std::string_view s) {
  if (s == "positive") return Rating::positive;
  if (s == "negative") return Rating::negative;
  if (s == "unrated") return Rating::unrated;
  return std::nullopt;
}

std::optional<Closure> parse_closure(std::string_view s) {
  if (s == "closed") return Closure::closed;
  if (s == "disengaged") return Closure::disengaged;
  return std::nullopt;
}

std::optional<Outcome> parse_outcome(std::string_view s) {
  if (s == "rating") return Outcome::rating;
  if (s == "closure") return Outcome::closure;
  return std::nullopt;
}

std::string_view to_string(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::range: return "range";
    case ViolationKind::ordering: return "ordering";
    case ViolationKind::uniqueness: return "uniqueness";
    case ViolationKind::missing_role: return "missing_role";
    case ViolationKind::missing_field: return "missing_field";
    case ViolationKind::parse: return "parse";
  }
  return "parse";
}

ValidationReport validate_dataset(const Dataset& records) {
  ValidationReport report;
  auto add = [&](std::size_t i, ViolationKind k, std::string detail) {
    report.push_back({i, k, std::move(detail)});
  };

  std::unordered_map<std::string, std::size_t> seen_ids;
  std::map<std::pair<std::string, int>, std::size_t> seen_index;

  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.shift.day_of_week < 0 || r.shift.day_of_week > 6) {
      add(i, ViolationKind::range, "day_of_week=" + std::to_string(r.shift.day_of_week) + " outside [0,6]");
    }
    if (r.shift.hour_block < 0 || r.shift.hour_block > 3) {
      add(i, ViolationKind::range, "hour_block=" + std::to_string(r.shift.hour_block) + " outside [0,3]");
    }
    if (r.shift.window_index < 0) {
      add(i, ViolationKind::range, "window_index=" + std::to_string(r.shift.window_index) + " is negative");
    }
    if (r.agent_conversation_index < 0) {
      add(i, ViolationKind::range, "agent_conversation_index is negative");
    }
    if (r.conversation_id.empty()) add(i, ViolationKind::missing_field, "empty conversation_id");
    if (r.agent_id.empty()) add(i, ViolationKind::missing_field, "empty agent_id");

    if (auto [it, inserted] = seen_ids.emplace(r.conversation_id, i); !inserted) {
      add(i, ViolationKind::uniqueness,
          "conversation_id '" + r.conversation_id + "' repeats record " + std::to_string(it->second));
    }
    if (auto [it, inserted] = seen_index.emplace(std::pair{r.agent_id, r.agent_conversation_index}, i); !inserted) {
      add(i, ViolationKind::uniqueness,
          "agent " + r.agent_id + " repeats agent_conversation_index " + std::to_string(r.agent_conversation_index));
    }

    bool any_agent = false;
    bool any_client = false;
    double last_ts = 0.0;
    for (std::size_t m = 0; m < r.messages.size(); ++m) {
      const auto& msg = r.messages[m];
      (msg.sender == Sender::agent ? any_agent : any_client) = true;
      if (!(msg.timestamp_s >= 0.0)) {
        add(i, ViolationKind::range, "message " + std::to_string(m) + " has negative timestamp");
      } else if (m > 0 && msg.timestamp_s < last_ts) {
        add(i, ViolationKind::ordering, "message " + std::to_string(m) + " timestamp decreases");
      }
      last_ts = msg.timestamp_s;
      for (const auto& tok : msg.tokens) {
        const bool lower = std::none_of(tok.begin(), tok.end(),
                                        [](unsigned char c) { return std::isupper(c) || std::isspace(c); });
        if (tok.empty() || !lower) {
          add(i, ViolationKind::range, "message " + std::to_string(m) + " has a non-normalized token");
          break;
        }
      }
    }
    if (!r.messages.empty() && (!any_agent || !any_client)) {
      add(i, ViolationKind::missing_role, any_agent ? "no client message" : "no agent message");
    }
  }
  return report;
}

std::string format_report(const ValidationReport& report, std::size_t max_lines) {
  std::ostringstream os;
  os << report.size() << " violation(s)\n";
  for (std::size_t i = 0; i < report.size() && i < max_lines; ++i) {
    const auto& v = report[i];
    os << "  record " << v.record_index << " [" << to_string(v.kind) << "] " << v.detail << '\n';
  }
  if (report.size() > max_lines) os << "  ... " << report.size() - max_lines << " more\n";
  return os.str();
}

// ---------------------------------------------------------------------------

namespace {

json record_to_json(const ConversationRecord& r) {
  json messages = json::array();
  for (const auto& m : r.messages) {
    messages.push_back({{"sender", to_string(m.sender)}, {"timestamp_s", m.timestamp_s}, {"tokens", m.tokens}});
  }
  json j = {
      {"conversation_id", r.conversation_id},
      {"agent_id", r.agent_id},
      {"shift",
       {{"window_index", r.shift.window_index},
        {"day_of_week", r.shift.day_of_week},
        {"hour_block", r.shift.hour_block}}},
      {"agent_conversation_index", r.agent_conversation_index},
      {"messages", std::move(messages)},
      {"rating", to_string(r.rating)},
      {"closure", to_string(r.closure)},
  };
  if (r.circumstance) {
    j["circumstance"] = {{"difficulty", r.circumstance->difficulty},
                         {"congeniality", r.circumstance->congeniality},
                         {"issue_tag", to_string(r.circumstance->issue_tag)}};
  }
  return j;
}

const json& field(const json& j, const char* name) {
  auto it = j.find(name);
  if (it == j.end() || it->is_null()) throw DatasetError(std::string("missing field '") + name + "'");
  return *it;
}

template <typename Parsed, typename Parser>
Parsed enum_field(const json& j, const char* name, Parser parse) {
  const auto& v = field(j, name);
  if (!v.is_string()) throw DatasetError(std::string("field '") + name + "' is not a string");
  auto parsed = parse(v.get_ref<const std::string&>());
  if (!parsed) throw DatasetError(std::string("field '") + name + "' has unknown value '" + v.get<std::string>() + "'");
  return *parsed;
}

int int_field(const json& j, const char* name) {
  const auto& v = field(j, name);
  if (!v.is_number_integer()) throw DatasetError(std::string("field '") + name + "' is not an integer");
  return v.get<int>();
}

double real_field(const json& j, const char* name) {
  const auto& v = field(j, name);
  if (!v.is_number()) throw DatasetError(std::string("field '") + name + "' is not a number");
  return v.get<double>();
}

std::string string_field(const json& j, const char* name) {
  const auto& v = field(j, name);
  if (!v.is_string()) throw DatasetError(std::string("field '") + name + "' is not a string");
  return v.get<std::string>();
}

ConversationRecord record_from_json(const json& j) {
  if (!j.is_object()) throw DatasetError("line is not a JSON object");
  ConversationRecord r;
  r.conversation_id = string_field(j, "conversation_id");
  r.agent_id = string_field(j, "agent_id");
  const auto& shift = field(j, "shift");
  r.shift.window_index = int_field(shift, "window_index");
  r.shift.day_of_week = int_field(shift, "day_of_week");
  r.shift.hour_block = int_field(shift, "hour_block");
  r.agent_conversation_index = int_field(j, "agent_conversation_index");
  const auto& messages = field(j, "messages");
  if (!messages.is_array()) throw DatasetError("field 'messages' is not an array");
  r.messages.reserve(messages.size());
  for (const auto& m : messages) {
    Message msg;
    msg.sender = enum_field<Sender>(m, "sender", parse_sender);
    msg.timestamp_s = real_field(m, "timestamp_s");
    const auto& tokens = field(m, "tokens");
    if (!tokens.is_array()) throw DatasetError("field 'tokens' is not an array");
    msg.tokens.reserve(tokens.size());
    for (const auto& t : tokens) {
      if (!t.is_string()) throw DatasetError("token is not a string");
      msg.tokens.push_back(t.get<std::string>());
    }
    r.messages.push_back(std::move(msg));
  }
  r.rating = enum_field<Rating>(j, "rating", parse_rating);
  r.closure = enum_field<Closure>(j, "closure", parse_closure);
  if (auto it = j.find("circumstance"); it != j.end() && !it->is_null()) {
    Circumstance c;
    c.difficulty = real_field(*it, "difficulty");
    c.congeniality = real_field(*it, "congeniality");
    c.issue_tag = enum_field<Issue>(*it, "issue_tag", parse_issue);
    r.circumstance = c;
  }
  return r;
}

}  // namespace

std::string to_json_line(const ConversationRecord& record) { return record_to_json(record).dump(); }

ConversationRecord from_json_line(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw DatasetError(std::string("malformed JSON: ") + e.what());
  }
  return record_from_json(j);
}

void write_jsonl(std::ostream& out, const Dataset& records) {
  for (const auto& r : records) out << to_json_line(r) << '\n';
}

void write_jsonl(const std::string& path, const Dataset& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError("cannot open '" + path + "' for writing");
  write_jsonl(out, records);
  if (!out) throw DatasetError("write to '" + path + "' failed");
}

LoadResult read_jsonl(std::istream& in) {
  LoadResult result;
  std::string line;
  std::size_t line_no = 0;
  for (; std::getline(in, line); ++line_no) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      result.records.push_back(from_json_line(line));
    } catch (const DatasetError& e) {
      const std::string what = e.what();
      const auto kind = what.rfind("missing field", 0) == 0 ? ViolationKind::missing_field : ViolationKind::parse;
      result.problems.push_back({line_no, kind, "line " + std::to_string(line_no + 1) + ": " + what});
    }
  }
  return result;
}

LoadResult read_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open '" + path + "'");
  return read_jsonl(in);
}

}  // namespace tlab
