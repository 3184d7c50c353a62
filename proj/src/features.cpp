#include "tlab/features.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace tlab {

namespace {

// Shipped defaults; data/lexicon.tsv and data/markers.tsv carry the same text.
constexpr std::string_view kBuiltinLexicon = R"(# token	valence
amazing	2.8
appreciate	1.7
awesome	3.1
best	3.2
better	1.9
brave	2.4
calm	1.3
care	2.2
caring	2.3
comfort	1.5
encourage	2.3
excellent	2.7
fine	0.8
fun	2.3
glad	2.0
good	1.9
great	3.1
happy	2.7
healthy	1.7
helpful	1.8
hope	1.9
hopeful	2.3
kind	2.4
laugh	2.6
love	3.2
nice	1.8
ok	1.2
okay	0.9
peaceful	2.2
positive	2.6
proud	2.1
relief	2.1
relieved	1.6
safe	1.9
smile	1.5
strong	2.3
support	1.7
supportive	1.9
sure	1.3
thank	1.5
thanks	1.9
trust	2.3
welcome	2.0
wonderful	2.7
yes	1.7
afraid	-2.0
alone	-1.0
angry	-2.3
anxious	-1.0
awful	-2.0
bad	-2.5
broken	-2.0
cry	-2.1
crying	-2.1
die	-2.9
difficult	-1.5
fail	-2.5
fear	-2.2
guilty	-1.8
hard	-0.4
hate	-2.7
hopeless	-2.0
hurt	-2.4
kill	-3.7
lonely	-1.5
lost	-1.3
pain	-2.3
problem	-1.7
sad	-2.1
scared	-1.9
shame	-2.1
sick	-1.9
sorry	-0.3
stress	-1.8
stressed	-1.4
suicide	-3.5
terrible	-2.1
tired	-1.9
ugly	-2.3
upset	-1.6
worried	-1.2
worry	-1.9
worthless	-1.9
)";

constexpr std::string_view kBuiltinMarkers = R"(# category	token
article	a
article	an
article	the
auxiliary_verb	am
auxiliary_verb	is
auxiliary_verb	are
auxiliary_verb	was
auxiliary_verb	were
auxiliary_verb	be
auxiliary_verb	been
auxiliary_verb	have
auxiliary_verb	has
auxiliary_verb	had
auxiliary_verb	do
auxiliary_verb	does
auxiliary_verb	did
auxiliary_verb	will
auxiliary_verb	would
auxiliary_verb	should
auxiliary_verb	can
auxiliary_verb	could
auxiliary_verb	might
conjunction	and
conjunction	but
conjunction	or
conjunction	so
conjunction	because
conjunction	if
conjunction	although
adverb	very
adverb	just
adverb	really
adverb	too
adverb	also
adverb	quite
impersonal_pronoun	it
impersonal_pronoun	this
impersonal_pronoun	that
impersonal_pronoun	something
impersonal_pronoun	anything
impersonal_pronoun	everything
negation	not
negation	no
negation	never
negation	nothing
personal_pronoun	i
personal_pronoun	me
personal_pronoun	my
personal_pronoun	you
personal_pronoun	your
personal_pronoun	we
personal_pronoun	they
personal_pronoun	them
preposition	in
preposition	on
preposition	at
preposition	to
preposition	for
preposition	with
preposition	about
preposition	from
preposition	of
quantifier	all
quantifier	some
quantifier	many
quantifier	few
quantifier	more
quantifier	most
quantifier	any
quantifier	much
)";

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FeatureError("cannot open '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

/// Splits `line` at the first tab; returns false for blank or comment lines.
bool split_tab(std::string_view line, std::string_view& key, std::string_view& value) {
  while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.remove_suffix(1);
  if (line.empty() || line.front() == '#') return false;
  const auto tab = line.find('\t');
  if (tab == std::string_view::npos) throw FeatureError("expected a tab-separated pair: '" + std::string(line) + "'");
  key = line.substr(0, tab);
  value = line.substr(tab + 1);
  return true;
}

template <typename Fn>
void for_each_line(std::string_view text, Fn fn) {
  while (!text.empty()) {
    const auto nl = text.find('\n');
    fn(text.substr(0, nl));
    if (nl == std::string_view::npos) break;
    text.remove_prefix(nl + 1);
  }
}

std::size_t shape_key(const std::string& w) {
  return static_cast<unsigned char>(w[0]) * 16 + std::min<std::size_t>(w.size(), 15);
}

/// Sorted bag of token views.
std::vector<std::string_view> bag(std::span<const std::string> tokens) {
  std::vector<std::string_view> v(tokens.begin(), tokens.end());
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace

std::string_view to_string(Behavior b) {
  switch (b) {
    case Behavior::conv_length: return "conv_length";
    case Behavior::response_length: return "response_length";
    case Behavior::response_speed: return "response_speed";
    case Behavior::sentiment: return "sentiment";
    case Behavior::similarity: return "similarity";
    case Behavior::coordination: return "coordination";
  }
  return "conv_length";
}

std::optional<Behavior> parse_behavior(std::string_view s) {
  for (auto b : kAllBehaviors) {
    if (to_string(b) == s) return b;
  }
  return std::nullopt;
}

std::optional<double> behavior_value(const BehaviorVector& v, Behavior b) {
  switch (b) {
    case Behavior::conv_length: return v.conv_length;
    case Behavior::response_length: return v.response_length;
    case Behavior::response_speed: return v.response_speed;
    case Behavior::sentiment: return v.sentiment;
    case Behavior::similarity: return v.similarity;
    case Behavior::coordination: return std::nullopt;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------

// Transcripts are lowercase, so inventory files are folded to match.
static std::string lowercase(std::string_view s) {
  std::string out(s);
  for (auto& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return out;
}

ValenceLexicon::ValenceLexicon(std::unordered_map<std::string, double> valences, double alpha_norm)
    : valences_(std::move(valences)), alpha_norm_(alpha_norm) {
  if (valences_.empty()) throw FeatureError("lexicon is empty");
  if (!(alpha_norm_ > 0.0)) throw FeatureError("lexicon normalization constant must be positive");
  for (const auto& [token, v] : valences_) {
    if (!std::isfinite(v) || v < -4.0 || v > 4.0) throw FeatureError("valence of '" + token + "' outside [-4,4]");
  }
}

ValenceLexicon ValenceLexicon::parse(std::string_view text, double alpha_norm) {
  std::unordered_map<std::string, double> valences;
  for_each_line(text, [&](std::string_view line) {
    std::string_view key, value;
    if (!split_tab(line, key, value)) return;
    try {
      valences[lowercase(key)] = std::stod(std::string(value));
    } catch (const std::exception&) {
      throw FeatureError("bad valence for '" + std::string(key) + "'");
    }
  });
  return ValenceLexicon(std::move(valences), alpha_norm);
}

ValenceLexicon ValenceLexicon::load(const std::string& path, double alpha_norm) {
  return parse(read_file(path), alpha_norm);
}

ValenceLexicon ValenceLexicon::builtin() { return parse(kBuiltinLexicon); }

double ValenceLexicon::valence(const std::string& token) const {
  auto it = valences_.find(token);
  return it == valences_.end() ? 0.0 : it->second;
}

MarkerInventory::MarkerInventory(std::map<std::string, std::set<std::string>> categories)
    : categories_(std::move(categories)) {
  if (categories_.empty()) throw FeatureError("marker inventory is empty");
  if (categories_.size() > 64) throw FeatureError("marker inventory supports at most 64 categories");
  std::uint64_t bit = 1;
  for (const auto& [name, words] : categories_) {
    for (const auto& w : words) {
      token_masks_[w] |= bit;
      if (!w.empty()) shapes_.set(shape_key(w));
    }
    bit <<= 1;
  }
}

MarkerInventory MarkerInventory::parse(std::string_view text) {
  std::map<std::string, std::set<std::string>> categories;
  for_each_line(text, [&](std::string_view line) {
    std::string_view key, value;
    if (!split_tab(line, key, value)) return;
    categories[std::string(key)].insert(lowercase(value));
  });
  return MarkerInventory(std::move(categories));
}

MarkerInventory MarkerInventory::load(const std::string& path) { return parse(read_file(path)); }

MarkerInventory MarkerInventory::builtin() { return parse(kBuiltinMarkers); }

bool MarkerInventory::exhibits(const Message& m, const std::string& category) const {
  const auto& words = categories_.at(category);
  return std::any_of(m.tokens.begin(), m.tokens.end(), [&](const std::string& t) { return words.contains(t); });
}

std::uint64_t MarkerInventory::category_mask(const Message& m) const {
  std::uint64_t mask = 0;
  for (const auto& t : m.tokens) {
    if (t.empty() || !shapes_.test(shape_key(t))) continue;
    if (auto it = token_masks_.find(t); it != token_masks_.end()) mask |= it->second;
  }
  return mask;
}

// ---------------------------------------------------------------------------

double compound(const Message& message, const ValenceLexicon& lexicon) {
  double s = 0.0;
  for (const auto& t : message.tokens) s += lexicon.valence(t);
  if (s == 0.0) return 0.0;
  return s / std::sqrt(s * s + lexicon.alpha_norm());
}

double cosine_similarity(std::span<const std::string> a, std::span<const std::string> b) {
  if (a.empty() || b.empty()) return 0.0;
  const auto ba = bag(a);
  const auto bb = bag(b);
  auto sq_norm = [](const std::vector<std::string_view>& v) {
    double s = 0.0;
    for (std::size_t i = 0; i < v.size();) {
      std::size_t j = i + 1;
      while (j < v.size() && v[j] == v[i]) ++j;
      const double tf = static_cast<double>(j - i);
      s += tf * tf;
      i = j;
    }
    return s;
  };
  double dot = 0.0;
  std::size_t i = 0, j = 0;
  while (i < ba.size() && j < bb.size()) {
    if (ba[i] < bb[j]) {
      ++i;
    } else if (bb[j] < ba[i]) {
      ++j;
    } else {
      std::size_t i2 = i + 1, j2 = j + 1;
      while (i2 < ba.size() && ba[i2] == ba[i]) ++i2;
      while (j2 < bb.size() && bb[j2] == bb[j]) ++j2;
      dot += static_cast<double>(i2 - i) * static_cast<double>(j2 - j);
      i = i2;
      j = j2;
    }
  }
  return dot / std::sqrt(sq_norm(ba) * sq_norm(bb));
}

BehaviorVector behavior_vector(const ConversationRecord& conversation, const ValenceLexicon& lexicon) {
  const auto& msgs = conversation.messages;
  std::size_t n_agent = 0, n_client = 0;
  double agent_tokens = 0.0, sentiment_sum = 0.0;
  double timed_tokens = 0.0, latency_s = 0.0;
  double similarity_sum = 0.0;
  std::size_t n_similarity = 0;

  for (std::size_t i = 0; i < msgs.size(); ++i) {
    const auto& m = msgs[i];
    if (m.sender == Sender::client) {
      ++n_client;
      continue;
    }
    ++n_agent;
    agent_tokens += static_cast<double>(m.tokens.size());
    sentiment_sum += compound(m, lexicon);
    if (i > 0 && msgs[i - 1].sender == Sender::client) {
      const auto& prev = msgs[i - 1];
      latency_s += m.timestamp_s - prev.timestamp_s;
      timed_tokens += static_cast<double>(m.tokens.size());
      similarity_sum += cosine_similarity(m.tokens, prev.tokens);
      ++n_similarity;
    }
  }
  if (n_agent == 0 || n_client == 0) {
    throw FeatureError("conversation " + conversation.conversation_id + " lacks an agent or client message");
  }

  BehaviorVector v;
  v.conv_length = static_cast<double>(msgs.size());
  v.response_length = agent_tokens / static_cast<double>(n_agent);
  if (latency_s > 0.0) v.response_speed = timed_tokens / (latency_s / 60.0);
  v.sentiment = sentiment_sum / static_cast<double>(n_agent);
  v.similarity = n_similarity > 0 ? similarity_sum / static_cast<double>(n_similarity) : 0.0;
  return v;
}

std::optional<double> coordination(std::span<const ConversationRecord* const> agent_conversations,
                                   const MarkerInventory& markers, std::size_t min_exchanges) {
  const std::size_t n_categories = markers.categories().size();
  std::vector<std::size_t> agent_uses(n_categories), client_uses(n_categories), echoed(n_categories);
  std::size_t exchanges = 0;

  for (const auto* conv : agent_conversations) {
    const auto& msgs = conv->messages;
    for (std::size_t i = 1; i < msgs.size(); ++i) {
      if (msgs[i].sender != Sender::agent || msgs[i - 1].sender != Sender::client) continue;
      ++exchanges;
      const auto agent = markers.category_mask(msgs[i]);
      const auto client = markers.category_mask(msgs[i - 1]);
      for (std::size_t c = 0; c < n_categories; ++c) {
        const std::uint64_t bit = std::uint64_t{1} << c;
        agent_uses[c] += (agent & bit) != 0;
        client_uses[c] += (client & bit) != 0;
        echoed[c] += (agent & client & bit) != 0;
      }
    }
  }
  if (exchanges == 0) return std::nullopt;

  // C_m = P(agent uses m | client used m) - P(agent uses m)
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < n_categories; ++c) {
    if (client_uses[c] == 0 || client_uses[c] < min_exchanges) continue;
    const double conditional = static_cast<double>(echoed[c]) / static_cast<double>(client_uses[c]);
    const double base = static_cast<double>(agent_uses[c]) / static_cast<double>(exchanges);
    sum += conditional - base;
    ++used;
  }
  if (used == 0) return std::nullopt;
  return sum / static_cast<double>(used);
}

std::optional<double> coordination(std::span<const ConversationRecord> agent_conversations,
                                   const MarkerInventory& markers, std::size_t min_exchanges) {
  std::vector<const ConversationRecord*> ptrs;
  ptrs.reserve(agent_conversations.size());
  for (const auto& c : agent_conversations) ptrs.push_back(&c);
  return coordination(std::span<const ConversationRecord* const>(ptrs), markers, min_exchanges);
}

}  // namespace tlab
