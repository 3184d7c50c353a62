#pragma once

// Small builders shared by the unit tests.

#include <Eigen/Core>
#include <string>
#include <vector>

#include "tlab/model.hpp"

namespace tlab::testing {

inline Message msg(Sender sender, double t, std::vector<std::string> tokens) {
  Message m;
  m.sender = sender;
  m.timestamp_s = t;
  m.tokens = std::move(tokens);
  return m;
}

/// Alternating client/agent transcript of `n` messages, 60 s apart.
inline std::vector<Message> transcript(std::size_t n, const std::vector<std::string>& client_tokens = {"hi", "there"},
                                       const std::vector<std::string>& agent_tokens = {"hello", "friend"}) {
  std::vector<Message> out;
  for (std::size_t i = 0; i < n; ++i) {
    const bool client = i % 2 == 0;
    out.push_back(msg(client ? Sender::client : Sender::agent, 60.0 * static_cast<double>(i),
                      client ? client_tokens : agent_tokens));
  }
  return out;
}

inline ConversationRecord conversation(const std::string& agent, int index, ShiftKey shift = {0, 0, 0},
                                       Closure closure = Closure::closed, Rating rating = Rating::unrated,
                                       std::size_t n_messages = 4) {
  ConversationRecord r;
  r.agent_id = agent;
  r.agent_conversation_index = index;
  r.conversation_id = agent + "-" + std::to_string(index);
  r.shift = shift;
  r.messages = transcript(n_messages);
  r.closure = closure;
  r.rating = rating;
  return r;
}

inline Eigen::VectorXd vec(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace tlab::testing
