#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsrd/fusion.hpp"

namespace tsrd {

//! Newline-delimited JSON records exchanged between computation nodes and the
//! fusion center. Every record carries schema_version; payload shape depends
//! on kind:
//!   support_report    {"support": [sorted 0-based indices]}
//!   ci_report         {"intervals": [{"coordinate", "lower", "upper"}...],
//!                      "intercept": {...}, "beta": [...], "sigma": ...,
//!                      "replicate_failures": int}
//!   broadcast_support {"support": [...]}
//!   done              {}
inline constexpr int kMessageSchemaVersion = 1;

enum class MessageKind { support_report, ci_report, broadcast_support, done };

inline std::string to_string(MessageKind k) {
  switch (k) {
    case MessageKind::support_report: return "support_report";
    case MessageKind::ci_report: return "ci_report";
    case MessageKind::broadcast_support: return "broadcast_support";
    case MessageKind::done: return "done";
  }
  return "unknown";
}

inline MessageKind message_kind_from_string(const std::string& s) {
  if (s == "support_report") return MessageKind::support_report;
  if (s == "ci_report") return MessageKind::ci_report;
  if (s == "broadcast_support") return MessageKind::broadcast_support;
  if (s == "done") return MessageKind::done;
  throw std::invalid_argument("unknown message kind: " + s);
}

struct NodeMessage {
  MessageKind kind = MessageKind::done;
  int partition_id = -1;
  nlohmann::json payload = nlohmann::json::object();

  std::string serialize() const {
    nlohmann::json j;
    j["schema_version"] = kMessageSchemaVersion;
    j["kind"] = to_string(kind);
    j["partition_id"] = partition_id;
    j["payload"] = payload;
    return j.dump();  // single line; the wire framing appends '\n'
  }

  static NodeMessage parse(const std::string& line) {
    const nlohmann::json j = nlohmann::json::parse(line);
    if (!j.contains("schema_version"))
      throw std::invalid_argument("NodeMessage: missing schema_version");
    if (j.at("schema_version").get<int>() != kMessageSchemaVersion)
      throw std::invalid_argument("NodeMessage: unsupported schema_version");
    NodeMessage m;
    m.kind = message_kind_from_string(j.at("kind").get<std::string>());
    m.partition_id = j.at("partition_id").get<int>();
    m.payload = j.value("payload", nlohmann::json::object());
    return m;
  }
};

inline nlohmann::json intervals_to_payload(const std::vector<Interval>& cis,
                                           const std::vector<int>& support) {
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t k = 0; k < cis.size(); ++k)
    arr.push_back({{"coordinate", support[k]}, {"lower", cis[k].lower}, {"upper", cis[k].upper}});
  return arr;
}

inline std::vector<Interval> intervals_from_payload(const nlohmann::json& arr) {
  std::vector<Interval> out;
  for (const auto& e : arr) out.emplace_back(e.at("lower").get<double>(), e.at("upper").get<double>());
  return out;
}

}  // namespace tsrd
