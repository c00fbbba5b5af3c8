#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "watchhar/stream.hpp"

// Line-delimited JSON event log. The first record names the session and the
// model's classes ({"kind":"session","session":...,"class_names":[...],
// "flops":...}); every later record is one event:
//   {"t_ms":..., "kind":"detector", "prob":..., "smoothed":...}
//   {"t_ms":..., "kind":"gate_on"|"gate_off", "smoothed":...}
//   {"t_ms":..., "kind":"classifier", "class":..., "logits":[...]}
namespace watchhar {

struct EventLog {
  std::string session;
  std::vector<std::string> class_names;
  std::uint64_t flops = 0;
  std::vector<stream::PredictionEvent> events;
};

nlohmann::json event_to_json(const stream::PredictionEvent& e);
stream::PredictionEvent event_from_json(const nlohmann::json& j);

std::string format_event_log(const EventLog& log);
EventLog parse_event_log(const std::string& text);

void write_event_log(const std::filesystem::path& path, const EventLog& log);
EventLog read_event_log(const std::filesystem::path& path);

/// Session id from a session file name: the part before the first '.'.
std::string session_id(const std::filesystem::path& path);

}  // namespace watchhar
