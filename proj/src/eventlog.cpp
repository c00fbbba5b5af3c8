#include "watchhar/eventlog.hpp"

#include <fstream>
#include <sstream>

#include "watchhar/error.hpp"

namespace watchhar {

using nlohmann::json;
using stream::EventKind;
using stream::PredictionEvent;

json event_to_json(const PredictionEvent& e) {
  json j;
  j["t_ms"] = e.t_ms;
  j["kind"] = stream::event_kind_name(e.kind);
  switch (e.kind) {
    case EventKind::detector:
      j["prob"] = e.prob;
      j["smoothed"] = e.smoothed;
      break;
    case EventKind::gate_on:
    case EventKind::gate_off:
      j["smoothed"] = e.smoothed;
      break;
    case EventKind::classifier:
      j["class"] = e.cls;
      j["logits"] = e.logits;
      break;
  }
  if (!e.context.empty()) j["context"] = e.context;
  return j;
}

PredictionEvent event_from_json(const json& j) {
  PredictionEvent e;
  e.t_ms = j.at("t_ms").get<double>();
  e.kind = stream::parse_event_kind(j.at("kind").get<std::string>());
  e.prob = j.value("prob", 0.0);
  e.smoothed = j.value("smoothed", 0.0);
  e.cls = j.value("class", -1);
  e.logits = j.value("logits", std::vector<float>{});
  e.context = j.value("context", std::string());
  return e;
}

std::string format_event_log(const EventLog& log) {
  const json header = {
      {"kind", "session"}, {"session", log.session}, {"class_names", log.class_names}, {"flops", log.flops}};
  std::string out = header.dump() + "\n";
  for (const auto& e : log.events) out += event_to_json(e).dump() + "\n";
  return out;
}

EventLog parse_event_log(const std::string& text) {
  EventLog log;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  double last_t = -INFINITY;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      if (j.value("kind", std::string()) == "session") {
        log.session = j.value("session", std::string());
        log.class_names = j.value("class_names", std::vector<std::string>{});
        log.flops = j.value("flops", std::uint64_t{0});
        continue;
      }
      auto e = event_from_json(j);
      if (e.t_ms < last_t) throw ValidationError("event log line " + std::to_string(n) + ": timestamps go backwards");
      last_t = e.t_ms;
      log.events.push_back(std::move(e));
    } catch (const json::exception& ex) {
      throw ParseError("event log line " + std::to_string(n) + ": " + ex.what());
    }
  }
  return log;
}

void write_event_log(const std::filesystem::path& path, const EventLog& log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << format_event_log(log);
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

EventLog read_event_log(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_event_log(ss.str());
}

std::string session_id(const std::filesystem::path& path) {
  const auto name = path.filename().string();
  return name.substr(0, name.find('.'));
}

}  // namespace watchhar
