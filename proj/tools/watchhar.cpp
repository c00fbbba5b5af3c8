// watchhar: replay sessions through the two-stage recognizer, score event
// logs, benchmark models, and generate fixtures.
//
// Exit codes: 0 ok, 1 internal error, 2 missing input, 3 inconsistent input.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "watchhar/bench.hpp"
#include "watchhar/error.hpp"
#include "watchhar/eventlog.hpp"
#include "watchhar/fixtures.hpp"
#include "watchhar/metrics.hpp"
#include "watchhar/models.hpp"
#include "watchhar/presets.hpp"
#include "watchhar/stream.hpp"

namespace fs = std::filesystem;
using namespace watchhar;

namespace {

enum Exit { kOk = 0, kInternal = 1, kMissing = 2, kInconsistent = 3 };

struct Options {
  std::string model;
  std::string imu, wav;
  std::vector<std::string> labels;
  std::vector<std::string> logs;
  std::string preset;
  std::optional<double> theta_on, theta_off, hop_ms, smooth_s;
  std::size_t mic_warmup = 0;
  std::string out;
  std::uint64_t seed = 42;
  std::size_t iters = 100;
  std::size_t warmup = 10;
  bool json = false;
};

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw IoError(std::string("no ") + what + " given");
  if (!fs::is_regular_file(path)) throw IoError(std::string(what) + " '" + path + "' does not exist");
}

std::size_t thread_cap() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("WATCHHAR_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v < 1) throw ConfigError("");
      n = static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      throw ConfigError(std::string("WATCHHAR_THREADS must be a positive integer, got '") + env + "'");
    }
  }
  return n;
}

void emit(const std::string& out, const std::string& text) {
  if (out.empty()) {
    std::cout << text;
    return;
  }
  write_file_bytes(out, std::as_bytes(std::span(text)));
}

stream::PipelineConfig pipeline_config(const Options& o) {
  stream::PipelineConfig pc;
  if (o.theta_on) pc.theta_on = *o.theta_on;
  if (o.theta_off) pc.theta_off = *o.theta_off;
  if (o.hop_ms) pc.hop_ms = *o.hop_ms;
  if (o.smooth_s) pc.smooth_s = *o.smooth_s;
  pc.mic_warmup = o.mic_warmup;
  return pc;
}

void check_preset(const Options& o, const models::ModelConfig& cfg) {
  if (o.preset.empty()) return;
  preset(o.preset);
  if (o.preset != cfg.frontend.preset) {
    throw ConfigError("model '" + o.model + "' was built for preset " + cfg.frontend.preset + ", not " + o.preset);
  }
}

int cmd_run(const Options& o) {
  // Overrides are checked before anything is loaded.
  auto pc = pipeline_config(o);
  pc.validate();
  require_file(o.model, "model");
  require_file(o.imu, "IMU file");
  require_file(o.wav, "WAV file");
  if (!o.labels.empty()) require_file(o.labels.front(), "labels file");

  const auto model = models::HarModel::load(fs::path(o.model));
  const auto& cfg = model.config();
  check_preset(o, cfg);
  const auto base = stream::PipelineConfig::for_model(cfg);
  pc.audio_rate = base.audio_rate;
  pc.classifier_window_s = base.classifier_window_s;
  pc.validate();

  LabeledSession session;
  if (o.labels.empty()) {
    session.imu = read_imu_csv(o.imu);
    auto wav = read_wav(o.wav);
    if (wav.sample_rate != pc.audio_rate) {
      throw RateError("'" + o.wav + "' is sampled at " + std::to_string(wav.sample_rate) + " Hz, model expects " +
                      std::to_string(pc.audio_rate) + " Hz");
    }
    session.audio_rate = wav.sample_rate;
    session.audio = std::move(wav.samples);
  } else {
    session = load_session(o.imu, o.wav, o.labels.front(), pc.audio_rate, cfg.class_names);
  }

  stream::ModelBackend backend(model);
  const auto result = stream::run_session(session, backend, pc);
  EventLog log;
  log.session = session_id(o.imu);
  log.class_names = cfg.class_names;
  log.flops = models::count_flops(cfg).classifier();
  log.events = result.events;
  emit(o.out, format_event_log(log));

  std::size_t on = 0, cls = 0;
  for (const auto& e : result.events) {
    on += e.kind == stream::EventKind::gate_on;
    cls += e.kind == stream::EventKind::classifier;
  }
  std::fprintf(stderr, "%s: %zu events, %zu gate_on, %zu classifier, peak audio buffer %zu samples\n",
               log.session.c_str(), result.events.size(), on, cls, result.telemetry.max_audio_occupancy);
  return kOk;
}

int cmd_eval(const Options& o) {
  if (o.logs.empty()) throw IoError("no event log given");
  if (o.logs.size() != o.labels.size()) {
    throw ConfigError(std::to_string(o.logs.size()) + " event logs but " + std::to_string(o.labels.size()) +
                      " label files");
  }
  std::vector<EventLog> logs;
  std::vector<std::vector<Label>> labels;
  for (std::size_t i = 0; i < o.logs.size(); ++i) {
    require_file(o.logs[i], "event log");
    require_file(o.labels[i], "labels file");
    logs.push_back(read_event_log(o.logs[i]));
    labels.push_back(read_labels_csv(o.labels[i]));
    const auto id = session_id(o.labels[i]);
    if (!logs.back().session.empty() && logs.back().session != id) {
      throw ValidationError("event log '" + o.logs[i] + "' is for session '" + logs.back().session +
                            "' but labels '" + o.labels[i] + "' are for '" + id + "'");
    }
  }

  std::vector<std::string> class_names = logs.front().class_names;
  std::uint64_t flops = logs.front().flops;
  if (!o.model.empty()) {
    require_file(o.model, "model");
    const auto archive = read_archive(o.model);
    const auto cfg = models::ModelConfig::from_json(archive.config());
    class_names = cfg.class_names;
    flops = models::count_flops(cfg).classifier();
  }
  for (const auto& l : logs) {
    if (!l.class_names.empty() && l.class_names != class_names) {
      throw ValidationError("event logs disagree on the model's class list");
    }
  }
  if (class_names.empty()) throw ValidationError("event log carries no class list; pass --model");

  std::vector<metrics::SessionEval> sessions;
  for (std::size_t i = 0; i < logs.size(); ++i) {
    LabeledSession check;
    check.labels = labels[i];
    check.validate(class_names);
    sessions.push_back({logs[i].events, labels[i]});
  }
  const auto report = metrics::evaluate_sessions(sessions, class_names, flops, thread_cap());
  const std::string text = report.to_json().dump(2) + "\n";
  if (o.out.empty()) {
    std::cout << text;
    std::fprintf(stderr, "%s\n", report.summary().c_str());
  } else {
    emit(o.out, text);
    std::printf("%s\n", report.summary().c_str());
  }
  return kOk;
}

int cmd_bench(const Options& o) {
  require_file(o.model, "model");
  const auto model = models::HarModel::load(fs::path(o.model));
  check_preset(o, model.config());
  const auto report = bench_latency(model, o.iters, o.warmup, o.seed);
  emit(o.out, o.json ? report.to_json().dump(2) + "\n" : report.table());
  return kOk;
}

int cmd_fixtures(const Options& o) {
  if (o.out.empty()) throw IoError("no output directory given (--out)");
  const auto& p = preset(o.preset.empty() ? "samosa-1k" : o.preset);
  const auto files = fixtures::write_fixtures(o.out, o.seed, p);
  for (const auto& f : files) std::printf("%08x %10llu %s\n", f.crc32, static_cast<unsigned long long>(f.bytes), f.name.c_str());
  std::printf("wrote %zu files and manifest.json to %s (seed %llu)\n", files.size(), o.out.c_str(),
              static_cast<unsigned long long>(o.seed));
  return kOk;
}

int cmd_inspect(const Options& o) {
  require_file(o.model, "model");
  const auto archive = read_archive(o.model);
  const auto cfg = models::ModelConfig::from_json(archive.config());
  models::check_archive(archive, cfg);
  const auto flops = models::count_flops(cfg);
  if (o.json) {
    nlohmann::json j;
    j["config"] = archive.config();
    j["entries"] = nlohmann::json::array();
    for (const auto& e : archive.entries()) {
      j["entries"].push_back({{"name", e.name},
                              {"dtype", std::string(dtype_name(e.tensor.dtype()))},
                              {"shape", e.tensor.shape()},
                              {"bytes", e.tensor.payload_size()}});
    }
    j["payload_bytes"] = archive.payload_bytes();
    j["flops"] = {{"detector", flops.detector}, {"classifier", flops.classifier()}};
    emit(o.out, j.dump(2) + "\n");
    return kOk;
  }
  std::string text;
  char buf[256];
  std::snprintf(buf, sizeof buf, "preset      %s\nfusion      %s\nclasses     %zu\ntensors     %zu\npayload     %zu bytes\n",
                cfg.frontend.preset.c_str(), models::fusion_variant_name(cfg.fusion.variant).c_str(),
                cfg.class_names.size(), archive.entries().size(), archive.payload_bytes());
  text += buf;
  const std::pair<const char*, std::uint64_t> rows[] = {{"detector", flops.detector},
                                                        {"frontend", flops.frontend},
                                                        {"imu_encoder", flops.imu_encoder},
                                                        {"audio_encoder", flops.audio_encoder},
                                                        {"fusion", flops.fusion},
                                                        {"classifier", flops.classifier()}};
  for (const auto& [name, f] : rows) {
    std::snprintf(buf, sizeof buf, "%-14s%.3f GFLOPs\n", name, static_cast<double>(f) / 1e9);
    text += buf;
  }
  emit(o.out, text);
  return kOk;
}

int exit_code(const std::exception& e) {
  if (dynamic_cast<const IoError*>(&e)) return kMissing;
  if (dynamic_cast<const Error*>(&e)) return kInconsistent;
  return kInternal;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage IMU/audio activity recognizer: replay, evaluate, benchmark."};
  app.require_subcommand(1);
  Options o;

  auto* run = app.add_subcommand("run", "Replay a session through the pipeline and write the event log");
  run->add_option("--model", o.model, "Model archive (.whar)")->required();
  run->add_option("--imu", o.imu, "IMU CSV (t_ms,ax,ay,az,gx,gy,gz)")->required();
  run->add_option("--wav", o.wav, "PCM16 mono WAV at the preset rate")->required();
  run->add_option("--labels", o.labels, "Optional labels CSV, validated against the model's classes")
      ->expected(0, 1);
  run->add_option("--preset", o.preset, "Expected preset (samosa-1k, seminat-22k)");
  run->add_option("--theta-on", o.theta_on, "Gate-on threshold (default 0.5)");
  run->add_option("--theta-off", o.theta_off, "Gate-off threshold (default 0.5)");
  run->add_option("--hop-ms", o.hop_ms, "Hop in ms (default 20)");
  run->add_option("--smooth-s", o.smooth_s, "Moving-average span in seconds (default 2)");
  run->add_option("--mic-warmup", o.mic_warmup, "Hops after gate_on before audio is kept (default 0)");
  run->add_option("--out", o.out, "Event log path (default stdout)");

  auto* eval = app.add_subcommand("eval", "Score event logs against labels");
  eval->add_option("--log", o.logs, "Event log from `run` (repeatable)")->required();
  eval->add_option("--labels", o.labels, "Labels CSV, one per --log, same order")->required();
  eval->add_option("--model", o.model, "Model archive; overrides the class list stored in the log");
  eval->add_option("--out", o.out, "Report JSON path (default stdout)");

  auto* bench = app.add_subcommand("bench", "Time detector and classifier passes");
  bench->add_option("--model", o.model, "Model archive (.whar)")->required();
  bench->add_option("--preset", o.preset, "Expected preset");
  bench->add_option("--iters", o.iters, "Timed iterations (>= 30)")->capture_default_str();
  bench->add_option("--warmup", o.warmup, "Untimed warmup iterations (>= 5)")->capture_default_str();
  bench->add_option("--seed", o.seed, "Seed for the random input windows")->capture_default_str();
  bench->add_flag("--json", o.json, "Machine-readable output");
  bench->add_option("--out", o.out, "Output path (default stdout)");

  auto* fix = app.add_subcommand("fixtures", "Write deterministic archives and sessions");
  fix->add_option("--out", o.out, "Output directory")->required();
  fix->add_option("--seed", o.seed, "Seed")->capture_default_str();
  fix->add_option("--preset", o.preset, "Preset (default samosa-1k)");

  auto* inspect = app.add_subcommand("inspect", "Summarize a model archive");
  inspect->add_option("--model", o.model, "Model archive (.whar)")->required();
  inspect->add_flag("--json", o.json, "Machine-readable output");
  inspect->add_option("--out", o.out, "Output path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::RequiredError& e) {
    app.exit(e);
    return kMissing;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kInconsistent;
  }

  try {
    if (*run) return cmd_run(o);
    if (*eval) return cmd_eval(o);
    if (*bench) return cmd_bench(o);
    if (*fix) return cmd_fixtures(o);
    if (*inspect) return cmd_inspect(o);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "watchhar: error: %s\n", e.what());
    return exit_code(e);
  }
  return kInternal;
}
