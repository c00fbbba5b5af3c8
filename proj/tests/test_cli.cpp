#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "watchhar/archive.hpp"
#include "watchhar/eventlog.hpp"
#include "watchhar/metrics.hpp"

namespace fs = std::filesystem;
using namespace watchhar;

namespace {

struct Result {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

const fs::path& workdir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "watchhar_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Result cli(const std::string& args) {
  const auto out = workdir() / "stdout.txt", err = workdir() / "stderr.txt";
  const std::string cmd = std::string("\"") + WATCHHAR_CLI + "\" " + args + " >\"" + out.string() + "\" 2>\"" +
                          err.string() + "\"";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

// Fixtures shared by the run/eval cases, written once.
const fs::path& fixture_dir() {
  static const fs::path dir = [] {
    const auto d = workdir() / "fx";
    const auto r = cli("fixtures --out \"" + d.string() + "\"");
    REQUIRE(r.code == 0);
    return d;
  }();
  return dir;
}

std::string session_args(const std::string& name) {
  const auto d = fixture_dir();
  return "--imu \"" + (d / (name + ".imu.csv")).string() + "\" --wav \"" + (d / (name + ".wav")).string() +
         "\" --labels \"" + (d / (name + ".labels.csv")).string() + "\"";
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("fixtures are reproducible and listed in the manifest") {
    const auto a = workdir() / "seed7a", b = workdir() / "seed7b";
    REQUIRE(cli("fixtures --out \"" + a.string() + "\" --seed 7").code == 0);
    REQUIRE(cli("fixtures --out \"" + b.string() + "\" --seed 7").code == 0);
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(a)) {
      const auto name = e.path().filename();
      CHECK_MESSAGE(read_file_bytes(a / name) == read_file_bytes(b / name), name.string());
      ++files;
    }
    const auto manifest = nlohmann::json::parse(slurp(a / "manifest.json"));
    CHECK(manifest.at("seed") == 7);
    CHECK(manifest.at("files").size() + 1 == files);
    for (const auto& f : manifest.at("files")) {
      const auto bytes = read_file_bytes(a / f.at("name").get<std::string>());
      CHECK(f.at("crc32").get<std::uint32_t>() == crc32_of(bytes));
    }
    const auto help = cli("fixtures --help");
    CHECK(help.out.find("42") != std::string::npos);
  }

  TEST_CASE("run with the energy detector brackets the planted segment") {
    const auto log = workdir() / "planted.jsonl";
    const auto r = cli("run --model \"" + (fixture_dir() / "model_energy.whar").string() + "\" " +
                       session_args("planted") + " --out \"" + log.string() + "\"");
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto parsed = read_event_log(log);
    CHECK(parsed.session == "planted");
    int on = 0, off = 0;
    for (const auto& e : parsed.events) {
      on += e.kind == stream::EventKind::gate_on;
      off += e.kind == stream::EventKind::gate_off;
    }
    CHECK(on == 1);
    CHECK(off == 1);

    const auto report_path = workdir() / "report.json";
    const auto ev = cli("eval --log \"" + log.string() + "\" --labels \"" +
                        (fixture_dir() / "planted.labels.csv").string() + "\" --out \"" + report_path.string() + "\"");
    REQUIRE_MESSAGE(ev.code == 0, ev.err);
    const auto report = nlohmann::json::parse(slurp(report_path));
    for (const auto& f : metrics::report_fields()) CHECK_MESSAGE(report.contains(f), f);
    CHECK(report.at("miss_count") == 0);
    CHECK(report.at("f1_binary").get<double>() > 0.5);
  }

  TEST_CASE("eval of a log without events misses every label") {
    EventLog log;
    log.session = "planted";
    log.class_names = {"chopping", "blender", "handwash", "toothbrush", "drilling", "sawing", "typing", "clapping"};
    const auto path = workdir() / "planted.empty.jsonl";
    write_event_log(path, log);
    const auto r = cli("eval --log \"" + path.string() + "\" --labels \"" +
                       (fixture_dir() / "planted.labels.csv").string() + "\"");
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto report = nlohmann::json::parse(r.out);
    CHECK(report.at("f1_binary") == 0.0);
    CHECK(report.at("miss_count") == 1);
  }

  TEST_CASE("exit codes") {
    const auto missing = workdir() / "nope.whar";
    const auto r = cli("run --model \"" + missing.string() + "\" " + session_args("quiet"));
    CHECK(r.code == 2);
    CHECK(r.err.find(missing.string()) != std::string::npos);

    CHECK(cli("run " + session_args("quiet")).code == 2);

    const auto bad_hop = cli("run --model \"" + (fixture_dir() / "model_energy.whar").string() + "\" " +
                             session_args("quiet") + " --hop-ms 7");
    CHECK(bad_hop.code == 3);
    CHECK(bad_hop.out.empty());

    const auto wrong_preset = cli("run --model \"" + (fixture_dir() / "model_energy.whar").string() + "\" " +
                                  session_args("quiet") + " --preset seminat-22k");
    CHECK(wrong_preset.code == 3);

    const auto mismatch = cli("eval --log \"" + (workdir() / "planted.jsonl").string() + "\" --labels \"" +
                              (fixture_dir() / "quiet.labels.csv").string() + "\"");
    CHECK(mismatch.code == 3);

    const fs::path corrupt = workdir() / "corrupt.whar";
    auto bytes = read_file_bytes(fixture_dir() / "model_energy.whar");
    bytes.resize(bytes.size() / 2);
    write_file_bytes(corrupt, bytes);
    CHECK(cli("inspect --model \"" + corrupt.string() + "\"").code == 3);
  }

  TEST_CASE("bench and inspect output") {
    const auto model = (fixture_dir() / "model_energy.whar").string();
    const auto table = cli("bench --model \"" + model + "\" --iters 30 --warmup 5");
    REQUIRE_MESSAGE(table.code == 0, table.err);
    CHECK(table.out.find("detector") != std::string::npos);
    CHECK(table.out.find("classifier") != std::string::npos);
    const auto js = cli("bench --model \"" + model + "\" --iters 100 --warmup 10 --json");
    REQUIRE(js.code == 0);
    const auto j = nlohmann::json::parse(js.out);
    CHECK(j.at("iters") == 100);
    CHECK(j.at("warmup") == 10);
    CHECK(cli("bench --model \"" + model + "\" --iters 3").code == 3);

    const auto ins = cli("inspect --model \"" + (fixture_dir() / "model_energy_f16.whar").string() + "\" --json");
    REQUIRE(ins.code == 0);
    CHECK(nlohmann::json::parse(ins.out).contains("payload_bytes"));
  }
}
