#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "watchhar/archive.hpp"
#include "watchhar/bench.hpp"
#include "watchhar/error.hpp"
#include "watchhar/eventlog.hpp"
#include "watchhar/fixtures.hpp"
#include "watchhar/metrics.hpp"
#include "watchhar/rng.hpp"
#include "watchhar/session.hpp"

using namespace watchhar;
using namespace watchhar::metrics;
using stream::EventKind;
using stream::PredictionEvent;

namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "watchhar_unit" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

double f1_from_counts(double tp, double fp, double fn) {
  const double d = 2 * tp + fp + fn;
  return d == 0 ? 0.0 : 2 * tp / d;
}

double weighted_f1_oracle(const std::vector<int>& pred, const std::vector<int>& truth) {
  std::set<int> classes(truth.begin(), truth.end());
  double total = 0;
  for (int c : classes) {
    double tp = 0, fp = 0, fn = 0, support = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (truth[i] == c) ++support;
      if (pred[i] == c && truth[i] == c) ++tp;
      if (pred[i] == c && truth[i] != c) ++fp;
      if (pred[i] != c && truth[i] == c) ++fn;
    }
    total += support * f1_from_counts(tp, fp, fn);
  }
  return truth.empty() ? 0.0 : total / static_cast<double>(truth.size());
}

PredictionEvent ev(double t, EventKind k, int cls = -1) {
  PredictionEvent e;
  e.t_ms = t;
  e.kind = k;
  e.cls = cls;
  if (k == EventKind::classifier) e.logits = {0.25f, 0.75f};
  if (k == EventKind::detector) e.prob = 0.5;
  return e;
}

void write_stereo_wav(const fs::path& path) {
  std::ofstream f(path, std::ios::binary);
  auto u32 = [&](std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
  auto u16 = [&](std::uint16_t v) { f.write(reinterpret_cast<const char*>(&v), 2); };
  f.write("RIFF", 4);
  u32(36 + 8);
  f.write("WAVEfmt ", 8);
  u32(16);
  u16(1);
  u16(2);
  u32(1000);
  u32(4000);
  u16(4);
  u16(16);
  f.write("data", 4);
  u32(8);
  for (int i = 0; i < 4; ++i) u16(0);
}

}  // namespace

TEST_SUITE("eval") {
  TEST_CASE("binary f1 examples") {
    const std::vector<bool> a = {true, false, true, true};
    CHECK(binary_f1(a, a) == 1.0);
    CHECK(binary_f1(std::vector<bool>(4, false), a) == 0.0);
    std::vector<bool> pred(12, true), truth(12, true);
    pred[10] = pred[11] = false;  // FN = 2
    truth[8] = truth[9] = false;  // FP = 2
    const auto c = binary_counts(pred, truth);
    CHECK(c.tp == 8);
    CHECK(c.precision() == doctest::Approx(0.8));
    CHECK(c.recall() == doctest::Approx(0.8));
    CHECK(c.f1() == doctest::Approx(0.8));
    CHECK_THROWS_AS(binary_f1({true}, {true, false}), ShapeError);
  }

  TEST_CASE("weighted f1 examples") {
    const std::vector<int> perfect = {0, 1, 2, 2};
    CHECK(weighted_f1(perfect, perfect) == 1.0);
    // Supports {3, 1}; class 1 never predicted.
    const std::vector<int> truth = {0, 0, 0, 1}, pred = {0, 0, 0, 0};
    CHECK(weighted_f1(pred, truth) == doctest::Approx(0.75 * f1_from_counts(3, 1, 0)));
    const std::vector<int> t2 = {0, 0, 0, 1}, p2 = {0, 0, 0, 2};
    CHECK(weighted_f1(p2, t2) == doctest::Approx(0.75));
  }

  TEST_CASE("metrics agree with brute force on random instances") {
    Rng rng(99);
    for (int trial = 0; trial < 1000; ++trial) {
      const std::size_t n = 1 + rng.below(60);
      const int k = 2 + static_cast<int>(rng.below(6));
      std::vector<int> pred(n), truth(n);
      std::vector<bool> bp(n), bt(n);
      std::vector<std::string> ctx(n);
      for (std::size_t i = 0; i < n; ++i) {
        truth[i] = static_cast<int>(rng.below(k));
        pred[i] = rng.uniform() < 0.6 ? truth[i] : static_cast<int>(rng.below(k));
        bp[i] = rng.below(2);
        bt[i] = rng.below(2);
        ctx[i] = "c" + std::to_string(rng.below(3));
      }
      REQUIRE(std::fabs(weighted_f1(pred, truth) - weighted_f1_oracle(pred, truth)) <= 1e-12);

      double tp = 0, fp = 0, fn = 0;
      for (std::size_t i = 0; i < n; ++i) {
        tp += bp[i] && bt[i];
        fp += bp[i] && !bt[i];
        fn += !bp[i] && bt[i];
      }
      REQUIRE(std::fabs(binary_f1(bp, bt) - f1_from_counts(tp, fp, fn)) <= 1e-12);

      std::map<std::string, std::pair<double, double>> hits;
      for (std::size_t i = 0; i < n; ++i) {
        hits[ctx[i]].first += pred[i] == truth[i];
        hits[ctx[i]].second += 1;
      }
      double mean = 0, correct = 0;
      for (const auto& [name, h] : hits) {
        mean += h.first / h.second;
        correct += h.first;
      }
      mean /= static_cast<double>(hits.size());
      const auto ca = context_accuracy(pred, truth, ctx);
      REQUIRE(std::fabs(ca.mean - mean) <= 1e-12);
      REQUIRE(std::fabs(ca.pooled - correct / static_cast<double>(n)) <= 1e-12);
      for (const auto& [name, h] : hits) REQUIRE(std::fabs(ca.per_context.at(name) - h.first / h.second) <= 1e-12);

      const auto cm = confusion_matrix(pred, truth, static_cast<std::size_t>(k));
      std::uint64_t trace = 0;
      for (int r = 0; r < k; ++r) {
        std::uint64_t row = 0, support = 0;
        for (int c = 0; c < k; ++c) {
          std::uint64_t cell = 0;
          for (std::size_t i = 0; i < n; ++i) cell += truth[i] == r && pred[i] == c;
          REQUIRE(cm[r][c] == cell);
          row += cm[r][c];
        }
        for (int t : truth) support += t == r;
        REQUIRE(row == support);
        trace += cm[r][r];
      }
      REQUIRE(std::fabs(static_cast<double>(trace) / n - ca.pooled) <= 1e-12);
    }
  }

  TEST_CASE("context accuracy is unweighted across contexts") {
    std::vector<int> pred, truth;
    std::vector<std::string> ctx;
    for (int i = 0; i < 10; ++i) {
      pred.push_back(1);
      truth.push_back(1);
      ctx.push_back("A");
    }
    for (int i = 0; i < 1000; ++i) {
      pred.push_back(i % 2);
      truth.push_back(0);
      ctx.push_back("B");
    }
    const auto r = context_accuracy(pred, truth, ctx);
    CHECK(r.mean == doctest::Approx(0.75));
    CHECK(r.pooled == doctest::Approx(510.0 / 1010.0));
    const std::vector<int> one = {1, 0, 1};
    const std::vector<std::string> single(3, "k");
    CHECK(context_accuracy(one, std::vector<int>{1, 1, 1}, single).mean == doctest::Approx(2.0 / 3.0));
    const std::vector<std::string> expected = {"k", "absent"};
    CHECK(context_accuracy(one, one, single, expected).skipped == std::vector<std::string>{"absent"});
    CHECK_THROWS_AS(confusion_matrix(std::vector<int>{3}, std::vector<int>{0}, 3), DomainError);
  }

  TEST_CASE("latency conventions") {
    const std::vector<Label> labels = {{1000, 2000, "a", ""}, {5000, 6000, "a", ""}};
    const std::vector<PredictionEvent> at_start = {ev(1000, EventKind::gate_on), ev(2000, EventKind::gate_off)};
    const auto r = onset_offset_latency(at_start, labels);
    CHECK(*r.onset_s == 0.0);
    CHECK(*r.offset_s == 0.0);
    CHECK(r.detected == 1);
    CHECK(r.miss_count == 1);
    CHECK(onset_offset_latency({}, labels).miss_count == 2);
    CHECK_FALSE(onset_offset_latency({}, labels).onset_s);

    auto stats = summarize_latency({});
    CHECK(stats.iters == 0);
    std::vector<double> s;
    for (int i = 1; i <= 100; ++i) s.push_back(i);
    stats = summarize_latency(s);
    CHECK(stats.mean_ms == doctest::Approx(50.5));
    CHECK(stats.p50_ms == doctest::Approx(50.5));
    CHECK(stats.p95_ms == doctest::Approx(95.05));
  }

  TEST_CASE("evaluate perfect and empty logs") {
    const std::vector<std::string> classes = {"a", "b"};
    const std::vector<Label> labels = {{100, 200, "b", "k"}};
    std::vector<PredictionEvent> perfect;
    for (double t = 0; t <= 300; t += 20) {
      perfect.push_back(ev(t, EventKind::detector));
      if (t == 120) perfect.push_back(ev(t, EventKind::gate_on));
      if (t > 120 && t <= 200) perfect.push_back(ev(t, EventKind::classifier, 1));
      if (t == 220) perfect.push_back(ev(t, EventKind::gate_off));
    }
    const auto good = evaluate(perfect, labels, classes);
    CHECK(good.f1_binary == 1.0);
    CHECK(good.f1_weighted == 1.0);
    CHECK(good.context_accuracy.mean == 1.0);
    CHECK(good.classified == 4);

    const auto none = evaluate({}, labels, classes);
    CHECK(none.f1_binary == 0.0);
    CHECK(none.latency.miss_count == labels.size());

    const auto j = good.to_json();
    for (const auto& f : report_fields()) CHECK_MESSAGE(j.contains(f), f);
  }

  TEST_CASE("pooled evaluation does not depend on the thread count") {
    std::vector<std::vector<PredictionEvent>> logs;
    std::vector<std::vector<Label>> labels;
    Rng rng(2);
    for (int s = 0; s < 6; ++s) {
      std::vector<PredictionEvent> log;
      bool on = false;
      for (double t = 0; t < 20000; t += 20) {
        log.push_back(ev(t, EventKind::detector));
        if (rng.uniform() < 0.01) {
          on = !on;
          log.push_back(ev(t, on ? EventKind::gate_on : EventKind::gate_off));
        }
        if (on) log.push_back(ev(t, EventKind::classifier, static_cast<int>(rng.below(8))));
      }
      logs.push_back(log);
      labels.push_back({{3000, 9000, fixtures::class_names()[s], fixtures::context_of(s)},
                        {12000, 15000, fixtures::class_names()[s + 1], fixtures::context_of(s + 1)}});
    }
    std::vector<SessionEval> sessions;
    for (int s = 0; s < 6; ++s) sessions.push_back({logs[s], labels[s]});
    const auto one = evaluate_sessions(sessions, fixtures::class_names(), 0, 1).to_json();
    const auto four = evaluate_sessions(sessions, fixtures::class_names(), 0, 4).to_json();
    CHECK(one == four);
  }

  TEST_CASE("session files round trip") {
    const auto dir = scratch("session");
    const auto& p = preset("samosa-1k");
    const auto s = fixtures::synth_session(p, 12.0, {{2.0, 5.0, 1}, {7.0, 9.0, 4}}, 3);
    save_session(s, dir / "s.imu.csv", dir / "s.wav", dir / "s.labels.csv");
    const auto back = load_session(dir / "s.imu.csv", dir / "s.wav", dir / "s.labels.csv", 1000.0,
                                   fixtures::class_names());
    REQUIRE(back.imu.size() == s.imu.size());
    CHECK(back.imu.size() == 600);
    CHECK(back.audio.size() == 12000);
    for (std::size_t i = 0; i < s.imu.size(); ++i) {
      REQUIRE(back.imu[i].t_ms == s.imu[i].t_ms);
      REQUIRE(back.imu[i].v == s.imu[i].v);
    }
    for (std::size_t i = 0; i < s.audio.size(); ++i) REQUIRE(std::fabs(back.audio[i] - s.audio[i]) <= 1.0f / 32768);
    REQUIRE(back.labels.size() == 2);
    CHECK(back.labels[1].cls == fixtures::class_names()[4]);
    CHECK(back.labels[1].context == fixtures::context_of(4));
    CHECK_THROWS_AS(load_session(dir / "s.imu.csv", dir / "s.wav", dir / "s.labels.csv", 22050.0), RateError);
  }

  TEST_CASE("session file errors") {
    const auto dir = scratch("session_err");
    write_stereo_wav(dir / "stereo.wav");
    CHECK_THROWS_AS(read_wav(dir / "stereo.wav"), FormatError);
    CHECK_THROWS_AS(read_wav(dir / "missing.wav"), IoError);

    write_labels_csv(dir / "overlap.labels.csv", {{0, 2000, "blender", "kitchen"}, {1500, 3000, "typing", "misc"}});
    LabeledSession s;
    s.labels = read_labels_csv(dir / "overlap.labels.csv");
    CHECK_THROWS_AS(s.validate(), ValidationError);
    s.labels = {{0, 1000, "juggling", "misc"}};
    CHECK_THROWS_AS(s.validate(fixtures::class_names()), ValidationError);

    {
      std::ofstream f(dir / "bad.imu.csv");
      f << "t_ms,ax,ay,az,gx,gy,gz\n0,1,2,3,4,5,6\n20,1,2,x,4,5,6\n";
    }
    try {
      read_imu_csv(dir / "bad.imu.csv");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("bad.imu.csv:3:") != std::string::npos);
    }
  }

  TEST_CASE("event log round trip") {
    EventLog log;
    log.session = "planted";
    log.class_names = {"a", "b"};
    log.flops = 1234;
    auto d = ev(0, EventKind::detector);
    d.prob = 0.125;
    d.smoothed = 0.0625;
    auto on = ev(20, EventKind::gate_on);
    on.smoothed = 0.5;
    log.events = {d, on, ev(40, EventKind::classifier, 1), ev(60, EventKind::gate_off)};
    const auto back = parse_event_log(format_event_log(log));
    CHECK(back.session == log.session);
    CHECK(back.class_names == log.class_names);
    CHECK(back.flops == log.flops);
    REQUIRE(back.events.size() == 4);
    CHECK(back.events[0].prob == 0.125);
    CHECK(back.events[1].smoothed == 0.5);
    CHECK(back.events[2].cls == 1);
    CHECK(back.events[2].logits == std::vector<float>{0.25f, 0.75f});
    CHECK(back.events[3].kind == EventKind::gate_off);

    log.events = {ev(40, EventKind::detector), ev(20, EventKind::detector)};
    CHECK_THROWS_AS(parse_event_log(format_event_log(log)), ValidationError);
    CHECK(session_id("runs/planted.imu.csv") == "planted");
  }

  TEST_CASE("fixtures are deterministic and self-describing") {
    const auto a = scratch("fx_a"), b = scratch("fx_b");
    const auto& p = preset("samosa-1k");
    const auto files = fixtures::write_fixtures(a, 7, p);
    fixtures::write_fixtures(b, 7, p);
    for (const auto& f : files) {
      const auto ba = read_file_bytes(a / f.name), bb = read_file_bytes(b / f.name);
      CHECK_MESSAGE(ba == bb, f.name);
      CHECK(f.bytes == ba.size());
      CHECK(f.crc32 == crc32_of(ba));
    }
    std::set<std::string> listed;
    for (const auto& f : files) listed.insert(f.name);
    for (const auto& entry : fs::directory_iterator(a)) {
      const auto name = entry.path().filename().string();
      if (name != "manifest.json") CHECK_MESSAGE(listed.count(name), name);
    }
    const auto manifest = nlohmann::json::parse(std::ifstream(a / "manifest.json"));
    CHECK(manifest.at("seed") == 7);
    CHECK(manifest.at("files").size() == files.size());
  }

  TEST_CASE("class audio peaks at the class frequency") {
    for (const auto* name : {"samosa-1k", "seminat-22k"}) {
      const auto& p = preset(name);
      for (std::size_t k = 0; k < 8; ++k) {
        const auto x = fixtures::class_audio(p, k, static_cast<std::size_t>(p.audio_rate));
        const Tensor power = dsp::power_stft(Tensor({x.size()}, x), p.stft);
        const std::size_t nb = p.stft.n_bins();
        std::vector<double> mean(nb, 0.0);
        for (std::size_t f = 0; f < power.dim(0); ++f) {
          for (std::size_t b = 0; b < nb; ++b) mean[b] += power[f * nb + b];
        }
        const auto peak = static_cast<double>(std::max_element(mean.begin(), mean.end()) - mean.begin());
        const double want = fixtures::class_frequency(p, k) * static_cast<double>(p.stft.n_fft) / p.audio_rate;
        CHECK(std::fabs(peak - want) <= 1.0);
      }
    }
  }

  TEST_CASE("bench report structure") {
    const auto model = models::HarModel::load(fixtures::random_archive(fixtures::default_config(preset("samosa-1k")), 1));
    const auto a = bench_latency(model, 30, 5, 1);
    const auto b = bench_latency(model, 30, 5, 1);
    CHECK(a.iters == 30);
    CHECK(a.to_json().at("iters") == 30);
    CHECK(a.classifier.mean_ms >= a.detector.mean_ms);
    CHECK(std::fabs(a.classifier.mean_ms - b.classifier.mean_ms) < 0.5 * std::max(a.classifier.mean_ms, b.classifier.mean_ms));
    const auto table = a.table();
    CHECK(table.find("detector") != std::string::npos);
    CHECK(table.find("classifier") != std::string::npos);
    char gflops[32];
    std::snprintf(gflops, sizeof gflops, "%.3f", static_cast<double>(a.flops.classifier()) / 1e9);
    CHECK(table.find(gflops) != std::string::npos);
    CHECK_THROWS_AS(bench_latency(model, 10, 5), ConfigError);
  }
}
