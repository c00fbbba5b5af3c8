#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "watchhar/archive.hpp"
#include "watchhar/models.hpp"
#include "watchhar/presets.hpp"
#include "watchhar/session.hpp"

// Deterministic stand-ins for trained weights and recorded sessions.
namespace watchhar::fixtures {

const std::vector<std::string>& class_names();
const std::vector<std::string>& context_names();
const std::string& context_of(std::size_t cls);

models::ModelConfig default_config(const Preset& p,
                                   models::FusionVariant variant = models::FusionVariant::gated);

/// Valid-shape archive with seeded random weights and batchnorm statistics.
WeightArchive random_archive(const models::ModelConfig& cfg, std::uint64_t seed);

/// Copy of `archive` whose detector tensors form an analytic energy
/// detector: it outputs ~1 whenever any channel of its (z-scored) window
/// varies, and ~0 for a window in which every channel is constant.
WeightArchive with_energy_detector(const WeightArchive& archive, const models::EventDetectorConfig& cfg);
WeightArchive energy_archive(const models::ModelConfig& cfg, std::uint64_t seed);

/// Main tone of class k, spaced across the lower 90% of the band.
double class_frequency(const Preset& p, std::size_t cls);
/// Two-tone mixture for class k; the first tone dominates.
std::vector<float> class_audio(const Preset& p, std::size_t cls, std::size_t n, std::size_t offset = 0);

struct Segment {
  double start_s = 0.0;
  double end_s = 0.0;
  std::size_t cls = 0;
};

/// IMU idles at an exactly constant pose outside the segments and carries
/// seeded noise inside them; the audio is silent outside and plays the
/// segment's class mixture inside.
LabeledSession synth_session(const Preset& p, double duration_s, const std::vector<Segment>& segments,
                             std::uint64_t seed, const std::string& participant = "p0");

/// No motion and no labels for the whole duration.
LabeledSession quiet_session(const Preset& p, double duration_s);

/// One planted high-motion segment from 10 s to 18 s in a 30 s session.
LabeledSession planted_session(const Preset& p, std::uint64_t seed, std::size_t cls = 2);

struct FixtureFile {
  std::string name;
  std::uint64_t bytes = 0;
  std::uint32_t crc32 = 0;
};

/// Writes archives, sessions and manifest.json into `dir`; returns the
/// manifest entries (every file except the manifest itself).
std::vector<FixtureFile> write_fixtures(const std::filesystem::path& dir, std::uint64_t seed, const Preset& p);

}  // namespace watchhar::fixtures
