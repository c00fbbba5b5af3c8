#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "watchhar/tensor.hpp"

namespace watchhar {

inline constexpr std::uint32_t kArchiveVersion = 1;
inline constexpr char kArchiveMagic[4] = {'W', 'H', 'A', 'R'};

std::uint32_t crc32_of(std::span<const std::byte> bytes) noexcept;

struct ArchiveEntry {
  std::string name;
  Tensor tensor;

  friend bool operator==(const ArchiveEntry&, const ArchiveEntry&) = default;
};

// Named, ordered tensor container plus an embedded JSON model configuration.
//
// Binary layout (little-endian):
//   "WHAR" | version u32 | entry_count u32 | config_len u32 | config bytes |
//   per entry: name_len u16 | name | dtype u8 | rank u8 | dims u32 x rank |
//              payload | crc32(payload) u32
//
// The config may carry a "tensors" array; every name listed there must be an
// entry of the archive.
class WeightArchive {
 public:
  WeightArchive() = default;
  explicit WeightArchive(std::string config_json, std::uint32_t version = kArchiveVersion);

  std::uint32_t version() const noexcept { return version_; }
  const std::string& config_text() const noexcept { return config_; }
  nlohmann::json config() const;
  void set_config(std::string config_json);
  void set_config(const nlohmann::json& config);

  /// Appends an entry; throws ValidationError on empty/duplicate names or
  /// non-finite scalars.
  void add(std::string name, Tensor tensor);
  /// Replaces the tensor of an existing entry.
  void replace(const std::string& name, Tensor tensor);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor& at(const std::string& name) const;
  const std::vector<ArchiveEntry>& entries() const noexcept { return entries_; }
  std::size_t payload_bytes() const noexcept;

  /// Re-checks every invariant; throws ValidationError.
  void validate() const;

  std::vector<std::byte> serialize() const;
  static WeightArchive deserialize(std::span<const std::byte> bytes);

  friend bool operator==(const WeightArchive& a, const WeightArchive& b) {
    return a.version_ == b.version_ && a.config_ == b.config_ && a.entries_ == b.entries_;
  }

 private:
  std::uint32_t version_ = kArchiveVersion;
  std::string config_ = "{}";
  std::vector<ArchiveEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

void write_archive(const WeightArchive& archive, const std::filesystem::path& path);
WeightArchive read_archive(const std::filesystem::path& path);

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::byte> bytes);

}  // namespace watchhar
