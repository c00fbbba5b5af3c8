#pragma once

#include <cstdint>

namespace watchhar {

// IEEE-754 binary16 conversion, round-to-nearest-even. Values too large for
// binary16 map to +/-inf; callers that must reject them check is_half_inf.
std::uint16_t float_to_half_bits(float value) noexcept;
float half_bits_to_float(std::uint16_t bits) noexcept;

inline bool is_half_inf(std::uint16_t bits) noexcept {
  return (bits & 0x7fffu) == 0x7c00u;
}

inline constexpr float kHalfMax = 65504.0f;

}  // namespace watchhar
