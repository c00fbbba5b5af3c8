#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace watchhar {

enum class DType : std::uint8_t { f32 = 0, f16 = 1 };

std::string_view dtype_name(DType dtype) noexcept;
std::size_t dtype_size(DType dtype) noexcept;

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape) noexcept;
std::string shape_string(const Shape& shape);

/// Dense row-major array holding either f32 scalars or raw binary16 bit
/// patterns. Arithmetic is only defined on f32 tensors; f16 tensors exist for
/// storage and are upcast with to_f32() before use.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<float> data);

  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, float value);
  static Tensor from_half_bits(Shape shape, std::vector<std::uint16_t> bits);
  /// Decodes little-endian payload bytes; throws ShapeError on length mismatch.
  static Tensor from_payload(DType dtype, Shape shape, std::span<const std::byte> payload);

  DType dtype() const noexcept { return dtype_; }
  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return shape_size(shape_); }
  bool empty() const noexcept { return shape_.empty() && f32_.empty() && f16_.empty(); }

  std::span<const float> values() const;
  std::span<float> values();
  std::span<const std::uint16_t> half_bits() const;

  float operator[](std::size_t i) const { return values()[i]; }
  float& operator[](std::size_t i) { return values()[i]; }

  Tensor to_f32() const;
  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  bool all_finite() const;
  std::size_t payload_size() const noexcept { return size() * dtype_size(dtype_); }
  std::vector<std::byte> payload_bytes() const;

  friend bool operator==(const Tensor& a, const Tensor& b);

 private:
  DType dtype_ = DType::f32;
  Shape shape_;
  std::vector<float> f32_;
  std::vector<std::uint16_t> f16_;
};

/// Quantizes an f32 tensor to binary16 storage. Throws OverflowError naming
/// `name` if any value rounds to infinity.
Tensor quantize_f16(const Tensor& t, std::string_view name = "tensor");

/// f32 -> f16 -> f32 round trip; shape preserved.
Tensor to_f16_roundtrip(const Tensor& t, std::string_view name = "tensor");

}  // namespace watchhar
