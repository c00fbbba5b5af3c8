#include "watchhar/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>
#include <sstream>

#include "watchhar/error.hpp"
#include "watchhar/half.hpp"

namespace watchhar {

static_assert(std::endian::native == std::endian::little,
              "payload encoding assumes a little-endian host");

std::string_view dtype_name(DType dtype) noexcept {
  return dtype == DType::f16 ? "f16" : "f32";
}

std::size_t dtype_size(DType dtype) noexcept { return dtype == DType::f16 ? 2 : 4; }

std::size_t shape_size(const Shape& shape) noexcept {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void check_extents(const Shape& shape) {
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), f32_(std::move(data)) {
  check_extents(shape_);
  if (shape_size(shape_) != f32_.size()) {
    throw ShapeError("shape " + shape_string(shape_) + " needs " + std::to_string(shape_size(shape_)) +
                     " scalars, got " + std::to_string(f32_.size()));
  }
}

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0f); }

Tensor Tensor::filled(Shape shape, float value) {
  const auto n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<float>(n, value));
}

Tensor Tensor::from_half_bits(Shape shape, std::vector<std::uint16_t> bits) {
  check_extents(shape);
  if (shape_size(shape) != bits.size()) {
    throw ShapeError("shape " + shape_string(shape) + " needs " + std::to_string(shape_size(shape)) +
                     " scalars, got " + std::to_string(bits.size()));
  }
  Tensor t;
  t.dtype_ = DType::f16;
  t.shape_ = std::move(shape);
  t.f16_ = std::move(bits);
  return t;
}

Tensor Tensor::from_payload(DType dtype, Shape shape, std::span<const std::byte> payload) {
  const auto n = shape_size(shape);
  if (payload.size() != n * dtype_size(dtype)) {
    throw ShapeError("payload of " + std::to_string(payload.size()) + " bytes does not match " +
                     std::string(dtype_name(dtype)) + shape_string(shape));
  }
  if (dtype == DType::f16) {
    std::vector<std::uint16_t> bits(n);
    std::memcpy(bits.data(), payload.data(), payload.size());
    return from_half_bits(std::move(shape), std::move(bits));
  }
  std::vector<float> data(n);
  std::memcpy(data.data(), payload.data(), payload.size());
  return Tensor(std::move(shape), std::move(data));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_string(shape_));
  }
  return shape_[axis];
}

std::span<const float> Tensor::values() const {
  if (dtype_ != DType::f32) throw ShapeError("f32 view requested on an f16 tensor");
  return f32_;
}

std::span<float> Tensor::values() {
  if (dtype_ != DType::f32) throw ShapeError("f32 view requested on an f16 tensor");
  return f32_;
}

std::span<const std::uint16_t> Tensor::half_bits() const {
  if (dtype_ != DType::f16) throw ShapeError("f16 view requested on an f32 tensor");
  return f16_;
}

Tensor Tensor::to_f32() const {
  if (dtype_ == DType::f32) return *this;
  std::vector<float> data(f16_.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = half_bits_to_float(f16_[i]);
  return Tensor(shape_, std::move(data));
}

Tensor Tensor::reshaped(Shape shape) const& {
  Tensor copy = *this;
  return std::move(copy).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
  check_extents(shape);
  if (shape_size(shape) != size()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  shape_ = std::move(shape);
  return std::move(*this);
}

bool Tensor::all_finite() const {
  if (dtype_ == DType::f16) {
    for (auto b : f16_) {
      if ((b & 0x7c00u) == 0x7c00u) return false;
    }
    return true;
  }
  for (float v : f32_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::vector<std::byte> Tensor::payload_bytes() const {
  std::vector<std::byte> out(payload_size());
  if (out.empty()) return out;
  if (dtype_ == DType::f16) {
    std::memcpy(out.data(), f16_.data(), out.size());
  } else {
    std::memcpy(out.data(), f32_.data(), out.size());
  }
  return out;
}

bool operator==(const Tensor& a, const Tensor& b) {
  if (a.dtype_ != b.dtype_ || a.shape_ != b.shape_) return false;
  if (a.dtype_ == DType::f16) return a.f16_ == b.f16_;
  return a.f32_.size() == b.f32_.size() &&
         std::memcmp(a.f32_.data(), b.f32_.data(), a.f32_.size() * sizeof(float)) == 0;
}

Tensor quantize_f16(const Tensor& t, std::string_view name) {
  if (t.dtype() == DType::f16) return t;
  const auto values = t.values();
  std::vector<std::uint16_t> bits(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    bits[i] = float_to_half_bits(values[i]);
    if (is_half_inf(bits[i]) && std::isfinite(values[i])) {
      throw OverflowError("tensor '" + std::string(name) + "' holds " + std::to_string(values[i]) +
                          " at index " + std::to_string(i) + ", beyond the f16 range");
    }
  }
  return Tensor::from_half_bits(t.shape(), std::move(bits));
}

Tensor to_f16_roundtrip(const Tensor& t, std::string_view name) {
  return quantize_f16(t, name).to_f32();
}

}  // namespace watchhar
