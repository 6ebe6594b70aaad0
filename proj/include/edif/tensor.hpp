#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace edif {

enum class DType : std::uint8_t { kF32 = 0, kI64 = 1 };

std::string_view to_string(DType dtype);
DType dtype_from_string(std::string_view name);
std::size_t element_size(DType dtype);

using Shape = std::vector<std::int64_t>;

std::int64_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major tensor. Exactly one of the two buffers is populated,
// selected by dtype. i64 exists only to carry argmax/topk indices.
struct Tensor {
  DType dtype = DType::kF32;
  Shape shape;
  std::vector<float> f32;
  std::vector<std::int64_t> i64;

  static Tensor zeros(Shape shape);
  static Tensor from_f32(Shape shape, std::vector<float> data);
  static Tensor from_i64(Shape shape, std::vector<std::int64_t> data);

  std::int64_t size() const { return element_count(shape); }
  std::int64_t rank() const { return static_cast<std::int64_t>(shape.size()); }
  std::size_t byte_size() const { return static_cast<std::size_t>(size()) * element_size(dtype); }

  float& at(std::int64_t row, std::int64_t col) { return f32[static_cast<std::size_t>(row * shape[1] + col)]; }
  float at(std::int64_t row, std::int64_t col) const { return f32[static_cast<std::size_t>(row * shape[1] + col)]; }

  std::span<float> row(std::int64_t r) {
    return {f32.data() + r * shape.back(), static_cast<std::size_t>(shape.back())};
  }
  std::span<const float> row(std::int64_t r) const {
    return {f32.data() + r * shape.back(), static_cast<std::size_t>(shape.back())};
  }

  // Little-endian row-major bytes of the active buffer.
  std::vector<std::uint8_t> data_bytes() const;

  bool has_nan() const;
};

// Bitwise equality: dtype, shape and every payload bit (NaN payloads included).
bool bitwise_equal(const Tensor& a, const Tensor& b);

float max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace edif
