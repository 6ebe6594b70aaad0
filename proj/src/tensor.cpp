#include "edif/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

#include "edif/error.hpp"

namespace edif {

static_assert(std::endian::native == std::endian::little,
              "wire encodings assume a little-endian host");

std::string_view to_string(DType dtype) { return dtype == DType::kF32 ? "f32" : "i64"; }

DType dtype_from_string(std::string_view name) {
  if (name == "f32") return DType::kF32;
  if (name == "i64") return DType::kI64;
  throw Error(ErrorCode::kMalformed, "unknown dtype '" + std::string(name) + "'");
}

std::size_t element_size(DType dtype) { return dtype == DType::kF32 ? 4 : 8; }

std::int64_t element_count(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor Tensor::zeros(Shape shape) {
  Tensor t;
  t.f32.assign(static_cast<std::size_t>(element_count(shape)), 0.0f);
  t.shape = std::move(shape);
  return t;
}

Tensor Tensor::from_f32(Shape shape, std::vector<float> data) {
  Tensor t;
  t.shape = std::move(shape);
  t.f32 = std::move(data);
  return t;
}

Tensor Tensor::from_i64(Shape shape, std::vector<std::int64_t> data) {
  Tensor t;
  t.dtype = DType::kI64;
  t.shape = std::move(shape);
  t.i64 = std::move(data);
  return t;
}

std::vector<std::uint8_t> Tensor::data_bytes() const {
  std::vector<std::uint8_t> out(byte_size());
  if (out.empty()) return out;
  if (dtype == DType::kF32) {
    std::memcpy(out.data(), f32.data(), out.size());
  } else {
    std::memcpy(out.data(), i64.data(), out.size());
  }
  return out;
}

bool Tensor::has_nan() const {
  if (dtype != DType::kF32) return false;
  return std::any_of(f32.begin(), f32.end(), [](float v) { return std::isnan(v); });
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.dtype != b.dtype || a.shape != b.shape) return false;
  if (a.dtype == DType::kI64) return a.i64 == b.i64;
  if (a.f32.size() != b.f32.size()) return false;
  return a.f32.empty() ||
         std::memcmp(a.f32.data(), b.f32.data(), a.f32.size() * sizeof(float)) == 0;
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape || a.dtype != DType::kF32 || b.dtype != DType::kF32) {
    throw Error(ErrorCode::kShapeMismatch,
                "cannot compare " + shape_string(a.shape) + " with " + shape_string(b.shape));
  }
  float worst = 0.0f;
  for (std::size_t i = 0; i < a.f32.size(); ++i) {
    worst = std::max(worst, std::fabs(a.f32[i] - b.f32[i]));
  }
  return worst;
}

}  // namespace edif
