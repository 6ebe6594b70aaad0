#pragma once

#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>

#include "doctest.h"
#include "edif/error.hpp"
#include "edif/model.hpp"
#include "edif/tensor.hpp"

namespace test {

// Returns the code of the edif::Error `fn` throws; fails the test if it
// throws nothing or something else.
inline std::optional<edif::ErrorCode> thrown_code(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const edif::Error& e) {
    return e.code();
  } catch (const std::exception& e) {
    FAIL("unexpected exception: " << e.what());
  }
  return std::nullopt;
}

#define CHECK_CODE(expr, expected)                                         \
  do {                                                                     \
    const auto got_ = ::test::thrown_code([&] { (void)(expr); });          \
    REQUIRE_MESSAGE(got_.has_value(), "no edif::Error thrown by " #expr);  \
    CHECK_EQ(edif::to_string(*got_), edif::to_string(expected));           \
  } while (0)

inline const edif::ModelInstance& toy_model() {
  static const edif::ModelInstance model = edif::build_model(edif::ModelConfig{});
  return model;
}

inline std::shared_ptr<const edif::ModelInstance> shared_toy() {
  static const auto model = std::make_shared<const edif::ModelInstance>(edif::build_model(edif::ModelConfig{}));
  return model;
}

inline std::uint32_t float_bits(float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, sizeof u);
  return u;
}

inline float bits_float(std::uint32_t u) {
  float f;
  std::memcpy(&f, &u, sizeof f);
  return f;
}

// Byte prompt of length n drawn from printable ASCII.
inline std::string random_prompt(std::mt19937_64& rng, int min_len, int max_len) {
  std::uniform_int_distribution<int> len(min_len, max_len);
  std::uniform_int_distribution<int> ch(32, 126);
  std::string s(static_cast<std::size_t>(len(rng)), ' ');
  for (auto& c : s) c = static_cast<char>(ch(rng));
  return s;
}

}  // namespace test
