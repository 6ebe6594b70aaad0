#pragma once

// Normative edif-proto/1 fixture files: envelopes, statuses, tensors and
// a corpus of 20 template graphs. `gen-fixtures` writes them; tests check
// the checked-in copies still match byte for byte.

#include <cstdint>
#include <string>
#include <vector>

namespace edif {

struct FixtureFile {
  std::string path;  // relative to the fixture root
  std::vector<std::uint8_t> bytes;
};

std::vector<FixtureFile> golden_fixtures();

}  // namespace edif
