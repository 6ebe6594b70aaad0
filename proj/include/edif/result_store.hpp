#pragma once

// Content-addressed, write-once blob storage with ranged reads.
//
// A blob's address is the SHA-256 of its stored bytes, i.e. after the
// requested encoding has been applied. On disk each blob lives at
// <root>/<first two hex chars>/<remaining 62 chars>, with a ".meta" JSON
// sidecar holding size, encoding and timestamps.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "edif/clock.hpp"
#include "edif/graph.hpp"
#include "edif/wire.hpp"
#include "json.hpp"

namespace edif {

class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(std::span<const std::uint8_t> data);
  std::string hex_digest();  // finalizes

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::string sha256_hex(std::span<const std::uint8_t> data);

struct BlobRef {
  std::string hash;  // 64 lowercase hex chars
  std::uint64_t size = 0;
  Encoding encoding = Encoding::kRaw;

  bool operator==(const BlobRef&) const = default;
};

struct BlobMeta {
  std::uint64_t size = 0;
  Encoding encoding = Encoding::kRaw;
  std::int64_t created_at_ms = 0;
  std::int64_t expires_at_ms = 0;

  bool operator==(const BlobMeta&) const = default;
};

struct ResultEntry {
  std::string save_name;
  DType dtype = DType::kF32;
  Shape shape;
  BlobRef blob;

  bool operator==(const ResultEntry&) const = default;
};

struct ResultManifest {
  std::string job_id;
  std::vector<ResultEntry> entries;

  bool operator==(const ResultManifest&) const = default;
};

nlohmann::json blob_ref_to_json(const BlobRef& ref);
BlobRef blob_ref_from_json(const nlohmann::json& j);
nlohmann::json manifest_to_json(const ResultManifest& manifest);
ResultManifest manifest_from_json(const nlohmann::json& j);

struct ResultStoreOptions {
  // Unset keeps everything in memory.
  std::optional<std::filesystem::path> directory;
  std::uint64_t capacity_bytes = UINT64_MAX;
  std::int64_t retention_ms = kMillisPerDay;
};

class ResultStore {
 public:
  ResultStore(ResultStoreOptions options, const Clock& clock);

  // Encodes `bytes` and stores the result. Idempotent on identical input.
  // Throws kStoreFull, kMalformed (empty input).
  BlobRef put_blob(std::span<const std::uint8_t> bytes, Encoding encoding);

  // Stores already-encoded bytes under a claimed hash; throws
  // kHashMismatch if the bytes do not hash to it.
  BlobRef put_verified(std::string_view expected_hash, std::span<const std::uint8_t> stored,
                       Encoding encoding);

  // Returns min(length, size - offset) bytes. Throws kUnknownBlob, kBadRange.
  std::vector<std::uint8_t> get_chunk(std::string_view hash, std::uint64_t offset,
                                      std::uint64_t length) const;

  BlobMeta blob_meta(std::string_view hash) const;
  bool contains(std::string_view hash) const;
  std::uint64_t used_bytes() const;
  std::size_t blob_count() const;

  // Drops blobs whose retention has lapsed; returns how many.
  std::size_t sweep_expired();

 private:
  BlobRef commit(std::string hash, std::span<const std::uint8_t> stored, Encoding encoding);
  std::filesystem::path blob_path(std::string_view hash) const;
  void load_existing();

  ResultStoreOptions options_;
  const Clock& clock_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, BlobMeta, std::less<>> meta_;
  std::map<std::string, std::shared_ptr<const std::vector<std::uint8_t>>, std::less<>> memory_;
  std::uint64_t used_ = 0;
};

// Stores a tensor as a raw TensorWire blob with the given blob encoding.
BlobRef put_tensor(ResultStore& store, const Tensor& tensor, Encoding encoding);

// Inverse of put_tensor for a fully downloaded blob.
Tensor tensor_from_blob(std::span<const std::uint8_t> stored, Encoding encoding);

ResultManifest store_bundle(ResultStore& store, const std::string& job_id, const ResultBundle& bundle,
                            Encoding encoding);

}  // namespace edif
