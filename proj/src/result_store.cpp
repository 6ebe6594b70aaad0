#include "edif/result_store.hpp"

#include <openssl/evp.h>

#include <fstream>
#include <mutex>

#include "edif/error.hpp"

namespace edif {

using nlohmann::json;

struct Sha256::Impl {
  EVP_MD_CTX* ctx = nullptr;
};

Sha256::Sha256() : impl_(std::make_unique<Impl>()) {
  impl_->ctx = EVP_MD_CTX_new();
  if (!impl_->ctx || EVP_DigestInit_ex(impl_->ctx, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::kIo, "cannot initialise SHA-256");
  }
}

Sha256::~Sha256() { EVP_MD_CTX_free(impl_->ctx); }

void Sha256::update(std::span<const std::uint8_t> data) {
  EVP_DigestUpdate(impl_->ctx, data.data(), data.size());
}

std::string Sha256::hex_digest() {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(impl_->ctx, digest, &len);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

std::string sha256_hex(std::span<const std::uint8_t> data) {
  Sha256 h;
  h.update(data);
  return h.hex_digest();
}

json blob_ref_to_json(const BlobRef& ref) {
  return json{{"hash", ref.hash}, {"size", ref.size}, {"encoding", to_string(ref.encoding)}};
}

BlobRef blob_ref_from_json(const json& j) {
  json_util::require_keys(j, {"hash", "size", "encoding"}, {}, "blob");
  const std::int64_t size = json_util::get_int(j, "size");
  if (size < 0) throw Error(ErrorCode::kMalformed, "blob size must be non-negative");
  return BlobRef{json_util::get_string(j, "hash"), static_cast<std::uint64_t>(size),
                 encoding_from_string(json_util::get_string(j, "encoding"))};
}

json manifest_to_json(const ResultManifest& manifest) {
  json entries = json::array();
  for (const auto& e : manifest.entries) {
    entries.push_back({{"save_name", e.save_name},
                       {"dtype", to_string(e.dtype)},
                       {"shape", e.shape},
                       {"blob", blob_ref_to_json(e.blob)}});
  }
  return json{{"version", kProtocolVersion}, {"job_id", manifest.job_id}, {"entries", std::move(entries)}};
}

ResultManifest manifest_from_json(const json& j) {
  json_util::require_keys(j, {"version", "job_id", "entries"}, {}, "manifest");
  ResultManifest m;
  m.job_id = json_util::get_string(j, "job_id");
  for (const auto& e : j.at("entries")) {
    json_util::require_keys(e, {"save_name", "dtype", "shape", "blob"}, {}, "manifest entry");
    ResultEntry entry;
    entry.save_name = json_util::get_string(e, "save_name");
    entry.dtype = dtype_from_string(json_util::get_string(e, "dtype"));
    entry.shape = e.at("shape").get<Shape>();
    entry.blob = blob_ref_from_json(e.at("blob"));
    m.entries.push_back(std::move(entry));
  }
  return m;
}

namespace {

bool is_hex_digest(std::string_view hash) {
  return hash.size() == 64 && hash.find_first_not_of("0123456789abcdef") == std::string_view::npos;
}

json meta_to_json(const BlobMeta& m) {
  return json{{"size", m.size},
              {"encoding", to_string(m.encoding)},
              {"created_at_ms", m.created_at_ms},
              {"expires_at_ms", m.expires_at_ms}};
}

}  // namespace

ResultStore::ResultStore(ResultStoreOptions options, const Clock& clock)
    : options_(std::move(options)), clock_(clock) {
  if (options_.directory) {
    std::filesystem::create_directories(*options_.directory);
    load_existing();
  }
}

std::filesystem::path ResultStore::blob_path(std::string_view hash) const {
  return *options_.directory / std::string(hash.substr(0, 2)) / std::string(hash.substr(2));
}

void ResultStore::load_existing() {
  for (const auto& shard : std::filesystem::directory_iterator(*options_.directory)) {
    if (!shard.is_directory()) continue;
    for (const auto& file : std::filesystem::directory_iterator(shard.path())) {
      if (file.path().extension() != ".meta") continue;
      std::ifstream in(file.path());
      const json j = json::parse(in, nullptr, false);
      if (j.is_discarded()) continue;
      const std::string hash = shard.path().filename().string() + file.path().stem().string();
      if (!is_hex_digest(hash) || !std::filesystem::exists(blob_path(hash))) continue;
      BlobMeta m{j.value("size", std::uint64_t{0}), encoding_from_string(j.value("encoding", "raw")),
                 j.value("created_at_ms", std::int64_t{0}), j.value("expires_at_ms", std::int64_t{0})};
      used_ += m.size;
      meta_.emplace(hash, m);
    }
  }
}

BlobRef ResultStore::put_blob(std::span<const std::uint8_t> bytes, Encoding encoding) {
  if (bytes.empty()) throw Error(ErrorCode::kMalformed, "cannot store an empty blob");
  if (encoding == Encoding::kGzip) {
    const auto encoded = gzip_compress(bytes);
    return commit(sha256_hex(encoded), encoded, encoding);
  }
  return commit(sha256_hex(bytes), bytes, encoding);
}

BlobRef ResultStore::put_verified(std::string_view expected_hash, std::span<const std::uint8_t> stored,
                                  Encoding encoding) {
  if (stored.empty()) throw Error(ErrorCode::kMalformed, "cannot store an empty blob");
  std::string actual = sha256_hex(stored);
  if (actual != expected_hash) {
    throw Error(ErrorCode::kHashMismatch,
                "bytes hash to " + actual + ", not " + std::string(expected_hash));
  }
  return commit(std::move(actual), stored, encoding);
}

BlobRef ResultStore::commit(std::string hash, std::span<const std::uint8_t> stored, Encoding encoding) {
  const std::int64_t now = clock_.now_ms();
  std::unique_lock lock(mutex_);
  if (auto it = meta_.find(hash); it != meta_.end()) {
    it->second.expires_at_ms = std::max(it->second.expires_at_ms, now + options_.retention_ms);
    return BlobRef{hash, it->second.size, it->second.encoding};
  }
  if (used_ + stored.size() > options_.capacity_bytes) {
    throw Error(ErrorCode::kStoreFull, std::to_string(used_) + " of " +
                                           std::to_string(options_.capacity_bytes) + " bytes used, blob needs " +
                                           std::to_string(stored.size()));
  }
  const BlobMeta meta{stored.size(), encoding, now, now + options_.retention_ms};
  if (options_.directory) {
    const auto path = blob_path(hash);
    std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary);
      out.write(reinterpret_cast<const char*>(stored.data()), static_cast<std::streamsize>(stored.size()));
      if (!out) throw Error(ErrorCode::kIo, "cannot write " + tmp);
    }
    std::filesystem::rename(tmp, path);
    std::ofstream meta_out(path.string() + ".meta");
    meta_out << meta_to_json(meta).dump();
  } else {
    memory_.emplace(hash, std::make_shared<const std::vector<std::uint8_t>>(stored.begin(), stored.end()));
  }
  used_ += stored.size();
  meta_.emplace(hash, meta);
  return BlobRef{std::move(hash), meta.size, encoding};
}

std::vector<std::uint8_t> ResultStore::get_chunk(std::string_view hash, std::uint64_t offset,
                                                 std::uint64_t length) const {
  std::shared_lock lock(mutex_);
  auto it = meta_.find(hash);
  if (it == meta_.end()) throw Error(ErrorCode::kUnknownBlob, "no blob " + std::string(hash));
  const std::uint64_t size = it->second.size;
  if (offset >= size) {
    throw Error(ErrorCode::kBadRange,
                "offset " + std::to_string(offset) + " is not below size " + std::to_string(size));
  }
  const std::uint64_t n = std::min(length, size - offset);
  if (!options_.directory) {
    const auto& data = *memory_.find(hash)->second;
    return {data.begin() + static_cast<std::ptrdiff_t>(offset),
            data.begin() + static_cast<std::ptrdiff_t>(offset + n)};
  }
  std::vector<std::uint8_t> out(n);
  std::ifstream in(blob_path(hash), std::ios::binary);
  in.seekg(static_cast<std::streamoff>(offset));
  if (!in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(n))) {
    throw Error(ErrorCode::kIo, "short read on blob " + std::string(hash));
  }
  return out;
}

BlobMeta ResultStore::blob_meta(std::string_view hash) const {
  std::shared_lock lock(mutex_);
  auto it = meta_.find(hash);
  if (it == meta_.end()) throw Error(ErrorCode::kUnknownBlob, "no blob " + std::string(hash));
  return it->second;
}

bool ResultStore::contains(std::string_view hash) const {
  std::shared_lock lock(mutex_);
  return meta_.find(hash) != meta_.end();
}

std::uint64_t ResultStore::used_bytes() const {
  std::shared_lock lock(mutex_);
  return used_;
}

std::size_t ResultStore::blob_count() const {
  std::shared_lock lock(mutex_);
  return meta_.size();
}

std::size_t ResultStore::sweep_expired() {
  const std::int64_t now = clock_.now_ms();
  std::unique_lock lock(mutex_);
  std::size_t removed = 0;
  for (auto it = meta_.begin(); it != meta_.end();) {
    if (it->second.expires_at_ms > now) {
      ++it;
      continue;
    }
    if (options_.directory) {
      const auto path = blob_path(it->first);
      std::filesystem::remove(path);
      std::filesystem::remove(path.string() + ".meta");
    } else {
      memory_.erase(it->first);
    }
    used_ -= it->second.size;
    it = meta_.erase(it);
    ++removed;
  }
  return removed;
}

BlobRef put_tensor(ResultStore& store, const Tensor& tensor, Encoding encoding) {
  return store.put_blob(serialize_tensor(encode_tensor(tensor, Encoding::kRaw)), encoding);
}

Tensor tensor_from_blob(std::span<const std::uint8_t> stored, Encoding encoding) {
  if (encoding == Encoding::kGzip) {
    const auto raw = gzip_decompress(stored);
    return decode_tensor(parse_tensor(raw));
  }
  return decode_tensor(parse_tensor(stored));
}

ResultManifest store_bundle(ResultStore& store, const std::string& job_id, const ResultBundle& bundle,
                            Encoding encoding) {
  ResultManifest manifest;
  manifest.job_id = job_id;
  for (const auto& [name, tensor] : bundle.outputs) {
    manifest.entries.push_back({name, tensor.dtype, tensor.shape, put_tensor(store, tensor, encoding)});
  }
  return manifest;
}

}  // namespace edif
