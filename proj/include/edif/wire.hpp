#pragma once

// edif-proto/1: the client <-> gateway encoding.
//
// Control plane is canonical JSON (sorted keys, ASCII-only, no whitespace).
// Prompts travel as JSON strings whose code points U+0000..U+00FF map 1:1
// onto bytes. Bulk tensor data rides in the binary TensorWire form, which
// is also what the result store holds:
//
//   "EDIFT1" | u8 dtype | u8 encoding | u32 rank | u64 dims[rank]
//   | u64 data length | data
//
// All integers little-endian. CONST literals embed the same fields as JSON
// with base64 data.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "edif/error.hpp"
#include "edif/graph.hpp"
#include "edif/tensor.hpp"
#include "json.hpp"

namespace edif {

inline constexpr std::string_view kProtocolVersion = "edif-proto/1";
inline constexpr std::size_t kMaxRequestBytes = 8u << 20;

constexpr std::size_t tensor_wire_header_bytes(std::size_t rank) { return 20 + 8 * rank; }

enum class Encoding : std::uint8_t { kRaw = 0, kGzip = 1 };

std::string_view to_string(Encoding encoding);
Encoding encoding_from_string(std::string_view name);

std::vector<std::uint8_t> gzip_compress(std::span<const std::uint8_t> data);
// Throws kBadCompression on a corrupt stream.
std::vector<std::uint8_t> gzip_decompress(std::span<const std::uint8_t> data);

std::string base64_encode(std::span<const std::uint8_t> data);
std::vector<std::uint8_t> base64_decode(std::string_view text);

struct TensorWire {
  DType dtype = DType::kF32;
  Shape shape;
  Encoding encoding = Encoding::kRaw;
  std::vector<std::uint8_t> data;
};

TensorWire encode_tensor(const Tensor& tensor, Encoding encoding);
// Throws kLengthMismatch or kBadCompression.
Tensor decode_tensor(const TensorWire& wire);

std::vector<std::uint8_t> serialize_tensor(const TensorWire& wire);
TensorWire parse_tensor(std::span<const std::uint8_t> bytes);

nlohmann::json tensor_to_json(const TensorWire& wire);
TensorWire tensor_from_json(const nlohmann::json& j);

// Prompt bytes <-> JSON string (Latin-1 code point mapping).
std::string prompt_to_json_string(std::string_view bytes);
std::string prompt_from_json_string(std::string_view utf8);

std::string canonical_dump(const nlohmann::json& j);

nlohmann::json graph_to_json(const InterventionGraph& graph);
InterventionGraph graph_from_json(const nlohmann::json& j);

// Throws kLimitExceeded on node/invocation caps.
std::string encode_graph(const InterventionGraph& graph);
// Throws kMalformed, kUnknownField, kLimitExceeded.
InterventionGraph decode_graph(std::string_view bytes);

struct JobRequest {
  std::string api_token;
  std::string model_id;
  InterventionGraph graph;
  std::optional<std::string> client_tag;
};

bool operator==(const JobRequest& a, const JobRequest& b);
bool operator==(const InterventionGraph& a, const InterventionGraph& b);
bool operator==(const GraphNode& a, const GraphNode& b);

std::string encode_request(const JobRequest& request);
// Throws kOversize, kMalformed, kUnknownField, kLimitExceeded.
JobRequest decode_request(std::string_view bytes);

enum class JobState { kQueued, kRunning, kCompleted, kFailed };

std::string_view to_string(JobState state);
JobState job_state_from_string(std::string_view name);
bool is_terminal(JobState state);
// QUEUED->RUNNING, QUEUED->FAILED, RUNNING->COMPLETED, RUNNING->FAILED.
bool is_valid_transition(JobState from, JobState to);

struct JobFailure {
  ErrorCode code = ErrorCode::kWorkerFault;
  std::string message;

  bool operator==(const JobFailure&) const = default;
};

struct JobStatus {
  std::string job_id;
  JobState state = JobState::kQueued;
  std::optional<std::int64_t> queue_position;
  std::optional<JobFailure> failure;

  bool operator==(const JobStatus&) const = default;
};

nlohmann::json status_to_json(const JobStatus& status);
JobStatus status_from_json(const nlohmann::json& j);
std::string encode_status(const JobStatus& status);
JobStatus decode_status(std::string_view bytes);

// {code, message, detail} error envelope.
std::string encode_error(ErrorCode code, std::string_view message,
                         const nlohmann::json& detail = nlohmann::json::object());

// Strict JSON helpers shared by the other codecs.
namespace json_util {
nlohmann::json parse(std::string_view bytes);  // kMalformed on syntax errors
void require_keys(const nlohmann::json& j, std::initializer_list<std::string_view> required,
                  std::initializer_list<std::string_view> optional, std::string_view where);
std::int64_t get_int(const nlohmann::json& j, std::string_view key);
std::string get_string(const nlohmann::json& j, std::string_view key);
}  // namespace json_util

}  // namespace edif
