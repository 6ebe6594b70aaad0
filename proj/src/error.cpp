#include "edif/error.hpp"

#include <array>
#include <utility>

namespace edif {

namespace {

constexpr std::array<std::pair<ErrorCode, std::string_view>, 37> kNames{{
    {ErrorCode::kValidation, "VALIDATION"},
    {ErrorCode::kTimeout, "TIMEOUT"},
    {ErrorCode::kWorkerFault, "WORKER_FAULT"},
    {ErrorCode::kQuota, "QUOTA"},
    {ErrorCode::kAuth, "AUTH"},
    {ErrorCode::kUnknownModel, "UNKNOWN_MODEL"},
    {ErrorCode::kInvalidConfig, "INVALID_CONFIG"},
    {ErrorCode::kEmptyPrompt, "EMPTY_PROMPT"},
    {ErrorCode::kPromptTooLong, "PROMPT_TOO_LONG"},
    {ErrorCode::kShapeMismatch, "SHAPE_MISMATCH"},
    {ErrorCode::kUnknownHookPoint, "UNKNOWN_HOOK_POINT"},
    {ErrorCode::kCycle, "CYCLE"},
    {ErrorCode::kRuntimeShape, "RUNTIME_SHAPE"},
    {ErrorCode::kEngineFault, "ENGINE_FAULT"},
    {ErrorCode::kUnknownLayer, "UNKNOWN_LAYER"},
    {ErrorCode::kLengthMismatch, "LENGTH_MISMATCH"},
    {ErrorCode::kBadK, "BAD_K"},
    {ErrorCode::kDegenerateLabels, "DEGENERATE_LABELS"},
    {ErrorCode::kMalformed, "MALFORMED"},
    {ErrorCode::kOversize, "OVERSIZE"},
    {ErrorCode::kUnknownField, "UNKNOWN_FIELD"},
    {ErrorCode::kBadCompression, "BAD_COMPRESSION"},
    {ErrorCode::kLimitExceeded, "LIMIT_EXCEEDED"},
    {ErrorCode::kInsufficientSlots, "INSUFFICIENT_SLOTS"},
    {ErrorCode::kQueueFull, "QUEUE_FULL"},
    {ErrorCode::kUnknownJob, "UNKNOWN_JOB"},
    {ErrorCode::kStoreFull, "STORE_FULL"},
    {ErrorCode::kUnknownBlob, "UNKNOWN_BLOB"},
    {ErrorCode::kBadRange, "BAD_RANGE"},
    {ErrorCode::kHashMismatch, "HASH_MISMATCH"},
    {ErrorCode::kSinkUnreachable, "SINK_UNREACHABLE"},
    {ErrorCode::kForbidden, "FORBIDDEN"},
    {ErrorCode::kNotReady, "NOT_READY"},
    {ErrorCode::kFailedJob, "FAILED_JOB"},
    {ErrorCode::kBadConfig, "BAD_CONFIG"},
    {ErrorCode::kBindFailed, "BIND_FAILED"},
    {ErrorCode::kIo, "IO"},
}};

}  // namespace

std::string_view to_string(ErrorCode code) {
  for (const auto& [c, name] : kNames) {
    if (c == code) return name;
  }
  return "UNKNOWN";
}

ErrorCode error_code_from_string(std::string_view name) {
  for (const auto& [c, n] : kNames) {
    if (n == name) return c;
  }
  throw Error(ErrorCode::kMalformed, "unknown error code '" + std::string(name) + "'");
}

bool is_job_failure_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::kValidation:
    case ErrorCode::kTimeout:
    case ErrorCode::kWorkerFault:
    case ErrorCode::kQuota:
    case ErrorCode::kAuth:
    case ErrorCode::kUnknownModel:
      return true;
    default:
      return false;
  }
}

}  // namespace edif
