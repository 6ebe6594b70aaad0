#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace edif {

// Every failure the fabric can report. The first block doubles as the
// closed set of job failure codes carried in JobStatus.
enum class ErrorCode {
  // job failure codes
  kValidation,
  kTimeout,
  kWorkerFault,
  kQuota,
  kAuth,
  kUnknownModel,
  // model engine
  kInvalidConfig,
  kEmptyPrompt,
  kPromptTooLong,
  kShapeMismatch,
  kUnknownHookPoint,
  // graph
  kCycle,
  kRuntimeShape,
  kEngineFault,
  kUnknownLayer,
  kLengthMismatch,
  kBadK,
  kDegenerateLabels,
  // wire
  kMalformed,
  kOversize,
  kUnknownField,
  kBadCompression,
  kLimitExceeded,
  // scheduler
  kInsufficientSlots,
  kQueueFull,
  kUnknownJob,
  // result store
  kStoreFull,
  kUnknownBlob,
  kBadRange,
  kHashMismatch,
  // telemetry
  kSinkUnreachable,
  // gateway
  kForbidden,
  kNotReady,
  kFailedJob,
  // io / config
  kBadConfig,
  kBindFailed,
  kIo,
};

std::string_view to_string(ErrorCode code);

// Inverse of to_string; throws Error(kMalformed) on unknown names.
ErrorCode error_code_from_string(std::string_view name);

// True for the six codes a terminal FAILED job may carry.
bool is_job_failure_code(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code),
        message_(std::move(message)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorCode code_;
  std::string message_;
};

}  // namespace edif
