#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace atsdf {

enum class ErrorCode {
  kInvalidArgument,
  kDegenerateProjection,
  kEmptyMerge,
  kDegenerateStatistics,
  kAllocationLimit,
  kEmptyVolume,
  kNoCandidates,
  kSingularSystem,
  kAtlasOverflow,
  kUnknownClass,
  kIo,
  kFormat,
  kConfig,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Exception type thrown by every library entry point. The code is stable and
/// is what the CLI writes into its machine-readable error report.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace atsdf
