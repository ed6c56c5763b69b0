#pragma once

#include <stdexcept>
#include <string>

namespace odml {

// Every failure the library reports carries a stable machine-readable kind
// (e.g. "MissingColumn", "OverlapFailure") next to the human message.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(kind + ": " + message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

namespace errc {
inline constexpr const char* kMissingColumn = "MissingColumn";
inline constexpr const char* kParseError = "ParseError";
inline constexpr const char* kEmptyInput = "EmptyInput";
inline constexpr const char* kNotEnoughRows = "NotEnoughRows";
inline constexpr const char* kConstantTreatment = "ConstantTreatment";
inline constexpr const char* kEmptyDesign = "EmptyDesign";
inline constexpr const char* kSingularDesign = "SingularDesign";
inline constexpr const char* kSeparationDetected = "SeparationDetected";
inline constexpr const char* kNonFiniteLoss = "NonFiniteLoss";
inline constexpr const char* kDimensionMismatch = "DimensionMismatch";
inline constexpr const char* kTooFewClusters = "TooFewClusters";
inline constexpr const char* kBadFoldCount = "BadFoldCount";
inline constexpr const char* kDegenerateResiduals = "DegenerateResiduals";
inline constexpr const char* kFoldImbalance = "FoldImbalance";
inline constexpr const char* kOverlapFailure = "OverlapFailure";
inline constexpr const char* kZeroJacobian = "ZeroJacobian";
inline constexpr const char* kCalibrationFailure = "CalibrationFailure";
inline constexpr const char* kMcUnstable = "McUnstable";
inline constexpr const char* kConfigError = "ConfigError";
inline constexpr const char* kIoError = "IoError";
}  // namespace errc

}  // namespace odml
