#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace fscil {

enum class ErrorCode {
  // stores and shapes
  EmptyStore,
  NonFiniteValue,
  LabelOutOfRange,
  DimensionMismatch,
  // numerics
  EmptyClass,
  NegativeGamma,
  NonPositiveDiagonal,
  NotPositiveDefinite,
  EmptyVector,
  IrreparablyIndefinite,
  // calibration
  ZeroNormPrototype,
  NoBaseClasses,
  WeightSumInvalid,
  OverlappingClasses,
  // classifiers
  NoClassesSeen,
  BaseNotFitted,
  BaseAlreadyFitted,
  ClassAlreadySeen,
  UnknownLabel,
  SingularSystem,
  EmptyCandidates,
  // protocol
  InsufficientSamples,
  InsufficientClasses,
  MissingPredictions,
  EmptyRun,
  InvalidConfig,
  // synthgen
  ZeroMatrix,
  // datastore
  BadMagic,
  UnsupportedVersion,
  TruncatedFile,
  TrailingData,
  IoFailure,
  UnknownKey,
  MissingKey,
  InvalidValue,
  // cli
  UnknownMethod,
  TaskCountMismatch,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyStore: return "EmptyStore";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::EmptyClass: return "EmptyClass";
    case ErrorCode::NegativeGamma: return "NegativeGamma";
    case ErrorCode::NonPositiveDiagonal: return "NonPositiveDiagonal";
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::EmptyVector: return "EmptyVector";
    case ErrorCode::IrreparablyIndefinite: return "IrreparablyIndefinite";
    case ErrorCode::ZeroNormPrototype: return "ZeroNormPrototype";
    case ErrorCode::NoBaseClasses: return "NoBaseClasses";
    case ErrorCode::WeightSumInvalid: return "WeightSumInvalid";
    case ErrorCode::OverlappingClasses: return "OverlappingClasses";
    case ErrorCode::NoClassesSeen: return "NoClassesSeen";
    case ErrorCode::BaseNotFitted: return "BaseNotFitted";
    case ErrorCode::BaseAlreadyFitted: return "BaseAlreadyFitted";
    case ErrorCode::ClassAlreadySeen: return "ClassAlreadySeen";
    case ErrorCode::UnknownLabel: return "UnknownLabel";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::EmptyCandidates: return "EmptyCandidates";
    case ErrorCode::InsufficientSamples: return "InsufficientSamples";
    case ErrorCode::InsufficientClasses: return "InsufficientClasses";
    case ErrorCode::MissingPredictions: return "MissingPredictions";
    case ErrorCode::EmptyRun: return "EmptyRun";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::ZeroMatrix: return "ZeroMatrix";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::TrailingData: return "TrailingData";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::UnknownKey: return "UnknownKey";
    case ErrorCode::MissingKey: return "MissingKey";
    case ErrorCode::InvalidValue: return "InvalidValue";
    case ErrorCode::UnknownMethod: return "UnknownMethod";
    case ErrorCode::TaskCountMismatch: return "TaskCountMismatch";
  }
  return "Unknown";
}

/// Every failure in the library is reported as an Error carrying a code, a
/// human readable message and optional integer context (row, column, byte
/// offset, class id, ...), in the order documented at the throw site.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::vector<std::int64_t> context = {})
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code),
        context_(std::move(context)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::vector<std::int64_t>& context() const noexcept { return context_; }

 private:
  ErrorCode code_;
  std::vector<std::int64_t> context_;
};

}  // namespace fscil
