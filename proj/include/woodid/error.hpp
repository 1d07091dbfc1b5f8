#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace woodid {

enum class ErrorKind {
  UnknownSpecies,
  DuplicateId,
  UnreadableImage,
  UnknownSpecimen,
  InsufficientSpecimens,
  BadRatios,
  ImageTooSmall,
  BadDims,
  MissingWeights,
  ShapeMismatch,
  BadStep,
  DivergedLoss,
  NoCheckpoints,
  VersionMismatch,
  CorruptBundle,
  EmptyInput,
  ClassListMismatch,
  InvalidRecord,
  StorageUnavailable,
  AddressInUse,
  UnknownSession,
  UnknownPrediction,
  VerdictExists,
  MissingActualClass,
  UndecodableImage,
  BadConfig,
  IoError,
};

std::string_view to_string(ErrorKind kind);

/// All library failures surface as this exception; `kind()` is the stable
/// machine-readable discriminator, `what()` carries detail for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& detail)
      : std::runtime_error(std::string(to_string(kind)) + ": " + detail),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::UnknownSpecies: return "UnknownSpecies";
    case ErrorKind::DuplicateId: return "DuplicateId";
    case ErrorKind::UnreadableImage: return "UnreadableImage";
    case ErrorKind::UnknownSpecimen: return "UnknownSpecimen";
    case ErrorKind::InsufficientSpecimens: return "InsufficientSpecimens";
    case ErrorKind::BadRatios: return "BadRatios";
    case ErrorKind::ImageTooSmall: return "ImageTooSmall";
    case ErrorKind::BadDims: return "BadDims";
    case ErrorKind::MissingWeights: return "MissingWeights";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::BadStep: return "BadStep";
    case ErrorKind::DivergedLoss: return "DivergedLoss";
    case ErrorKind::NoCheckpoints: return "NoCheckpoints";
    case ErrorKind::VersionMismatch: return "VersionMismatch";
    case ErrorKind::CorruptBundle: return "CorruptBundle";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::ClassListMismatch: return "ClassListMismatch";
    case ErrorKind::InvalidRecord: return "InvalidRecord";
    case ErrorKind::StorageUnavailable: return "StorageUnavailable";
    case ErrorKind::AddressInUse: return "AddressInUse";
    case ErrorKind::UnknownSession: return "UnknownSession";
    case ErrorKind::UnknownPrediction: return "UnknownPrediction";
    case ErrorKind::VerdictExists: return "VerdictExists";
    case ErrorKind::MissingActualClass: return "MissingActualClass";
    case ErrorKind::UndecodableImage: return "UndecodableImage";
    case ErrorKind::BadConfig: return "BadConfig";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace woodid
