#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rmau {

enum class Errc {
  ShapeMismatch,
  NonBinaryMask,
  NonFiniteData,
  BadMagic,
  UnsupportedVersion,
  TruncatedFile,
  EmptyManifest,
  IoFailure,
  MissingBand,
  NonSquareTile,
  ChannelMismatch,
  MissingHead,
  BadThreshold,
  LengthMismatch,
  EmptyTrainSplit,
  EmptyTestSplit,
  DivergedLoss,
  BadConfig,
};

constexpr std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::NonBinaryMask: return "NonBinaryMask";
    case Errc::NonFiniteData: return "NonFiniteData";
    case Errc::BadMagic: return "BadMagic";
    case Errc::UnsupportedVersion: return "UnsupportedVersion";
    case Errc::TruncatedFile: return "TruncatedFile";
    case Errc::EmptyManifest: return "EmptyManifest";
    case Errc::IoFailure: return "IoFailure";
    case Errc::MissingBand: return "MissingBand";
    case Errc::NonSquareTile: return "NonSquareTile";
    case Errc::ChannelMismatch: return "ChannelMismatch";
    case Errc::MissingHead: return "MissingHead";
    case Errc::BadThreshold: return "BadThreshold";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::EmptyTrainSplit: return "EmptyTrainSplit";
    case Errc::EmptyTestSplit: return "EmptyTestSplit";
    case Errc::DivergedLoss: return "DivergedLoss";
    case Errc::BadConfig: return "BadConfig";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above; the
/// message names the offending field or file.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

  /// Errors caused by bad input data rather than by a failed computation.
  bool is_data_error() const noexcept {
    switch (code_) {
      case Errc::DivergedLoss:
        return false;
      default:
        return true;
    }
  }

 private:
  Errc code_;
};

}  // namespace rmau
