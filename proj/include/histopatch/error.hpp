// Copyright 2026 The histopatch Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace histopatch {

/// Failure kinds surfaced by the library. The CLI maps these onto exit codes
/// and the per-slide "missed" reasons of a run report.
enum class ErrorCode {
  kUnsupportedFormat,
  kCorruptImage,
  kOutOfBounds,
  kEmptyImage,
  kZeroArea,
  kNoCandidates,
  kDegenerateBandwidth,
  kEmptyDensity,
  kNoTissue,
  kDegenerateOutput,
  kImageTooSmall,
  kShapeMismatch,
  kNonFiniteOutput,
  kManifestMismatch,
  kTruncatedBlob,
  kInsufficientNeighbors,
  kInsufficientSlides,
  kEmptySet,
  kLengthMismatch,
  kClassTooSmall,
  kInvalidArgument,
  kIoError,
};

constexpr std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kUnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::kCorruptImage: return "CorruptImage";
    case ErrorCode::kOutOfBounds: return "OutOfBounds";
    case ErrorCode::kEmptyImage: return "EmptyImage";
    case ErrorCode::kZeroArea: return "ZeroArea";
    case ErrorCode::kNoCandidates: return "NoCandidates";
    case ErrorCode::kDegenerateBandwidth: return "DegenerateBandwidth";
    case ErrorCode::kEmptyDensity: return "EmptyDensity";
    case ErrorCode::kNoTissue: return "NoTissue";
    case ErrorCode::kDegenerateOutput: return "DegenerateOutput";
    case ErrorCode::kImageTooSmall: return "ImageTooSmall";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kNonFiniteOutput: return "NonFiniteOutput";
    case ErrorCode::kManifestMismatch: return "ManifestMismatch";
    case ErrorCode::kTruncatedBlob: return "TruncatedBlob";
    case ErrorCode::kInsufficientNeighbors: return "InsufficientNeighbors";
    case ErrorCode::kInsufficientSlides: return "InsufficientSlides";
    case ErrorCode::kEmptySet: return "EmptySet";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kClassTooSmall: return "ClassTooSmall";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kIoError: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  std::string_view name() const noexcept { return error_name(code_); }

 private:
  ErrorCode code_;
};

}  // namespace histopatch
