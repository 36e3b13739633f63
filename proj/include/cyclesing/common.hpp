#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace cyclesing {

// Failure categories surfaced across the library. The CLI maps these to
// exit codes, so keep the set closed and the names stable.
enum class Err {
  NotFound,
  IoError,
  UnsupportedFormat,
  UnsupportedRate,
  TooShort,
  InvalidGeometry,
  DegenerateStats,
  ShapeMismatch,
  ZeroTarget,
  InputTooShort,
  BadConfig,
  UnknownVariant,
  NonFiniteLoss,
  VersionMismatch,
  CorruptChecksum,
  UnlabeledFile,
  InsufficientSegments,
  CropTooLong,
  NoVoicedFrames,
  LengthMismatch,
  ZeroReference,
};

const char* err_name(Err kind);

class Error : public std::runtime_error {
 public:
  Error(Err kind, const std::string& msg)
      : std::runtime_error(std::string(err_name(kind)) + ": " + msg), kind_(kind) {}

  Err kind() const noexcept { return kind_; }

 private:
  Err kind_;
};

[[noreturn]] inline void fail(Err kind, const std::string& msg) { throw Error(kind, msg); }

inline void require(bool cond, Err kind, const std::string& msg) {
  if (!cond) fail(kind, msg);
}

// 64-bit FNV-1a. Used for stable record ids and checkpoint checksums.
constexpr uint64_t kFnvOffset = 1469598103934665603ull;
constexpr uint64_t kFnvPrime = 1099511628211ull;

inline uint64_t fnv1a(const void* bytes, size_t n, uint64_t h = kFnvOffset) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

inline uint64_t fnv1a(std::string_view s, uint64_t h = kFnvOffset) {
  return fnv1a(s.data(), s.size(), h);
}

}  // namespace cyclesing
