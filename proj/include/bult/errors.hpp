#pragma once

#include <utility>
#include <stdexcept>
#include <string>

namespace bult {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Coincident points, degenerate directions and other invalid geometry.
class GeometryError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Raised when every angle message is flat, so no position information exists.
class NoInformationError : public Error {
 public:
  using Error::Error;
};

class SingularMatrixError : public Error {
 public:
  using Error::Error;
};

/// Non-fatal conditions raised while processing a slot. Operations that can
/// degrade gracefully report these instead of throwing.
enum class Flag : unsigned {
  kHessianRegularized = 1u << 0,
  kNotConverged = 1u << 1,
  kEndfireClamped = 1u << 2,
  kDegenerateGeometry = 1u << 3,
  kCalibrationReused = 1u << 4,
  kRidgeAdded = 1u << 5,
  kCovarianceFloored = 1u << 6,
  kNoInformation = 1u << 7,
  kExtrinsicDiscarded = 1u << 8,
  kOptimizerFallback = 1u << 9,
};

class Flags {
 public:
  constexpr Flags() = default;
  constexpr Flags(Flag f) : bits_(static_cast<unsigned>(f)) {}  // NOLINT

  constexpr void set(Flag f) { bits_ |= static_cast<unsigned>(f); }
  constexpr bool has(Flag f) const { return (bits_ & static_cast<unsigned>(f)) != 0; }
  constexpr bool any() const { return bits_ != 0; }
  constexpr unsigned bits() const { return bits_; }

  constexpr Flags& operator|=(Flags other) {
    bits_ |= other.bits_;
    return *this;
  }
  friend constexpr Flags operator|(Flags a, Flags b) { return a |= b; }
  friend constexpr bool operator==(Flags a, Flags b) { return a.bits_ == b.bits_; }

  /// Short '|'-separated names, "-" when empty. Used in CSV output.
  std::string to_string() const {
    static constexpr std::pair<Flag, const char*> kNames[] = {
        {Flag::kHessianRegularized, "hessian_reg"},
        {Flag::kNotConverged, "not_converged"},
        {Flag::kEndfireClamped, "endfire"},
        {Flag::kDegenerateGeometry, "degenerate_geometry"},
        {Flag::kCalibrationReused, "calibration_reused"},
        {Flag::kRidgeAdded, "ridge"},
        {Flag::kCovarianceFloored, "cov_floor"},
        {Flag::kNoInformation, "no_information"},
        {Flag::kExtrinsicDiscarded, "extrinsic_discarded"},
        {Flag::kOptimizerFallback, "optimizer_fallback"},
    };
    std::string out;
    for (const auto& [flag, name] : kNames) {
      if (!has(flag)) continue;
      if (!out.empty()) out += '|';
      out += name;
    }
    return out.empty() ? "-" : out;
  }

 private:
  unsigned bits_ = 0;
};

}  // namespace bult
