#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "scglr/mixed_scglr.hpp"

namespace scglr {

inline constexpr std::string_view kModelFormat = "mixed-scglr-model";
inline constexpr int kModelVersion = 1;
inline constexpr std::string_view kToolVersion = "1.0.0";

/// Provenance block written at the top of every output.
struct RunMetadata {
  std::string tool_version{kToolVersion};
  std::string config_hash;
  std::uint64_t seed = 0;
};

/// Versioned JSON document: loadings, coefficients, variance components,
/// standardisation constants and diagnostics. Per-row working quantities
/// are not stored.
std::string model_to_json(const FitResult& fit, const RunMetadata& meta);
FitResult model_from_json(std::string_view text);

void save_model(const std::string& path, const FitResult& fit, const RunMetadata& meta);
FitResult load_model(const std::string& path);

/// 64-bit FNV-1a, rendered as 16 hex digits.
std::string fnv1a_hex(std::string_view bytes);

}  // namespace scglr
