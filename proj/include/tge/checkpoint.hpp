#pragma once

// Checkpoint layout: u64 little-endian header length, a UTF-8 JSON header
// {format_version, config, seed, fingerprint, params: [{name, shape}]}, then
// the parameter values as little-endian f64 in header order.

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "tge/autodiff.hpp"

namespace tge {

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::string fingerprint;
  ad::ParameterSet params;
};

void write_checkpoint(const std::filesystem::path& path, const nlohmann::json& config, std::uint64_t seed,
                      const std::string& fingerprint, const ad::ParameterSet& params);

/// Throws IoError / FormatError on unreadable or truncated files.
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// 64-bit FNV-1a, rendered as 16 lowercase hex digits.
std::string fnv1a_hex(std::string_view data);

}  // namespace tge
