#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dap/autodiff.hpp"

namespace dap {

// Checkpoint container, format version 1. All integers and floats are
// little-endian.
//
//   bytes 0..7   magic "DAPCKPT\0"
//   u32          format version
//   u32          entry count
//   per entry, in ascending name order:
//     u32        name length, then the UTF-8 name bytes
//     u32        rank, then rank x u64 extents
//     f64 x numel  values in row-major order
//
// A sibling text manifest "<file>.manifest" carries key=value lines:
// format_version, config_hash, seed, entries, sha256 (of the container).

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointManifest {
  std::uint32_t format_version = kCheckpointVersion;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::size_t entries = 0;
  std::string sha256;
};

using NamedTensors = std::map<std::string, Tensor>;

std::vector<std::uint8_t> encode_checkpoint(const NamedTensors& tensors);
NamedTensors decode_checkpoint(std::span<const std::uint8_t> bytes);

NamedTensors collect(std::span<const Parameter* const> params);
NamedTensors collect(std::span<Parameter* const> params);
inline NamedTensors collect(const std::vector<Parameter*>& params) {
  return collect(std::span<Parameter* const>(params));
}

void save_checkpoint(const std::filesystem::path& file, const NamedTensors& tensors,
                     std::string_view config_hash, std::uint64_t seed);
/// Verifies the container against its manifest digest when a manifest exists.
NamedTensors load_checkpoint(const std::filesystem::path& file);
CheckpointManifest load_manifest(const std::filesystem::path& checkpoint_file);

/// Copies stored values into matching parameters. Every parameter must be
/// present with identical shape.
void restore(const NamedTensors& stored, std::span<Parameter* const> params);
inline void restore(const NamedTensors& stored, const std::vector<Parameter*>& params) {
  restore(stored, std::span<Parameter* const>(params));
}

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);
/// SHA-256 over the encoded container of all parameters whose name starts
/// with `prefix`.
std::string parameter_digest(std::span<Parameter* const> params, std::string_view prefix = "");

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& file);
void write_bytes(const std::filesystem::path& file, std::span<const std::uint8_t> bytes);
std::string read_text(const std::filesystem::path& file);
void write_text(const std::filesystem::path& file, std::string_view text);

}  // namespace dap
