#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#include "raincap/grad/nn.hpp"

namespace raincap::harness {

using grad::NamedTensors;

inline constexpr std::uint16_t kCheckpointVersion = 1;

/// Anything wrong with a file we were asked to read: missing, truncated,
/// wrong magic, unsupported version, corrupt payload.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// "RCAP", u16 version, u32 count, then per tensor: u16 name length, name,
/// u8 rank, u32 extents, f32 payload. All little-endian.
std::string serialize_checkpoint(const NamedTensors<float>& tensors);
NamedTensors<float> parse_checkpoint(std::string_view bytes);

/// Writes to a sibling temp file, then renames over `path`.
void save_checkpoint(const std::filesystem::path& path, const NamedTensors<float>& tensors);
NamedTensors<float> load_checkpoint(const std::filesystem::path& path);

/// Copies every tensor of `dest` from `loaded` by name; throws DataError when
/// a name is missing or extents differ.
void restore(const NamedTensors<float>& loaded, NamedTensors<float>& dest);

std::uint64_t fnv1a(std::string_view bytes);
std::string hex64(std::uint64_t v);
/// fnv1a of the serialized checkpoint, in hex.
std::string state_hash(const NamedTensors<float>& tensors);

std::string read_file(const std::filesystem::path& path);
/// Temp file + rename, creating parent directories.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace raincap::harness
