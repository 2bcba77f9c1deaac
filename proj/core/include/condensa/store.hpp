#pragma once

// FMEX binary container, little-endian:
//
//   magic "FMEX" | version u16 | section count u16
//   per section: kind u8 | payload length u64 | payload
//
// Exemplar payload (kind 1), one exemplar per section:
//   class id u32 | C u8 | H u16 | W u16 | quantized u8 | T u16 |
//   T × f32 weights audit | pixels (u8, or f32 when not quantized)
// The stored frame count is implied by the remaining payload length.
//
// Params payload (kind 2):
//   shift fold f64 | tensor count u32 | per tensor: rank u8, rank × u32 extents, f64 data

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "condensa/datagen.hpp"
#include "condensa/memory.hpp"
#include "condensa/model.hpp"

namespace condensa::fmex {

inline constexpr std::uint16_t kVersion = 1;

enum class SectionKind : std::uint8_t { exemplars = 1, params = 2 };

struct Section {
  SectionKind kind = SectionKind::exemplars;
  std::vector<std::uint8_t> payload;
};

std::vector<std::uint8_t> encode_container(std::span<const Section> sections);
/// Throws FormatError naming the offending byte offset.
std::vector<Section> decode_container(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_exemplar(const CondensedExemplar& ex);
CondensedExemplar decode_exemplar(std::span<const std::uint8_t> payload, std::uint64_t base_offset = 0);

std::vector<std::uint8_t> encode_params(const ModelParams& params);
ModelParams decode_params(std::span<const std::uint8_t> payload, std::uint64_t base_offset = 0);

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

/// Writes every bank entry as an exemplar section (class order).
void store(const MemoryBank& bank, const std::filesystem::path& path);
/// videos_per_class of the result is the largest class found in the file.
MemoryBank load(const std::filesystem::path& path);

void store_params(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_params(const std::filesystem::path& path);

/// Full clips as keep-all exemplar sections (weights audit = uniform).
void store_clips(std::span<const VideoClip> clips, const std::filesystem::path& path);
std::vector<VideoClip> load_clips(const std::filesystem::path& path);

}  // namespace condensa::fmex
