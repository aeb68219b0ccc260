#pragma once

#include <concepts>
#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "grades_lab/model.hpp"

// Binary parameter checkpoint, all integers and floats little-endian:
//
//   "GRLBCKPT"            8-byte magic
//   u32 version           (kCheckpointVersion)
//   u32 scalar_bytes      4 (f32) or 8 (f64)
//   u64 x 7               vocab_size d_model n_heads n_layers d_ff max_seq_len seed
//   u8  has_lora, f64 lora_scale
//   u32 entry_count
//   entries: u16 name_len, name, u32 rows, u32 cols, rows*cols raw scalars
//
// Base matrices use the Weights::for_each names ("tok_embedding",
// "layer.0.q", ...); adapter matrices append ".A" / ".B" to the component name.
namespace grades_lab {

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <std::floating_point T>
void write_checkpoint(std::ostream& out, const ModelParams<T>& params);

template <std::floating_point T>
void save_checkpoint(const std::filesystem::path& path, const ModelParams<T>& params);

// Throws IoError on truncation, bad magic, version or precision mismatch.
template <std::floating_point T>
ModelParams<T> read_checkpoint(std::istream& in);

template <std::floating_point T>
ModelParams<T> load_checkpoint(const std::filesystem::path& path);

}  // namespace grades_lab
