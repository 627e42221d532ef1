#pragma once

#include <filesystem>

#include "attnseg/grid.hpp"

namespace attnseg {

/// Portable binary 2D array container (".arr").
///
/// Layout, little-endian:
///   bytes 0..3   magic "ARR1"
///   byte  4      dtype: 1 = float32, 2 = uint8
///   byte  5      reserved, 0
///   bytes 6..9   rows (uint32)
///   bytes 10..13 cols (uint32)
///   payload      rows*cols values, row-major
enum class ArrayDType : std::uint8_t { Float32 = 1, Uint8 = 2 };

void write_array(const std::filesystem::path& path, const GridF& grid);
void write_array(const std::filesystem::path& path, const MaskGrid& grid);

ArrayDType peek_dtype(const std::filesystem::path& path);
GridF read_array_f32(const std::filesystem::path& path);
MaskGrid read_array_u8(const std::filesystem::path& path);

}  // namespace attnseg
