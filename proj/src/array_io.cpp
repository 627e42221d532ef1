#include "attnseg/array_io.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include "attnseg/errors.hpp"

namespace attnseg {
namespace {

constexpr char kMagic[4] = {'A', 'R', 'R', '1'};

struct Header {
  std::uint8_t dtype = 0;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
};

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_header(std::ostream& os, ArrayDType dtype, Index rows, Index cols) {
  os.write(kMagic, 4);
  const char dt = static_cast<char>(dtype);
  const char zero = 0;
  os.write(&dt, 1);
  os.write(&zero, 1);
  write_u32(os, static_cast<std::uint32_t>(rows));
  write_u32(os, static_cast<std::uint32_t>(cols));
}

Header read_header(std::istream& is, const std::filesystem::path& path) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("not an ARR1 array file: " + path.string());
  char dtype = 0, reserved = 0;
  is.read(&dtype, 1);
  is.read(&reserved, 1);
  Header h;
  h.dtype = static_cast<std::uint8_t>(dtype);
  h.rows = read_u32(is);
  h.cols = read_u32(is);
  if (!is) throw IoError("truncated array header: " + path.string());
  return h;
}

template <class T>
void write_payload(std::ostream& os, const Grid<T>& grid) {
  std::vector<T> row(static_cast<std::size_t>(grid.cols()));
  for (Index i = 0; i < grid.rows(); ++i) {
    for (Index j = 0; j < grid.cols(); ++j) row[static_cast<std::size_t>(j)] = grid(i, j);
    os.write(reinterpret_cast<const char*>(row.data()),
             static_cast<std::streamsize>(row.size() * sizeof(T)));
  }
}

template <class T>
Grid<T> read_payload(std::istream& is, const Header& h, const std::filesystem::path& path) {
  Grid<T> grid(static_cast<Index>(h.rows), static_cast<Index>(h.cols));
  std::vector<T> row(h.cols);
  for (std::uint32_t i = 0; i < h.rows; ++i) {
    is.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(T)));
    if (!is) throw IoError("truncated array payload: " + path.string());
    for (std::uint32_t j = 0; j < h.cols; ++j) grid(static_cast<Index>(i), static_cast<Index>(j)) = row[j];
  }
  return grid;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  return os;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path.string());
  return is;
}

}  // namespace

void write_array(const std::filesystem::path& path, const GridF& grid) {
  auto os = open_out(path);
  write_header(os, ArrayDType::Float32, grid.rows(), grid.cols());
  write_payload(os, grid);
  if (!os) throw IoError("write failed: " + path.string());
}

void write_array(const std::filesystem::path& path, const MaskGrid& grid) {
  auto os = open_out(path);
  write_header(os, ArrayDType::Uint8, grid.rows(), grid.cols());
  write_payload(os, grid);
  if (!os) throw IoError("write failed: " + path.string());
}

ArrayDType peek_dtype(const std::filesystem::path& path) {
  auto is = open_in(path);
  return static_cast<ArrayDType>(read_header(is, path).dtype);
}

GridF read_array_f32(const std::filesystem::path& path) {
  auto is = open_in(path);
  const Header h = read_header(is, path);
  if (h.dtype != static_cast<std::uint8_t>(ArrayDType::Float32))
    throw IoError("expected float32 array: " + path.string());
  return read_payload<float>(is, h, path);
}

MaskGrid read_array_u8(const std::filesystem::path& path) {
  auto is = open_in(path);
  const Header h = read_header(is, path);
  if (h.dtype != static_cast<std::uint8_t>(ArrayDType::Uint8))
    throw IoError("expected uint8 array: " + path.string());
  return read_payload<std::uint8_t>(is, h, path);
}

}  // namespace attnseg
