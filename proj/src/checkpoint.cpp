#include "attnseg/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace attnseg {
namespace {

constexpr char kMagic[4] = {'A', 'T', 'S', 'G'};
constexpr std::uint32_t kVersion = 1;

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

void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
  const auto n = read_u32(is);
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  return s;
}

std::ifstream open_checkpoint(const std::filesystem::path& path, CheckpointInfo& info) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DependencyError("checkpoint not found: " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("not a checkpoint file: " + path.string());
  info.version = read_u32(is);
  if (info.version != kVersion)
    throw DataError("unsupported checkpoint version in " + path.string());
  info.kind = read_string(is);
  info.config_json = read_string(is);
  return is;
}

}  // namespace

void save_checkpoint_raw(const std::filesystem::path& path, const std::string& kind,
                         const std::string& config_json,
                         const std::vector<std::pair<std::string, std::vector<float>>>& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint: " + path.string());
  os.write(kMagic, 4);
  write_u32(os, kVersion);
  write_string(os, kind);
  write_string(os, config_json);
  write_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, data] : tensors) {
    write_string(os, name);
    write_u32(os, static_cast<std::uint32_t>(data.size()));
    os.write(reinterpret_cast<const char*>(data.data()),
             static_cast<std::streamsize>(data.size() * sizeof(float)));
  }
  if (!os) throw IoError("checkpoint write failed: " + path.string());
}

CheckpointInfo peek_checkpoint(const std::filesystem::path& path) {
  CheckpointInfo info;
  open_checkpoint(path, info);
  return info;
}

std::map<std::string, std::vector<float>> load_checkpoint_tensors(const std::filesystem::path& path) {
  CheckpointInfo info;
  auto is = open_checkpoint(path, info);
  const auto count = read_u32(is);
  std::map<std::string, std::vector<float>> tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = read_string(is);
    const auto n = read_u32(is);
    std::vector<float> data(n);
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!is) throw DataError("truncated checkpoint: " + path.string());
    tensors.emplace(std::move(name), std::move(data));
  }
  return tensors;
}

}  // namespace attnseg
