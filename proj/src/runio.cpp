#include "attnseg/runio.hpp"

#include <fstream>
#include <nlohmann/json.hpp>

#include "attnseg/array_io.hpp"
#include "attnseg/errors.hpp"

namespace attnseg {

std::uint64_t fnv1a_bytes(const void* data, std::size_t size) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot hash missing file: " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (is) {
    is.read(buf, sizeof buf);
    const auto n = is.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

void write_manifest(const std::filesystem::path& out_dir, const std::string& command,
                    const std::vector<std::pair<std::string, std::string>>& config_kv,
                    std::uint64_t seed, const std::vector<std::filesystem::path>& inputs) {
  nlohmann::json j;
  j["command"] = command;
  j["seed"] = seed;
  nlohmann::json cfg = nlohmann::json::object();
  for (const auto& [k, v] : config_kv) cfg[k] = v;
  j["config"] = cfg;
  nlohmann::json ins = nlohmann::json::object();
  for (const auto& p : inputs) ins[p.string()] = fnv1a_file(p);
  j["inputs"] = ins;
  {
    const std::string cfg_dump = cfg.dump();
    j["config_hash"] = fnv1a_bytes(cfg_dump.data(), cfg_dump.size());
  }
  std::ofstream os(out_dir / "manifest.json");
  if (!os) throw IoError("cannot write manifest under " + out_dir.string());
  os << j.dump(2) << "\n";
}

void save_fold_split(const std::filesystem::path& path, const FoldSplit& split) {
  nlohmann::json j;
  j["k"] = split.k;
  j["seed"] = split.seed;
  j["folds"] = split.folds;
  std::ofstream os(path);
  if (!os) throw IoError("cannot write fold split: " + path.string());
  os << j.dump(2) << "\n";
}

FoldSplit load_fold_split(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DependencyError("fold split file not found: " + path.string());
  nlohmann::json j;
  is >> j;
  FoldSplit split;
  split.k = j.at("k").get<int>();
  split.seed = j.at("seed").get<std::uint64_t>();
  split.folds = j.at("folds").get<std::vector<std::vector<std::string>>>();
  return split;
}

void write_history_csv(const std::filesystem::path& path, const TrainHistory& history) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write history: " + path.string());
  os << "epoch,train_loss,val_loss,val_metric\n";
  char buf[128];
  for (const auto& e : history.epochs) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g\n", e.epoch, e.train_loss, e.val_loss,
                  e.val_metric);
    os << buf;
  }
}

void write_scores_csv(const std::filesystem::path& path, const std::vector<ScoreRow>& rows) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write scores: " + path.string());
  os << "id,score,pred\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%.9g,%d\n", r.id.c_str(), r.score, r.pred);
    os << buf;
  }
}

std::vector<ScoreRow> read_scores_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DependencyError("scores file not found: " + path.string());
  std::vector<ScoreRow> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line_no == 1 || line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
      throw ParseError("bad scores row", line_no);
    ScoreRow r;
    r.id = line.substr(0, c1);
    r.score = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
    r.pred = std::stoi(line.substr(c2 + 1));
    rows.push_back(std::move(r));
  }
  return rows;
}

namespace {

std::string map_id(const FusedMap& map) {
  return map.study_id + "_" + std::to_string(map.slice_index);
}

GridF to_gridf(const MatD& m) {
  GridF out(m.rows(), m.cols());
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) out(i, j) = static_cast<float>(m(i, j));
  return out;
}

}  // namespace

void save_fused_map(const std::filesystem::path& dir, const FusedMap& map) {
  const std::string id = map_id(map);
  write_array(dir / (id + ".arr"), to_gridf(map.values));
  nlohmann::json j;
  j["method"] = map_method_name(map.method);
  j["layers_used"] = map.layers_used;
  j["source"] = {{"study_id", map.study_id}, {"slice_index", map.slice_index}};
  j["normalization_max"] = map.normalization_max;
  std::ofstream os(dir / (id + ".json"));
  if (!os) throw IoError("cannot write map sidecar for " + id);
  os << j.dump(2) << "\n";
}

FusedMap load_fused_map(const std::filesystem::path& dir, const std::string& id) {
  const auto arr = dir / (id + ".arr");
  if (!std::filesystem::exists(arr))
    throw DependencyError("fused map not found: " + arr.string());
  FusedMap map;
  map.values = read_array_f32(arr).cast<double>().matrix();
  std::ifstream is(dir / (id + ".json"));
  if (!is) throw DependencyError("map sidecar not found for " + id);
  nlohmann::json j;
  is >> j;
  map.method = map_method_from_name(j.at("method").get<std::string>());
  map.layers_used = j.value("layers_used", std::vector<int>{});
  map.normalization_max = j.at("normalization_max").get<double>();
  map.study_id = j.at("source").at("study_id").get<std::string>();
  map.slice_index = j.at("source").at("slice_index").get<int>();
  return map;
}

void save_seg_mask(const std::filesystem::path& dir, const std::string& id, const SegMask& mask,
                   int min_pixels) {
  write_array(dir / (id + ".arr"), mask.mask);
  nlohmann::json j;
  j["threshold"] = mask.threshold_used;
  j["method"] = mask.method;
  j["foreground_pixels"] = mask.foreground_pixels;
  j["min_pixels"] = min_pixels;
  std::ofstream os(dir / (id + ".json"));
  if (!os) throw IoError("cannot write mask sidecar for " + id);
  os << j.dump(2) << "\n";
}

SegMask load_seg_mask(const std::filesystem::path& dir, const std::string& id) {
  const auto arr = dir / (id + ".arr");
  if (!std::filesystem::exists(arr)) throw DependencyError("mask not found: " + arr.string());
  SegMask mask;
  mask.mask = read_array_u8(arr);
  mask.foreground_pixels = count_foreground(mask.mask);
  std::ifstream is(dir / (id + ".json"));
  if (is) {
    nlohmann::json j;
    is >> j;
    mask.threshold_used = j.value("threshold", 0.0);
    mask.method = j.value("method", std::string());
  }
  return mask;
}

void write_overlay_ppm(const std::filesystem::path& path, const GridF& background01,
                       const MaskGrid& prediction, const MaskGrid& ground_truth) {
  if (!same_shape(background01, prediction) || !same_shape(background01, ground_truth))
    throw InputError("overlay: shape mismatch");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write overlay: " + path.string());
  os << "P6\n" << background01.cols() << " " << background01.rows() << "\n255\n";
  for (Index i = 0; i < background01.rows(); ++i)
    for (Index j = 0; j < background01.cols(); ++j) {
      const auto g = static_cast<unsigned char>(
          std::clamp(background01(i, j), 0.f, 1.f) * 255.f);
      unsigned char rgb[3] = {g, g, g};
      if (prediction(i, j)) {
        rgb[0] = 255;
        rgb[1] = static_cast<unsigned char>(rgb[1] / 2);
        rgb[2] = static_cast<unsigned char>(rgb[2] / 2);
      }
      if (ground_truth(i, j)) {
        rgb[1] = 255;
        if (!prediction(i, j)) {
          rgb[0] = static_cast<unsigned char>(rgb[0] / 2);
          rgb[2] = static_cast<unsigned char>(rgb[2] / 2);
        }
      }
      os.write(reinterpret_cast<const char*>(rgb), 3);
    }
}

}  // namespace attnseg
