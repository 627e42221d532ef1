#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "attnseg/attention_maps.hpp"
#include "attnseg/evalkit.hpp"
#include "attnseg/segmenter.hpp"
#include "attnseg/trainer.hpp"

namespace attnseg {

/// 64-bit FNV-1a over a file's bytes.
std::uint64_t fnv1a_file(const std::filesystem::path& path);
std::uint64_t fnv1a_bytes(const void* data, std::size_t size);

/// Every command leaves a manifest beside its outputs: command, effective
/// configuration, seed, and input-file hashes, so identical runs are
/// recognizable by identical manifests.
void write_manifest(const std::filesystem::path& out_dir, const std::string& command,
                    const std::vector<std::pair<std::string, std::string>>& config_kv,
                    std::uint64_t seed, const std::vector<std::filesystem::path>& inputs);

void save_fold_split(const std::filesystem::path& path, const FoldSplit& split);
FoldSplit load_fold_split(const std::filesystem::path& path);

void write_history_csv(const std::filesystem::path& path, const TrainHistory& history);

struct ScoreRow {
  std::string id;
  double score = 0.0;
  int pred = 0;
};

void write_scores_csv(const std::filesystem::path& path, const std::vector<ScoreRow>& rows);
std::vector<ScoreRow> read_scores_csv(const std::filesystem::path& path);

void save_fused_map(const std::filesystem::path& dir, const FusedMap& map);
FusedMap load_fused_map(const std::filesystem::path& dir, const std::string& id);

void save_seg_mask(const std::filesystem::path& dir, const std::string& id, const SegMask& mask,
                   int min_pixels);
SegMask load_seg_mask(const std::filesystem::path& dir, const std::string& id);

/// Prediction in red over ground truth in green on a grayscale background
/// (binary PPM).
void write_overlay_ppm(const std::filesystem::path& path, const GridF& background01,
                       const MaskGrid& prediction, const MaskGrid& ground_truth);

}  // namespace attnseg
