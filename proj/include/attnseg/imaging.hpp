#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "attnseg/grid.hpp"

namespace attnseg {

/// Intensity window: HU in [center - width/2, center + width/2] maps linearly to [0, 1].
struct WindowSpec {
  float center = 40.f;
  float width = 80.f;
};

/// Channel order is fixed: brain, subdural, bone.
inline constexpr std::array<WindowSpec, 3> kDefaultWindows{{{40.f, 80.f}, {80.f, 200.f}, {600.f, 2800.f}}};

/// Subtype order matches the label table columns: ivh, iph, sah, edh, sdh.
struct CategoricalLabel {
  std::uint8_t any = 0;
  std::array<std::uint8_t, 5> subtypes{};

  bool any_subtype_set() const {
    for (auto s : subtypes)
      if (s) return true;
    return false;
  }
};

struct SliceId {
  std::string study_id;
  int slice_index = 0;

  std::string str() const { return study_id + "_" + std::to_string(slice_index); }
  static SliceId parse(const std::string& text);
  bool operator==(const SliceId&) const = default;
};

/// One axial slice with calibrated HU intensities.
struct CtSlice {
  std::string study_id;
  int slice_index = 0;
  GridF hu;
  std::array<float, 2> pixel_spacing{1.f, 1.f};
  CategoricalLabel labels;
  std::optional<MaskGrid> gt_mask;

  SliceId id() const { return {study_id, slice_index}; }
};

/// Three windowed channels at model resolution, min-max scaled to [0, 1],
/// plus the brain mask resampled to the same side.
struct ModelInput {
  std::array<GridF, 3> pixels;
  MaskGrid brain_mask;
  std::string study_id;
  int slice_index = 0;
};

GridF apply_hu_window(const GridF& hu, const WindowSpec& spec);

std::array<GridF, 3> stack_windows(const CtSlice& slice, const std::array<WindowSpec, 3>& specs);

/// Resamples each channel to side x side (box average for integer shrink
/// factors, bilinear otherwise) and min-max scales the three channels jointly.
/// A constant image maps to all zeros. `side` must be divisible by 96.
std::array<GridF, 3> resize_normalize(const std::array<GridF, 3>& channels, int side);

struct BrainMaskParams {
  float hu_lo = 0.f;
  float hu_hi = 100.f;
  int close_radius = 2;
  float air_hu = -500.f;  // the mask never extends into {hu <= air_hu}
};

/// Soft-tissue brain region: HU band threshold, morphological close, largest
/// connected component, hole fill. An empty mask is a legal result.
MaskGrid compute_brain_mask(const GridF& hu, const BrainMaskParams& params = {});

struct CatalogEntry {
  SliceId id;
  CategoricalLabel labels;
  std::filesystem::path slice_path;
  std::optional<std::filesystem::path> mask_path;
};

/// Immutable view of a dataset directory:
///   <root>/slices/<study>_<index>.arr   float32 HU grids
///   <root>/masks/<study>_<index>.arr    optional uint8 ground-truth masks
///   <root>/labels.csv                   id,any,ivh,iph,sah,edh,sdh
struct DatasetCatalog {
  std::filesystem::path root;
  std::vector<CatalogEntry> entries;
  std::vector<std::string> missing_files;  // labeled ids whose slice file is absent

  long positives() const {
    long n = 0;
    for (const auto& e : entries) n += e.labels.any ? 1 : 0;
    return n;
  }
};

DatasetCatalog load_catalog(const std::filesystem::path& root, const std::filesystem::path& label_file);
DatasetCatalog load_catalog(const std::filesystem::path& root);

CtSlice load_slice(const CatalogEntry& entry);

struct SynthConfig {
  int n_slices = 200;
  double positive_fraction = 0.3;
  int side = 96;
  std::array<int, 2> blob_count_range{1, 3};
  std::array<float, 2> blob_intensity_range{55.f, 90.f};  // HU added on top of brain tissue
  float noise_sigma = 4.f;                                // HU
};

/// Deterministic desk-scale dataset: soft-tissue ellipse in air with a thin
/// bone rim; positives carry bright blobs with exact half-max support masks.
std::vector<CtSlice> synth_generate(const SynthConfig& config, std::uint64_t seed);

/// Writes slices in the catalog directory layout (labels.csv, slices/, masks/).
void write_dataset(const std::vector<CtSlice>& slices, const std::filesystem::path& root);

}  // namespace attnseg
