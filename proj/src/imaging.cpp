#include "attnseg/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "attnseg/array_io.hpp"
#include "attnseg/errors.hpp"
#include "attnseg/image_ops.hpp"
#include "attnseg/rng.hpp"

namespace attnseg {

SliceId SliceId::parse(const std::string& text) {
  const auto pos = text.rfind('_');
  if (pos == std::string::npos || pos == 0 || pos + 1 >= text.size())
    throw ParseError("slice id must look like <study>_<index>: " + text, 0);
  SliceId id;
  id.study_id = text.substr(0, pos);
  try {
    id.slice_index = std::stoi(text.substr(pos + 1));
  } catch (const std::exception&) {
    throw ParseError("non-numeric slice index in id: " + text, 0);
  }
  return id;
}

GridF apply_hu_window(const GridF& hu, const WindowSpec& spec) {
  if (!(spec.width > 0.f)) throw UsageError("window width must be positive");
  const float lo = spec.center - spec.width / 2.f;
  return ((hu - lo) / spec.width).cwiseMax(0.f).cwiseMin(1.f);
}

std::array<GridF, 3> stack_windows(const CtSlice& slice, const std::array<WindowSpec, 3>& specs) {
  return {apply_hu_window(slice.hu, specs[0]), apply_hu_window(slice.hu, specs[1]),
          apply_hu_window(slice.hu, specs[2])};
}

std::array<GridF, 3> resize_normalize(const std::array<GridF, 3>& channels, int side) {
  if (side <= 0 || side % 96 != 0)
    throw UsageError("model side must be a positive multiple of 96, got " + std::to_string(side));
  std::array<GridF, 3> out;
  for (int c = 0; c < 3; ++c) out[c] = resize_grid(channels[c], side, side);
  float lo = out[0].minCoeff(), hi = out[0].maxCoeff();
  for (int c = 1; c < 3; ++c) {
    lo = std::min(lo, out[c].minCoeff());
    hi = std::max(hi, out[c].maxCoeff());
  }
  if (hi > lo) {
    const float inv = 1.f / (hi - lo);
    for (auto& ch : out) ch = (ch - lo) * inv;
  } else {
    for (auto& ch : out) ch.setZero();  // constant image convention
  }
  return out;
}

MaskGrid compute_brain_mask(const GridF& hu, const BrainMaskParams& params) {
  MaskGrid band(hu.rows(), hu.cols());
  for (Index i = 0; i < hu.rows(); ++i)
    for (Index j = 0; j < hu.cols(); ++j)
      band(i, j) = (hu(i, j) >= params.hu_lo && hu(i, j) <= params.hu_hi) ? 1 : 0;
  MaskGrid mask = fill_holes(largest_component(close_disk(band, params.close_radius)));
  // Closing and hole filling may reach over thin structures; never keep air.
  for (Index i = 0; i < hu.rows(); ++i)
    for (Index j = 0; j < hu.cols(); ++j)
      if (hu(i, j) <= params.air_hu) mask(i, j) = 0;
  return mask;
}

namespace {

std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

std::uint8_t parse_flag(const std::string& s, int line) {
  if (s == "0") return 0;
  if (s == "1") return 1;
  throw ParseError("label flag must be 0 or 1, got '" + s + "'", line);
}

}  // namespace

DatasetCatalog load_catalog(const std::filesystem::path& root, const std::filesystem::path& label_file) {
  std::ifstream is(label_file);
  if (!is) throw IoError("cannot open label file: " + label_file.string());

  DatasetCatalog catalog;
  catalog.root = root;

  std::string line;
  int line_no = 0;
  if (!std::getline(is, line)) return catalog;  // empty file: empty catalog
  ++line_no;
  {
    const auto header = split_csv_row(line);
    const std::vector<std::string> expected{"id", "any", "ivh", "iph", "sah", "edh", "sdh"};
    if (header != expected) throw ParseError("label header must be id,any,ivh,iph,sah,edh,sdh", line_no);
  }

  std::vector<std::string> inconsistent;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_csv_row(line);
    if (fields.size() != 7) throw ParseError("expected 7 comma-separated fields", line_no);
    if (fields[0].empty()) throw ParseError("empty id", line_no);

    CatalogEntry entry;
    entry.id = SliceId::parse(fields[0]);
    entry.labels.any = parse_flag(fields[1], line_no);
    for (int k = 0; k < 5; ++k) entry.labels.subtypes[static_cast<std::size_t>(k)] = parse_flag(fields[2 + k], line_no);
    if (!entry.labels.any && entry.labels.any_subtype_set()) inconsistent.push_back(fields[0]);

    entry.slice_path = root / "slices" / (fields[0] + ".arr");
    const auto mask_path = root / "masks" / (fields[0] + ".arr");
    if (std::filesystem::exists(mask_path)) entry.mask_path = mask_path;
    if (!std::filesystem::exists(entry.slice_path)) {
      catalog.missing_files.push_back(fields[0]);
      continue;
    }
    catalog.entries.push_back(std::move(entry));
  }

  if (!inconsistent.empty()) {
    std::string msg = "label rows with any=0 but a subtype flag set:";
    for (const auto& id : inconsistent) msg += " " + id;
    throw DataError(msg);
  }
  return catalog;
}

DatasetCatalog load_catalog(const std::filesystem::path& root) {
  return load_catalog(root, root / "labels.csv");
}

CtSlice load_slice(const CatalogEntry& entry) {
  CtSlice slice;
  slice.study_id = entry.id.study_id;
  slice.slice_index = entry.id.slice_index;
  slice.labels = entry.labels;
  slice.hu = read_array_f32(entry.slice_path);
  if (slice.hu.size() == 0) throw DataError("empty slice array: " + entry.slice_path.string());
  if (entry.mask_path) {
    MaskGrid mask = read_array_u8(*entry.mask_path);
    if (!same_shape(mask, slice.hu))
      throw DataError("mask shape differs from slice for id " + entry.id.str());
    if ((mask > 1).any()) throw DataError("mask values outside {0,1} for id " + entry.id.str());
    slice.gt_mask = std::move(mask);
  }
  return slice;
}

namespace {

struct Ellipse {
  double cy, cx, ry, rx;

  bool contains(double y, double x, double margin = 0.0) const {
    const double dy = (y - cy) / (ry - margin);
    const double dx = (x - cx) / (rx - margin);
    return dy * dy + dx * dx <= 1.0;
  }
};

}  // namespace

std::vector<CtSlice> synth_generate(const SynthConfig& config, std::uint64_t seed) {
  if (config.positive_fraction < 0.0 || config.positive_fraction > 1.0)
    throw UsageError("positive_fraction must lie in [0, 1]");
  if (config.n_slices < 0) throw UsageError("n_slices must be non-negative");
  if (config.side < 16) throw UsageError("side too small");
  if (config.blob_count_range[0] < 1 || config.blob_count_range[1] < config.blob_count_range[0])
    throw UsageError("invalid blob_count_range");

  Rng rng(seed);
  const int n = config.n_slices;
  const auto n_pos = static_cast<int>(std::lround(config.positive_fraction * n));

  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  rng.shuffle(order);
  std::vector<std::uint8_t> is_positive(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n_pos; ++i) is_positive[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;

  constexpr float kAirHu = -1000.f;
  constexpr float kBrainHu = 30.f;
  constexpr float kBoneHu = 1200.f;

  std::vector<CtSlice> slices;
  slices.reserve(static_cast<std::size_t>(n));
  const double side = config.side;

  for (int idx = 0; idx < n; ++idx) {
    CtSlice slice;
    {
      char buf[16];
      std::snprintf(buf, sizeof buf, "s%04d", idx);
      slice.study_id = buf;
    }
    slice.slice_index = 0;

    Ellipse brain;
    brain.cy = side / 2.0 + rng.uniform(-side / 24.0, side / 24.0);
    brain.cx = side / 2.0 + rng.uniform(-side / 24.0, side / 24.0);
    brain.ry = rng.uniform(0.30, 0.38) * side;
    brain.rx = rng.uniform(0.30, 0.38) * side;
    const double rim = std::max(2.0, side / 40.0);

    GridF hu = GridF::Constant(config.side, config.side, kAirHu);
    for (Index i = 0; i < hu.rows(); ++i)
      for (Index j = 0; j < hu.cols(); ++j) {
        if (brain.contains(double(i), double(j))) {
          hu(i, j) = kBrainHu;
        } else if (brain.contains(double(i), double(j), -rim)) {
          hu(i, j) = kBoneHu;
        }
      }

    MaskGrid gt = MaskGrid::Zero(config.side, config.side);
    if (is_positive[static_cast<std::size_t>(idx)]) {
      const int blobs =
          static_cast<int>(rng.uniform_int(config.blob_count_range[0], config.blob_count_range[1]));
      for (int b = 0; b < blobs; ++b) {
        const double sigma = rng.uniform(side / 32.0, side / 18.0);
        const double half_max_r = sigma * std::sqrt(2.0 * std::log(2.0));
        // Keep the half-max support strictly inside the soft-tissue ellipse.
        double by = brain.cy, bx = brain.cx;
        for (int attempt = 0; attempt < 64; ++attempt) {
          const double y = rng.uniform(brain.cy - brain.ry, brain.cy + brain.ry);
          const double x = rng.uniform(brain.cx - brain.rx, brain.cx + brain.rx);
          if (brain.contains(y, x, half_max_r + 2.0)) {
            by = y;
            bx = x;
            break;
          }
        }
        const float peak = static_cast<float>(
            rng.uniform(config.blob_intensity_range[0], config.blob_intensity_range[1]));
        const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
        for (Index i = 0; i < hu.rows(); ++i)
          for (Index j = 0; j < hu.cols(); ++j) {
            if (!brain.contains(double(i), double(j))) continue;
            const double d2 = (i - by) * (i - by) + (j - bx) * (j - bx);
            const double g = std::exp(-d2 * inv2s2);
            hu(i, j) += static_cast<float>(peak * g);
            if (g >= 0.5) gt(i, j) = 1;
          }
      }
    }

    if (config.noise_sigma > 0.f)
      for (Index i = 0; i < hu.rows(); ++i)
        for (Index j = 0; j < hu.cols(); ++j)
          hu(i, j) += static_cast<float>(rng.normal(0.0, config.noise_sigma));

    slice.hu = std::move(hu);
    slice.labels.any = is_positive[static_cast<std::size_t>(idx)];
    if (slice.labels.any) slice.labels.subtypes[1] = 1;  // iph: parenchymal blobs
    slice.gt_mask = std::move(gt);
    slices.push_back(std::move(slice));
  }
  return slices;
}

void write_dataset(const std::vector<CtSlice>& slices, const std::filesystem::path& root) {
  std::filesystem::create_directories(root / "slices");
  std::filesystem::create_directories(root / "masks");
  std::ofstream labels(root / "labels.csv");
  if (!labels) throw IoError("cannot write labels.csv under " + root.string());
  labels << "id,any,ivh,iph,sah,edh,sdh\n";
  for (const auto& slice : slices) {
    const std::string id = slice.id().str();
    labels << id << ',' << int(slice.labels.any);
    for (auto s : slice.labels.subtypes) labels << ',' << int(s);
    labels << '\n';
    write_array(root / "slices" / (id + ".arr"), slice.hu);
    if (slice.gt_mask) write_array(root / "masks" / (id + ".arr"), *slice.gt_mask);
  }
  if (!labels) throw IoError("write failed for labels.csv");
}

}  // namespace attnseg
