// Command-line front end: synthetic data generation, ingestion checks,
// training, map extraction, segmentation, evaluation and overlays, each
// leaving a manifest so runs can be reproduced exactly.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <nlohmann/json.hpp>

#include "attnseg/array_io.hpp"
#include "attnseg/checkpoint.hpp"
#include "attnseg/errors.hpp"
#include "attnseg/evalkit.hpp"
#include "attnseg/imaging.hpp"
#include "attnseg/pipeline.hpp"
#include "attnseg/runio.hpp"
#include "attnseg/segmenter.hpp"
#include "attnseg/trainer.hpp"

namespace fs = std::filesystem;
using namespace attnseg;

namespace {

struct CommonOpts {
  std::string data_root;
  std::string out_dir;
  std::uint64_t seed = 17;
};

struct ModelOpts {
  std::string preset = "desk";  // desk | base
  int side = 0;                 // 0: preset default
  int unet_base_channels = 0;   // 0: preset default
};

struct TrainOpts {
  std::string mode = "binary_one_logit";
  double lr = 0.0;  // 0: mode default
  double weight_decay = 0.01;
  int batch_size = 8;
  int max_epochs = 20;
  int patience = 3;
  double gamma = -1.0;  // <0: mode default
  double val_fraction = 0.1;
  std::string imbalance;  // empty: mode default
  double flip_prob = 0.5;
  double rotation_deg = 15.0;
  double aug_noise_sigma = 0.01;
};

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::uint64_t dataset_hash(const DatasetCatalog& catalog) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& e : catalog.entries) {
    const std::uint64_t fh = fnv1a_file(e.slice_path);
    h ^= fh;
    h *= 0x100000001b3ULL;
  }
  return h;
}

DatasetCatalog open_catalog(const std::string& root) {
  if (root.empty()) throw UsageError("no data root given; pass --data or set ATTNSEG_DATA_ROOT");
  const fs::path labels = fs::path(root) / "labels.csv";
  if (!fs::exists(labels)) throw DependencyError("label file not found: " + labels.string());
  return load_catalog(root);
}

PreprocessParams preprocess_for_side(int side) {
  PreprocessParams p;
  p.side = side;
  return p;
}

std::vector<TrainItem> load_items(const DatasetCatalog& catalog, const PreprocessParams& prep) {
  std::vector<TrainItem> items;
  items.reserve(catalog.entries.size());
  for (const auto& e : catalog.entries) items.push_back(prepare_train_item(load_slice(e), prep));
  return items;
}

TrainConfig make_train_config(const TrainOpts& t, std::uint64_t seed) {
  TrainConfig cfg = TrainConfig::for_mode(train_mode_from_name(t.mode));
  if (t.lr > 0.0) cfg.learning_rate = t.lr;
  cfg.weight_decay = t.weight_decay;
  cfg.batch_size = t.batch_size;
  cfg.max_epochs = t.max_epochs;
  cfg.patience = t.patience;
  if (t.gamma >= 0.0) cfg.focal_gamma = t.gamma;
  cfg.seed = seed;
  cfg.augment = {t.flip_prob, t.rotation_deg, t.aug_noise_sigma};
  if (t.imbalance == "focal")
    cfg.imbalance = ImbalanceStrategy::FocalLoss;
  else if (t.imbalance == "sampling")
    cfg.imbalance = ImbalanceStrategy::InverseFrequencySampling;
  else if (!t.imbalance.empty())
    throw UsageError("imbalance must be 'focal' or 'sampling'");
  cfg.validate();
  return cfg;
}

SwinConfig make_swin_config(const ModelOpts& m, int num_classes) {
  if (m.preset != "base" && m.preset != "desk") throw UsageError("preset must be 'desk' or 'base'");
  SwinConfig cfg = m.preset == "base" ? SwinConfig{} : SwinConfig::desk_scale();
  if (m.side > 0) cfg.input_side = m.side;
  cfg.num_classes = num_classes;
  cfg.validate();
  return cfg;
}

UNetConfig make_unet_config(const ModelOpts& m) {
  if (m.preset != "base" && m.preset != "desk") throw UsageError("preset must be 'desk' or 'base'");
  UNetConfig cfg = m.preset == "base" ? UNetConfig{} : UNetConfig::desk_scale();
  if (m.side > 0) cfg.input_side = m.side;
  if (m.unet_base_channels > 0) cfg.base_channels = m.unet_base_channels;
  cfg.validate();
  return cfg;
}

std::vector<std::pair<std::string, std::string>> train_config_kv(const TrainConfig& cfg,
                                                                 const std::string& model_json) {
  return {{"mode", train_mode_name(cfg.mode)},
          {"learning_rate", fmt_double(cfg.learning_rate)},
          {"weight_decay", fmt_double(cfg.weight_decay)},
          {"batch_size", std::to_string(cfg.batch_size)},
          {"max_epochs", std::to_string(cfg.max_epochs)},
          {"patience", std::to_string(cfg.patience)},
          {"focal_gamma", fmt_double(cfg.focal_gamma)},
          {"imbalance", cfg.imbalance == ImbalanceStrategy::FocalLoss ? "focal" : "sampling"},
          {"flip_prob", fmt_double(cfg.augment.flip_prob)},
          {"rotation_deg", fmt_double(cfg.augment.rotation_deg)},
          {"aug_noise_sigma", fmt_double(cfg.augment.noise_sigma)},
          {"model", model_json}};
}

int cmd_synth(const CommonOpts& common, const SynthConfig& synth) {
  const fs::path out(common.out_dir);
  fs::create_directories(out);
  const auto slices = synth_generate(synth, common.seed);
  write_dataset(slices, out);
  write_manifest(out, "synth",
                 {{"n_slices", std::to_string(synth.n_slices)},
                  {"positive_fraction", fmt_double(synth.positive_fraction)},
                  {"side", std::to_string(synth.side)},
                  {"blob_count_min", std::to_string(synth.blob_count_range[0])},
                  {"blob_count_max", std::to_string(synth.blob_count_range[1])},
                  {"blob_intensity_min", fmt_double(synth.blob_intensity_range[0])},
                  {"blob_intensity_max", fmt_double(synth.blob_intensity_range[1])},
                  {"noise_sigma", fmt_double(synth.noise_sigma)}},
                 common.seed, {out / "labels.csv"});
  long positives = 0;
  for (const auto& s : slices) positives += s.labels.any;
  std::cout << "wrote " << slices.size() << " slices (" << positives << " positive) under "
            << out.string() << "\n";
  return 0;
}

int cmd_ingest(const CommonOpts& common, const std::string& labels_override,
               const std::string& folds_out, int k, std::uint64_t fold_seed) {
  const fs::path root(common.data_root);
  const fs::path labels = labels_override.empty() ? root / "labels.csv" : fs::path(labels_override);
  const auto catalog = load_catalog(root, labels);
  std::cout << "catalog: " << catalog.entries.size() << " slices, " << catalog.positives()
            << " positive\n";
  if (!catalog.missing_files.empty()) {
    std::cout << "missing slice files (" << catalog.missing_files.size() << "):";
    for (const auto& id : catalog.missing_files) std::cout << " " << id;
    std::cout << "\n";
  }
  long with_mask = 0;
  for (const auto& e : catalog.entries) with_mask += e.mask_path.has_value();
  std::cout << "slices with ground-truth masks: " << with_mask << "\n";
  if (!folds_out.empty()) {
    std::vector<std::string> studies;
    for (const auto& e : catalog.entries) studies.push_back(e.id.study_id);
    const FoldSplit split = make_folds(studies, k, fold_seed);
    save_fold_split(folds_out, split);
    std::cout << "wrote " << k << "-fold study split to " << folds_out << "\n";
  }
  return 0;
}

int cmd_train(const CommonOpts& common, const ModelOpts& model_opts, const TrainOpts& train_opts) {
  const auto catalog = open_catalog(common.data_root);
  if (catalog.entries.empty()) throw UsageError("catalog is empty");
  const fs::path out(common.out_dir);
  fs::create_directories(out);

  const TrainConfig cfg = make_train_config(train_opts, common.seed);
  const int side = model_opts.side > 0      ? model_opts.side
                   : model_opts.preset == "base" ? 384
                                                 : 96;
  const auto items = load_items(catalog, preprocess_for_side(side));
  std::vector<TrainItem> train, val;
  split_train_val(items, train_opts.val_fraction, common.seed, train, val);

  TrainHistory history;
  std::string model_json;
  if (cfg.mode == TrainMode::Unet) {
    ModelOpts mo = model_opts;
    mo.side = side;
    UNetConfig ucfg = make_unet_config(mo);
    UNet<float> model(ucfg, common.seed);
    history = train_unet(model, train, val, cfg);
    model_json = unet_config_to_json(ucfg);
    save_checkpoint(out / "model.ckpt", "unet", model_json, model);
  } else {
    const int classes = cfg.mode == TrainMode::MultiLabel        ? 6
                        : cfg.mode == TrainMode::BinaryTwoLogit ? 2
                                                                 : 1;
    ModelOpts mo = model_opts;
    mo.side = side;
    SwinConfig scfg = make_swin_config(mo, classes);
    SwinModel<float> model(scfg, common.seed);
    history = train_classifier(model, train, val, cfg);
    model_json = swin_config_to_json(scfg);
    save_checkpoint(out / "model.ckpt", "swin", model_json, model);
  }
  write_history_csv(out / "history.csv", history);
  auto kv = train_config_kv(cfg, model_json);
  kv.emplace_back("data_hash", std::to_string(dataset_hash(catalog)));
  kv.emplace_back("val_fraction", fmt_double(train_opts.val_fraction));
  write_manifest(out, "train", kv, common.seed, {fs::path(common.data_root) / "labels.csv"});
  std::cout << "trained " << train_mode_name(cfg.mode) << " for " << history.epochs.size()
            << " epochs (best " << history.best_epoch << ", val loss " << history.best_val_loss
            << "); checkpoint at " << (out / "model.ckpt").string() << "\n";
  return 0;
}

int cmd_finetune(const CommonOpts& common, const std::string& base_ckpt,
                 const TrainOpts& train_opts) {
  if (!fs::exists(base_ckpt)) throw DependencyError("base checkpoint not found: " + base_ckpt);
  const auto catalog = open_catalog(common.data_root);
  const fs::path out(common.out_dir);
  fs::create_directories(out);

  TrainOpts topts = train_opts;
  topts.mode = "binary_two_logit";
  const TrainConfig cfg = make_train_config(topts, common.seed);

  const auto info = peek_checkpoint(base_ckpt);
  if (info.kind != "swin") throw DependencyError("finetune expects a swin checkpoint");
  const SwinConfig base_cfg = swin_config_from_json(info.config_json);

  const auto items = load_items(catalog, preprocess_for_side(base_cfg.input_side));
  std::vector<TrainItem> train, val;
  split_train_val(items, topts.val_fraction, common.seed, train, val);

  TrainHistory history;
  SwinModel<float> model = finetune_two_logit(base_ckpt, train, val, cfg, &history);
  save_checkpoint(out / "model.ckpt", "swin", swin_config_to_json(model.config()), model);
  write_history_csv(out / "history.csv", history);
  auto kv = train_config_kv(cfg, swin_config_to_json(model.config()));
  kv.emplace_back("base_checkpoint", base_ckpt);
  kv.emplace_back("data_hash", std::to_string(dataset_hash(catalog)));
  write_manifest(out, "finetune", kv, common.seed,
                 {fs::path(base_ckpt), fs::path(common.data_root) / "labels.csv"});
  std::cout << "finetuned two-logit model for " << history.epochs.size()
            << " epochs; checkpoint at " << (out / "model.ckpt").string() << "\n";
  return 0;
}

int cmd_extract(const CommonOpts& common, const std::string& ckpt,
                const std::string& method_name_s) {
  if (!fs::exists(ckpt)) throw DependencyError("checkpoint not found: " + ckpt);
  const Method method = method_from_name(method_name_s);
  const auto info = peek_checkpoint(ckpt);

  const auto catalog = open_catalog(common.data_root);
  const fs::path out(common.out_dir);
  fs::create_directories(out / "maps");
  fs::create_directories(out / "brain");

  std::vector<ScoreRow> scores;
  if (method == Method::Unet) {
    check_method_compatible(method, info.kind, 0);
    const UNetConfig ucfg = unet_config_from_json(info.config_json);
    UNet<float> model(ucfg, 0);
    load_checkpoint_into(model, ckpt);
    for (const auto& e : catalog.entries) {
      const auto item = prepare_model_input(load_slice(e), preprocess_for_side(ucfg.input_side));
      const auto r = extract_map_unet(model, item);
      save_fused_map(out / "maps", r.map);
      write_array(out / "brain" / (e.id.str() + ".arr"), item.brain_mask);
      scores.push_back({e.id.str(), r.positive_prob, r.positive_prob >= 0.5 ? 1 : 0});
    }
  } else {
    const SwinConfig scfg = swin_config_from_json(info.config_json);
    check_method_compatible(method, info.kind, scfg.num_classes);
    SwinModel<float> model(scfg, 0);
    load_checkpoint_into(model, ckpt);
    for (const auto& e : catalog.entries) {
      const auto item = prepare_model_input(load_slice(e), preprocess_for_side(scfg.input_side));
      const auto r = extract_map(model, item, method);
      save_fused_map(out / "maps", r.map);
      write_array(out / "brain" / (e.id.str() + ".arr"), item.brain_mask);
      scores.push_back({e.id.str(), r.positive_prob, r.positive_prob >= 0.5 ? 1 : 0});
    }
  }
  write_scores_csv(out / "scores.csv", scores);
  write_manifest(out, "extract",
                 {{"method", method_name_s},
                  {"checkpoint", ckpt},
                  {"data_hash", std::to_string(dataset_hash(catalog))}},
                 common.seed, {fs::path(ckpt), fs::path(common.data_root) / "labels.csv"});
  std::cout << "extracted " << scores.size() << " " << method_name_s << " maps to "
            << (out / "maps").string() << "\n";
  return 0;
}

int cmd_segment(const CommonOpts& common, const std::string& maps_dir,
                const std::string& folds_file, const ThresholdGrid& grid, int min_pixels) {
  const auto catalog = open_catalog(common.data_root);
  const FoldSplit split = load_fold_split(folds_file);
  const fs::path maps(maps_dir);
  if (!fs::exists(maps / "maps"))
    throw DependencyError("maps directory not found: " + (maps / "maps").string());
  const fs::path out(common.out_dir);
  fs::create_directories(out / "masks");

  struct Loaded {
    const CatalogEntry* entry;
    FusedMap map;  // brain-gated for the attention methods
    std::optional<MaskGrid> gt;
    int fold;
  };
  std::vector<Loaded> slices;
  MapMethod method = MapMethod::Sam;
  bool method_known = false;
  for (const auto& e : catalog.entries) {
    const int fold = split.fold_of(e.id.study_id);
    if (fold < 0) continue;
    Loaded item;
    item.entry = &e;
    item.fold = fold;
    item.map = load_fused_map(maps / "maps", e.id.str());
    if (!method_known) {
      method = item.map.method;
      method_known = true;
    }
    if (item.map.method != MapMethod::Unet) {
      const fs::path brain = maps / "brain" / (e.id.str() + ".arr");
      if (!fs::exists(brain)) throw DependencyError("brain mask not found: " + brain.string());
      item.map = gate_by_brain(item.map, read_array_u8(brain));
    }
    if (e.mask_path) {
      const auto slice = load_slice(e);
      item.gt = resize_mask(*slice.gt_mask, static_cast<int>(item.map.values.rows()));
    }
    slices.push_back(std::move(item));
  }
  if (slices.empty()) throw UsageError("no catalog slices appear in the fold split");

  std::map<int, double> fold_thresholds;
  nlohmann::json thresholds_json = nlohmann::json::object();
  for (int f = 0; f < split.k; ++f) {
    double threshold = 0.5;  // unet probabilities use the logistic midpoint
    if (method != MapMethod::Unet) {
      std::vector<std::pair<const FusedMap*, const MaskGrid*>> pairs;
      for (const auto& s : slices)
        if (s.fold != f && s.gt && count_foreground(*s.gt) > 0) pairs.emplace_back(&s.map, &*s.gt);
      if (pairs.empty())
        throw UsageError("fold " + std::to_string(f + 1) +
                         " has no gt-positive validation slices for threshold search");
      threshold = grid_search_threshold(pairs, grid);
    }
    fold_thresholds[f] = threshold;
    thresholds_json["fold_" + std::to_string(f + 1)] = threshold;
  }

  for (const auto& s : slices) {
    SegMask mask = binarize(s.map, fold_thresholds.at(s.fold));
    save_seg_mask(out / "masks", s.entry->id.str(), mask, min_pixels);
  }
  {
    std::ofstream os(out / "thresholds.json");
    os << thresholds_json.dump(2) << "\n";
  }
  write_manifest(out, "segment",
                 {{"maps", maps_dir},
                  {"folds", folds_file},
                  {"grid_start", fmt_double(grid.start)},
                  {"grid_stop", fmt_double(grid.stop)},
                  {"grid_step", fmt_double(grid.step)},
                  {"min_pixels", std::to_string(min_pixels)}},
                 common.seed, {fs::path(folds_file)});
  std::cout << "segmented " << slices.size() << " slices; thresholds in "
            << (out / "thresholds.json").string() << "\n";
  return 0;
}

int cmd_evaluate(const CommonOpts& common, const std::string& masks_dir,
                 const std::string& scores_file, const std::string& folds_file,
                 const std::string& method_override, int min_pixels,
                 const std::string& ttest_against) {
  const auto catalog = open_catalog(common.data_root);
  const FoldSplit split = load_fold_split(folds_file);
  const fs::path masks(masks_dir);
  if (!fs::exists(masks / "masks"))
    throw DependencyError("masks directory not found: " + (masks / "masks").string());

  std::map<std::string, ScoreRow> scores;
  for (const auto& row : read_scores_csv(scores_file)) scores[row.id] = row;

  std::string method;
  std::vector<SliceResult> results;
  for (const auto& e : catalog.entries) {
    if (split.fold_of(e.id.study_id) < 0) continue;
    const SegMask mask = load_seg_mask(masks / "masks", e.id.str());
    if (method.empty()) method = method_override.empty() ? mask.method : method_override;
    SliceResult r;
    r.study_id = e.id.study_id;
    r.slice_index = e.id.slice_index;
    const auto it = scores.find(e.id.str());
    if (it == scores.end())
      throw DependencyError("no score row for slice " + e.id.str() + " in " + scores_file);
    r.score = it->second.score;
    const bool unet = method == "unet";
    r.pred_positive = unet ? (detect_from_mask(mask, min_pixels) ? 1 : 0) : it->second.pred;
    std::optional<MaskGrid> gt;
    if (e.mask_path) {
      const auto slice = load_slice(e);
      gt = resize_mask(*slice.gt_mask, static_cast<int>(mask.mask.rows()));
    }
    r.gt_positive = e.labels.any;
    if (r.gt_positive) {
      if (!gt) throw DependencyError("gt-positive slice without a mask file: " + e.id.str());
      r.dice_score = dice(mask.mask, *gt);
      r.iou_score = iou(mask.mask, *gt);
    }
    results.push_back(std::move(r));
  }

  const FoldReport report = evaluate_method(results, split, method);
  const fs::path out(common.out_dir);
  fs::create_directories(out);
  {
    std::ofstream os(out / "report.csv");
    os << report_csv(report);
  }
  {
    std::ofstream os(out / "report.txt");
    os << report_table_text(report);
  }
  {
    std::ofstream os(out / "per_subject.csv");
    os << "study_id,dice\n";
    for (const auto& [study, d] : report.per_subject_dice)
      os << study << ',' << fmt_double(d) << "\n";
  }
  std::cout << report_table_text(report);

  if (!ttest_against.empty()) {
    std::ifstream is(ttest_against);
    if (!is) throw DependencyError("per-subject file not found: " + ttest_against);
    std::map<std::string, double> other;
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
      const auto c = line.find(',');
      if (c == std::string::npos) continue;
      other[line.substr(0, c)] = std::stod(line.substr(c + 1));
    }
    std::vector<double> mine, theirs;
    for (const auto& [study, d] : report.per_subject_dice) {
      const auto it2 = other.find(study);
      if (it2 == other.end()) continue;
      mine.push_back(d);
      theirs.push_back(it2->second);
    }
    const TTestResult t = paired_ttest(mine, theirs);
    nlohmann::json tj{{"t", t.t}, {"p", t.p}, {"df", t.df}, {"n", mine.size()}};
    std::ofstream os(out / "ttest.json");
    os << tj.dump(2) << "\n";
    std::cout << "paired t-test vs " << ttest_against << ": t=" << t.t << " p=" << t.p
              << " df=" << t.df << "\n";
  }

  write_manifest(out, "evaluate",
                 {{"masks", masks_dir},
                  {"scores", scores_file},
                  {"folds", folds_file},
                  {"method", method},
                  {"min_pixels", std::to_string(min_pixels)}},
                 common.seed, {fs::path(folds_file), fs::path(scores_file)});
  return 0;
}

int cmd_overlay(const CommonOpts& common, const std::string& masks_dir) {
  const auto catalog = open_catalog(common.data_root);
  const fs::path masks(masks_dir);
  const fs::path out(common.out_dir);
  fs::create_directories(out);
  long written = 0;
  for (const auto& e : catalog.entries) {
    const fs::path mask_path = masks / "masks" / (e.id.str() + ".arr");
    if (!fs::exists(mask_path)) continue;
    const SegMask mask = load_seg_mask(masks / "masks", e.id.str());
    const int side = static_cast<int>(mask.mask.rows());
    const auto slice = load_slice(e);
    const auto input = prepare_model_input(slice, preprocess_for_side(side));
    MaskGrid gt = MaskGrid::Zero(side, side);
    if (slice.gt_mask) gt = resize_mask(*slice.gt_mask, side);
    write_overlay_ppm(out / (e.id.str() + ".ppm"), input.pixels[0], mask.mask, gt);
    ++written;
  }
  if (written == 0) throw DependencyError("no masks found under " + (masks / "masks").string());
  std::cout << "wrote " << written << " overlays to " << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"weakly supervised lesion segmentation toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "read options from a config file");

  CommonOpts common;
  SynthConfig synth;
  ModelOpts model_opts;
  TrainOpts train_opts;
  std::string labels_override, folds_out, base_ckpt, ckpt, method, maps_dir, folds_file;
  std::string masks_dir, scores_file, method_override, ttest_against;
  ThresholdGrid grid;
  int fold_k = 5;
  std::uint64_t fold_seed = 17;
  int min_pixels = 10;

  auto add_common = [&common](CLI::App* cmd, bool needs_data, bool needs_out) {
    if (needs_data)
      cmd->add_option("--data", common.data_root, "dataset root directory")
          ->envname("ATTNSEG_DATA_ROOT");
    if (needs_out) cmd->add_option("--out", common.out_dir, "output directory")->required();
    cmd->add_option("--seed", common.seed, "run seed");
  };

  auto* c_synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common(c_synth, false, true);
  c_synth->add_option("--n", synth.n_slices, "number of slices");
  c_synth->add_option("--positive-fraction", synth.positive_fraction, "fraction with lesions")
      ->check(CLI::Range(0.0, 1.0));
  c_synth->add_option("--side", synth.side, "slice side length");
  c_synth->add_option("--blob-count-min", synth.blob_count_range[0]);
  c_synth->add_option("--blob-count-max", synth.blob_count_range[1]);
  c_synth->add_option("--blob-intensity-min", synth.blob_intensity_range[0]);
  c_synth->add_option("--blob-intensity-max", synth.blob_intensity_range[1]);
  c_synth->add_option("--noise-sigma", synth.noise_sigma, "HU noise sigma");

  auto* c_ingest =
      app.add_subcommand("ingest", "validate a dataset directory and emit fold splits");
  add_common(c_ingest, true, false);
  c_ingest->add_option("--labels", labels_override, "label table (default <data>/labels.csv)");
  c_ingest->add_option("--folds-out", folds_out, "write a study-level fold split here");
  c_ingest->add_option("--k", fold_k, "fold count");
  c_ingest->add_option("--fold-seed", fold_seed, "fold split seed");

  auto add_train_opts = [&](CLI::App* cmd) {
    cmd->add_option("--lr", train_opts.lr, "learning rate (0 uses the mode default)");
    cmd->add_option("--weight-decay", train_opts.weight_decay);
    cmd->add_option("--batch-size", train_opts.batch_size);
    cmd->add_option("--max-epochs", train_opts.max_epochs);
    cmd->add_option("--patience", train_opts.patience);
    cmd->add_option("--gamma", train_opts.gamma, "focal gamma (negative uses the mode default)");
    cmd->add_option("--val-fraction", train_opts.val_fraction);
    cmd->add_option("--imbalance", train_opts.imbalance, "focal | sampling");
    cmd->add_option("--flip-prob", train_opts.flip_prob);
    cmd->add_option("--rotation-deg", train_opts.rotation_deg);
    cmd->add_option("--aug-noise-sigma", train_opts.aug_noise_sigma);
  };

  auto* c_train = app.add_subcommand("train", "train a classifier or the unet baseline");
  add_common(c_train, true, true);
  c_train->add_option("--mode", train_opts.mode,
                      "binary_one_logit | binary_two_logit | multi_label | unet");
  c_train->add_option("--preset", model_opts.preset, "desk | base");
  c_train->add_option("--side", model_opts.side, "input side (0: preset default)");
  c_train->add_option("--unet-base-channels", model_opts.unet_base_channels);
  add_train_opts(c_train);

  auto* c_finetune = app.add_subcommand("finetune", "expand a one-logit backbone to two logits");
  add_common(c_finetune, true, true);
  c_finetune->add_option("--base", base_ckpt, "one-logit checkpoint")->required();
  add_train_opts(c_finetune);

  auto* c_extract = app.add_subcommand("extract", "compute saliency maps and detection scores");
  add_common(c_extract, true, true);
  c_extract->add_option("--ckpt", ckpt, "model checkpoint")->required();
  c_extract
      ->add_option("--method", method, "hgi-sam | sam-binary | sam-multilabel | grad-cam | unet")
      ->required();

  auto* c_segment = app.add_subcommand("segment", "binarize maps with fold-wise thresholds");
  add_common(c_segment, true, true);
  c_segment->add_option("--maps", maps_dir, "extract output directory")->required();
  c_segment->add_option("--folds", folds_file, "fold split file")->required();
  c_segment->add_option("--grid-start", grid.start);
  c_segment->add_option("--grid-stop", grid.stop);
  c_segment->add_option("--grid-step", grid.step);
  c_segment->add_option("--min-pixels", min_pixels, "detection floor recorded with the masks");

  auto* c_evaluate = app.add_subcommand("evaluate", "fold-wise segmentation and detection report");
  add_common(c_evaluate, true, true);
  c_evaluate->add_option("--masks", masks_dir, "segment output directory")->required();
  c_evaluate->add_option("--scores", scores_file, "scores.csv from extract")->required();
  c_evaluate->add_option("--folds", folds_file, "fold split file")->required();
  c_evaluate->add_option("--method", method_override, "method tag override");
  c_evaluate->add_option("--min-pixels", min_pixels, "unet detection floor");
  c_evaluate->add_option("--ttest-against", ttest_against,
                         "per-subject csv of another method for a paired t-test");

  auto* c_overlay = app.add_subcommand("overlay", "write prediction/ground-truth overlays");
  add_common(c_overlay, true, true);
  c_overlay->add_option("--masks", masks_dir, "segment output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_synth->parsed()) return cmd_synth(common, synth);
    if (c_ingest->parsed())
      return cmd_ingest(common, labels_override, folds_out, fold_k, fold_seed);
    if (c_train->parsed()) return cmd_train(common, model_opts, train_opts);
    if (c_finetune->parsed()) return cmd_finetune(common, base_ckpt, train_opts);
    if (c_extract->parsed()) return cmd_extract(common, ckpt, method);
    if (c_segment->parsed()) return cmd_segment(common, maps_dir, folds_file, grid, min_pixels);
    if (c_evaluate->parsed())
      return cmd_evaluate(common, masks_dir, scores_file, folds_file, method_override, min_pixels,
                          ttest_against);
    if (c_overlay->parsed()) return cmd_overlay(common, masks_dir);
  } catch (const DependencyError& e) {
    std::cerr << "dependency error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
