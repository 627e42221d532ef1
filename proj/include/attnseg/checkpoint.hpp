#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "attnseg/errors.hpp"
#include "attnseg/swin.hpp"

namespace attnseg {

/// Checkpoint container: "ATSG" magic, format version, a model-kind tag
/// ("swin" or "unet"), the embedded config as JSON, and named float32 tensors.
struct CheckpointInfo {
  std::uint32_t version = 0;
  std::string kind;
  std::string config_json;
};

void save_checkpoint_raw(const std::filesystem::path& path, const std::string& kind,
                         const std::string& config_json,
                         const std::vector<std::pair<std::string, std::vector<float>>>& tensors);

CheckpointInfo peek_checkpoint(const std::filesystem::path& path);

std::map<std::string, std::vector<float>> load_checkpoint_tensors(const std::filesystem::path& path);

template <class Model>
void save_checkpoint(const std::filesystem::path& path, const std::string& kind,
                     const std::string& config_json, Model& model) {
  std::vector<std::pair<std::string, std::vector<float>>> tensors;
  for (const auto& ref : model.parameters()) {
    std::vector<float> data(static_cast<std::size_t>(ref.size));
    for (Index i = 0; i < ref.size; ++i) data[static_cast<std::size_t>(i)] = static_cast<float>(ref.data[i]);
    tensors.emplace_back(ref.name, std::move(data));
  }
  save_checkpoint_raw(path, kind, config_json, tensors);
}

/// Copies tensors into the model by name. With `allow_head_reinit`, head
/// tensors that are absent or differently sized keep their fresh
/// initialization (used when expanding a one-logit head to two).
template <class Model>
void load_checkpoint_into(Model& model, const std::filesystem::path& path,
                          bool allow_head_reinit = false) {
  const auto tensors = load_checkpoint_tensors(path);
  for (auto& ref : model.parameters()) {
    const auto it = tensors.find(ref.name);
    const bool is_head = ref.name.rfind("head.", 0) == 0;
    if (it == tensors.end() || static_cast<Index>(it->second.size()) != ref.size) {
      if (allow_head_reinit && is_head) continue;
      throw DataError("checkpoint tensor missing or mis-sized: " + ref.name + " in " + path.string());
    }
    for (Index i = 0; i < ref.size; ++i)
      ref.data[i] = static_cast<std::remove_pointer_t<decltype(ref.data)>>(it->second[static_cast<std::size_t>(i)]);
  }
}

}  // namespace attnseg
