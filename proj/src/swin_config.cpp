#include <nlohmann/json.hpp>

#include "attnseg/swin.hpp"

namespace attnseg {

std::string swin_config_to_json(const SwinConfig& c) {
  nlohmann::json j;
  j["input_side"] = c.input_side;
  j["patch_size"] = c.patch_size;
  j["window_size"] = c.window_size;
  j["embed_dim"] = c.embed_dim;
  j["depths"] = c.depths;
  j["num_heads"] = c.num_heads;
  j["num_classes"] = c.num_classes;
  j["mlp_ratio"] = c.mlp_ratio;
  j["dropout"] = c.dropout;
  j["drop_path"] = c.drop_path;
  return j.dump();
}

SwinConfig swin_config_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  SwinConfig c;
  c.input_side = j.at("input_side").get<int>();
  c.patch_size = j.at("patch_size").get<int>();
  c.window_size = j.at("window_size").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.depths = j.at("depths").get<std::array<int, 4>>();
  c.num_heads = j.at("num_heads").get<std::array<int, 4>>();
  c.num_classes = j.at("num_classes").get<int>();
  c.mlp_ratio = j.at("mlp_ratio").get<float>();
  c.dropout = j.value("dropout", 0.f);
  c.drop_path = j.value("drop_path", 0.f);
  return c;
}

}  // namespace attnseg
