#include <nlohmann/json.hpp>

#include "attnseg/unet.hpp"

namespace attnseg {

std::string unet_config_to_json(const UNetConfig& c) {
  nlohmann::json j;
  j["hierarchies"] = c.hierarchies;
  j["base_channels"] = c.base_channels;
  j["in_channels"] = c.in_channels;
  j["input_side"] = c.input_side;
  return j.dump();
}

UNetConfig unet_config_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  UNetConfig c;
  c.hierarchies = j.at("hierarchies").get<int>();
  c.base_channels = j.at("base_channels").get<int>();
  c.in_channels = j.at("in_channels").get<int>();
  c.input_side = j.at("input_side").get<int>();
  return c;
}

}  // namespace attnseg
