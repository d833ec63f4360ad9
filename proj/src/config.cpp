#include "m3ae/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "m3ae/error.hpp"

namespace m3ae {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "' expects a boolean, got '" + v + "'");
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream is(v);
  T out{};
  is >> out;
  if (!is || !is.eof()) throw ConfigError("config key '" + key + "' expects a number, got '" + v + "'");
  return out;
}

std::vector<std::string> split_names(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

TrainConfig TrainConfig::full_scale() { return TrainConfig{}; }

TrainConfig TrainConfig::desk_scale() {
  TrainConfig c;
  c.net.base_channels = 8;
  c.net.blocks_per_level = 1;
  c.pretrain_epochs = 50;
  c.finetune_epochs = 50;
  c.batch = 2;
  c.crop_side = 16;
  c.patch_side = 4;
  c.lr0 = 2e-3;
  c.checkpoint_every = 10;
  return c;
}

void TrainConfig::validate() const {
  net.validate();
  weights.validate();
  if (!(lr0 > 0.0)) throw ConfigError("lr0 must be positive");
  if (pretrain_epochs <= 0 || finetune_epochs <= 0) throw ConfigError("epoch counts must be positive");
  if (batch <= 0) throw ConfigError("batch must be positive");
  if (!(mask_rate > 0.0 && mask_rate < 1.0)) throw ConfigError("mask_rate must lie in (0, 1)");
  if (patch_side <= 0 || crop_side <= 0 || crop_side % patch_side != 0)
    throw ConfigError("crop_side must be a positive multiple of patch_side");
  if (crop_side % (1 << (net.levels - 1)) != 0)
    throw ConfigError("crop_side must be divisible by 2^(levels-1)");
  if (checkpoint_every <= 0 || loader_workers <= 0 || queue_depth <= 0)
    throw ConfigError("checkpoint_every, loader_workers and queue_depth must be positive");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must lie in (0, 1)");
  if (static_cast<int>(modality_names.size()) != net.in_channels)
    throw ConfigError("modality_names must list one name per input channel");
}

nlohmann::json TrainConfig::to_json() const {
  return {
      {"in_channels", net.in_channels},
      {"base_channels", net.base_channels},
      {"levels", net.levels},
      {"groups_per_norm", net.groups_per_norm},
      {"out_regions", net.out_regions},
      {"blocks_per_level", net.blocks_per_level},
      {"lambda_con", weights.lambda_con},
      {"gamma_reg", weights.gamma_reg},
      {"dice_smooth", weights.dice_smooth},
      {"lr0", lr0},
      {"pretrain_epochs", pretrain_epochs},
      {"finetune_epochs", finetune_epochs},
      {"batch", batch},
      {"crop_side", crop_side},
      {"mask_rate", mask_rate},
      {"patch_side", patch_side},
      {"seed", seed},
      {"fill", to_string(fill)},
      {"patch_masking", patch_masking},
      {"distill", distill},
      {"checkpoint_every", checkpoint_every},
      {"loader_workers", loader_workers},
      {"queue_depth", queue_depth},
      {"threshold", threshold},
      {"modality_names", modality_names},
  };
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.net.in_channels = j.at("in_channels");
  c.net.base_channels = j.at("base_channels");
  c.net.levels = j.at("levels");
  c.net.groups_per_norm = j.at("groups_per_norm");
  c.net.out_regions = j.at("out_regions");
  c.net.blocks_per_level = j.at("blocks_per_level");
  c.weights.lambda_con = j.at("lambda_con");
  c.weights.gamma_reg = j.at("gamma_reg");
  c.weights.dice_smooth = j.at("dice_smooth");
  c.lr0 = j.at("lr0");
  c.pretrain_epochs = j.at("pretrain_epochs");
  c.finetune_epochs = j.at("finetune_epochs");
  c.batch = j.at("batch");
  c.crop_side = j.at("crop_side");
  c.mask_rate = j.at("mask_rate");
  c.patch_side = j.at("patch_side");
  c.seed = j.at("seed");
  c.fill = fill_mode_from_string(j.at("fill"));
  c.patch_masking = j.at("patch_masking");
  c.distill = j.at("distill");
  c.checkpoint_every = j.at("checkpoint_every");
  c.loader_workers = j.at("loader_workers");
  c.queue_depth = j.at("queue_depth");
  c.threshold = j.at("threshold");
  c.modality_names = j.at("modality_names").get<std::vector<std::string>>();
  return c;
}

TrainConfig TrainConfig::parse(const std::string& text, const TrainConfig& base) {
  TrainConfig c = base;
  using Setter = std::function<void(const std::string&, const std::string&)>;
  const std::map<std::string, Setter> setters = {
      {"in_channels", [&](auto& k, auto& v) { c.net.in_channels = parse_number<int>(k, v); }},
      {"base_channels", [&](auto& k, auto& v) { c.net.base_channels = parse_number<int>(k, v); }},
      {"levels", [&](auto& k, auto& v) { c.net.levels = parse_number<int>(k, v); }},
      {"groups_per_norm", [&](auto& k, auto& v) { c.net.groups_per_norm = parse_number<int>(k, v); }},
      {"blocks_per_level", [&](auto& k, auto& v) { c.net.blocks_per_level = parse_number<int>(k, v); }},
      {"lambda_con", [&](auto& k, auto& v) { c.weights.lambda_con = parse_number<double>(k, v); }},
      {"gamma_reg", [&](auto& k, auto& v) { c.weights.gamma_reg = parse_number<double>(k, v); }},
      {"dice_smooth", [&](auto& k, auto& v) { c.weights.dice_smooth = parse_number<double>(k, v); }},
      {"lr0", [&](auto& k, auto& v) { c.lr0 = parse_number<double>(k, v); }},
      {"pretrain_epochs", [&](auto& k, auto& v) { c.pretrain_epochs = parse_number<int>(k, v); }},
      {"finetune_epochs", [&](auto& k, auto& v) { c.finetune_epochs = parse_number<int>(k, v); }},
      {"batch", [&](auto& k, auto& v) { c.batch = parse_number<int>(k, v); }},
      {"crop_side", [&](auto& k, auto& v) { c.crop_side = parse_number<int>(k, v); }},
      {"mask_rate", [&](auto& k, auto& v) { c.mask_rate = parse_number<double>(k, v); }},
      {"patch_side", [&](auto& k, auto& v) { c.patch_side = parse_number<int>(k, v); }},
      {"seed", [&](auto& k, auto& v) { c.seed = parse_number<std::uint64_t>(k, v); }},
      {"fill", [&](auto&, auto& v) { c.fill = fill_mode_from_string(v); }},
      {"patch_masking", [&](auto& k, auto& v) { c.patch_masking = parse_bool(k, v); }},
      {"distill", [&](auto& k, auto& v) { c.distill = parse_bool(k, v); }},
      {"checkpoint_every", [&](auto& k, auto& v) { c.checkpoint_every = parse_number<int>(k, v); }},
      {"loader_workers", [&](auto& k, auto& v) { c.loader_workers = parse_number<int>(k, v); }},
      {"queue_depth", [&](auto& k, auto& v) { c.queue_depth = parse_number<int>(k, v); }},
      {"threshold", [&](auto& k, auto& v) { c.threshold = parse_number<double>(k, v); }},
      {"modality_names", [&](auto&, auto& v) { c.modality_names = split_names(v); }},
  };

  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key == "preset") {
      if (value == "desk")
        c = desk_scale();
      else if (value == "full")
        c = full_scale();
      else
        throw ConfigError("config line " + std::to_string(lineno) + ": unknown preset '" + value + "'");
      continue;
    }
    const auto it = setters.find(key);
    if (it == setters.end())
      throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    it->second(key, value);
  }
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path, const TrainConfig& base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), base);
}

std::string TrainConfig::dump() const {
  std::ostringstream os;
  os.precision(17);
  const auto j = to_json();
  for (const auto& [key, value] : j.items()) {
    if (key == "out_regions") continue;
    os << key << " = ";
    if (value.is_string())
      os << value.get<std::string>();
    else if (value.is_array()) {
      bool first = true;
      for (const auto& v : value) {
        os << (first ? "" : ",") << v.get<std::string>();
        first = false;
      }
    } else
      os << value.dump();
    os << '\n';
  }
  return os.str();
}

}  // namespace m3ae
