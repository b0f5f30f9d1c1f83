#pragma once

// Run configuration: one TOML file, merged over built-in defaults, with
// `section.key=value` overrides from the command line. Unknown keys are
// rejected so a typo cannot silently fall back to a default.

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>
#include <toml.hpp>

#include "epcfusion/datahub/bands.hpp"
#include "epcfusion/datahub/split.hpp"
#include "epcfusion/datahub/synth.hpp"
#include "epcfusion/diffcore/checkpoint.hpp"
#include "epcfusion/error.hpp"
#include "epcfusion/explain/common.hpp"
#include "epcfusion/fusionnet/config.hpp"
#include "epcfusion/trainer/train.hpp"

namespace epcfusion::cli {

namespace fs = std::filesystem;
using nlohmann::json;

struct DataPaths {
  std::string properties = "data/properties.csv";
  std::string boundaries = "data/boundaries.jsonl";
  std::string text_embeddings = "data/text_embeddings.jsonl";
  std::string mask_embeddings = "data/mask_embeddings.jsonl";
  std::string replacement_embeddings = "data/replacement_embeddings.jsonl";
};

struct ExplainConfig {
  std::size_t background = 32;
  std::size_t samples = 256;       // explained test rows for shapley
  std::size_t saliency_count = 3;  // first test rows when no uprns are given
  std::vector<std::string> saliency_uprns;
};

struct RunConfig {
  std::uint64_t seed = 7;
  std::string output_dir = "out";
  DataPaths data;
  datahub::SplitRatios split;
  datahub::BandTable bands;
  fusionnet::ModelConfig model;
  trainer::TrainConfig train;
  ExplainConfig explain;
  datahub::SynthOptions synth;
  fs::path base_dir = ".";  // relative paths resolve against the config file

  fs::path resolve(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  }

  // Canonical form; vocabulary sizes come from the data and are left out.
  json to_json() const {
    json m = model.to_json();
    m.erase("vocab_sizes");
    json t = train.to_json();
    const json loss = t["loss"];
    t.erase("loss");
    const auto& s = synth;
    return {{"seed", seed},
            {"output_dir", output_dir},
            {"data",
             {{"properties", data.properties},
              {"boundaries", data.boundaries},
              {"text_embeddings", data.text_embeddings},
              {"mask_embeddings", data.mask_embeddings},
              {"replacement_embeddings", data.replacement_embeddings}}},
            {"split", {{"train", split.train}, {"val", split.val}, {"test", split.test}}},
            {"bands", {{"min_score", bands.min_score}}},
            {"model", m},
            {"loss", loss},
            {"train", t},
            {"explain",
             {{"background", explain.background},
              {"samples", explain.samples},
              {"saliency_count", explain.saliency_count},
              {"saliency_uprns", explain.saliency_uprns}}},
            {"synth",
             {{"count", s.count},
              {"tab_weight", s.tab_weight},
              {"text_weight", s.text_weight},
              {"spatial_weight", s.spatial_weight},
              {"noise_sd", s.noise_sd},
              {"linear_tabular", s.linear_tabular},
              {"missing_text_rate", s.missing_text_rate},
              {"missing_numeric_rate", s.missing_numeric_rate},
              {"outbuilding_rate", s.outbuilding_rate},
              {"wall_direction_norm", s.wall_direction_norm}}}};
  }

  std::string hash() const { return explain::hex64(diffcore::fnv1a64(to_json().dump())); }
};

namespace detail {

inline json toml_to_json(const toml::node& node) {
  if (const auto* t = node.as_table()) {
    json j = json::object();
    for (const auto& [k, v] : *t) j[std::string(k.str())] = toml_to_json(v);
    return j;
  }
  if (const auto* a = node.as_array()) {
    json j = json::array();
    for (const auto& v : *a) j.push_back(toml_to_json(v));
    return j;
  }
  if (const auto* v = node.as_string()) return v->get();
  if (const auto* v = node.as_integer()) return v->get();
  if (const auto* v = node.as_floating_point()) return v->get();
  if (const auto* v = node.as_boolean()) return v->get();
  fail(ErrorKind::InvalidConfig, "unsupported TOML value (dates and times are not used)");
}

inline bool compatible(const json& def, const json& value) {
  if (def.is_null()) return value.is_number() || value.is_null();
  if (def.is_number_float()) return value.is_number();
  if (def.is_number_unsigned() || def.is_number_integer()) return value.is_number_integer();
  if (def.is_array()) return value.is_array();
  return def.type() == value.type();
}

// Overlays `user` onto `base`; every user key must already exist in base.
inline void merge(json& base, const json& user, const std::string& where) {
  if (!user.is_object()) fail(ErrorKind::InvalidConfig, "config section '" + where + "' must be a table");
  for (const auto& [key, value] : user.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!base.contains(key)) fail(ErrorKind::InvalidConfig, "unknown config key '" + path + "'");
    json& slot = base[key];
    if (slot.is_object()) {
      merge(slot, value, path);
    } else if (!compatible(slot, value)) {
      fail(ErrorKind::InvalidConfig, "config key '" + path + "' has the wrong type");
    } else {
      slot = value;
    }
  }
}

template <typename T>
T get(const json& j, const char* section, const char* key) {
  try {
    return j.at(section).at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorKind::InvalidConfig, std::string("config key '") + section + "." + key + "': " + e.what());
  }
}

}  // namespace detail

inline RunConfig config_from_json(const json& j, fs::path base_dir) {
  RunConfig c;
  c.base_dir = std::move(base_dir);
  try {
    c.seed = j.at("seed").get<std::uint64_t>();
    c.output_dir = j.at("output_dir").get<std::string>();
  } catch (const json::exception& e) {
    fail(ErrorKind::InvalidConfig, std::string("config: ") + e.what());
  }
  using detail::get;
  c.data.properties = get<std::string>(j, "data", "properties");
  c.data.boundaries = get<std::string>(j, "data", "boundaries");
  c.data.text_embeddings = get<std::string>(j, "data", "text_embeddings");
  c.data.mask_embeddings = get<std::string>(j, "data", "mask_embeddings");
  c.data.replacement_embeddings = get<std::string>(j, "data", "replacement_embeddings");
  c.split.train = get<double>(j, "split", "train");
  c.split.val = get<double>(j, "split", "val");
  c.split.test = get<double>(j, "split", "test");
  c.split.validate();
  const auto bands = get<std::vector<double>>(j, "bands", "min_score");
  if (bands.size() != datahub::kNumBands) fail(ErrorKind::InvalidConfig, "bands.min_score needs 7 thresholds");
  std::copy(bands.begin(), bands.end(), c.bands.min_score.begin());
  c.bands.validate();

  json model = j.at("model");
  model["vocab_sizes"] = c.model.vocab_sizes;
  try {
    c.model = fusionnet::ModelConfig::from_json(model);
  } catch (const Error& e) {
    fail(ErrorKind::InvalidConfig, e.what());
  }

  auto& t = c.train;
  t.batch_size = get<std::size_t>(j, "train", "batch_size");
  t.max_epochs = get<int>(j, "train", "max_epochs");
  t.lr = get<double>(j, "train", "lr");
  t.projection_lr = get<double>(j, "train", "projection_lr");
  t.clip_norm = get<double>(j, "train", "clip_norm");
  t.plateau_factor = get<double>(j, "train", "plateau_factor");
  t.plateau_patience = get<int>(j, "train", "plateau_patience");
  t.early_stop_patience = get<int>(j, "train", "early_stop_patience");
  const json& target = j.at("train").at("target_val_r2");
  if (!target.is_null()) t.target_val_r2 = target.get<double>();
  t.loss.delta = get<double>(j, "loss", "delta");
  t.loss.w_sap = get<double>(j, "loss", "w_sap");
  t.loss.w_ei = get<double>(j, "loss", "w_ei");
  t.validate();

  c.explain.background = get<std::size_t>(j, "explain", "background");
  c.explain.samples = get<std::size_t>(j, "explain", "samples");
  c.explain.saliency_count = get<std::size_t>(j, "explain", "saliency_count");
  c.explain.saliency_uprns = get<std::vector<std::string>>(j, "explain", "saliency_uprns");
  if (c.explain.background == 0) fail(ErrorKind::InvalidConfig, "explain.background must be >= 1");

  auto& s = c.synth;
  s.count = get<std::size_t>(j, "synth", "count");
  s.tab_weight = get<double>(j, "synth", "tab_weight");
  s.text_weight = get<double>(j, "synth", "text_weight");
  s.spatial_weight = get<double>(j, "synth", "spatial_weight");
  s.noise_sd = get<double>(j, "synth", "noise_sd");
  s.linear_tabular = get<bool>(j, "synth", "linear_tabular");
  s.missing_text_rate = get<double>(j, "synth", "missing_text_rate");
  s.missing_numeric_rate = get<double>(j, "synth", "missing_numeric_rate");
  s.outbuilding_rate = get<double>(j, "synth", "outbuilding_rate");
  s.wall_direction_norm = get<double>(j, "synth", "wall_direction_norm");
  s.seed = c.seed;
  s.text_dim = static_cast<std::size_t>(c.model.h);
  return c;
}

inline json parse_toml(std::string_view text, const std::string& source) {
  try {
    return detail::toml_to_json(toml::parse(text, source));
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << source << ':' << e.source().begin.line << ':' << e.source().begin.column << ": " << e.description();
    fail(ErrorKind::InvalidConfig, msg.str());
  }
}

// "section.key=value"; the value is read as a TOML value, or as a bare string.
inline void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    fail(ErrorKind::InvalidConfig, "override '" + assignment + "' is not of the form section.key=value");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = detail::toml_to_json(toml::parse("v = " + raw)).at("v");
  } catch (const toml::parse_error&) {
    value = raw;
  }
  json patch = value;
  std::vector<std::string> keys;
  std::stringstream ss(path);
  for (std::string k; std::getline(ss, k, '.');) keys.push_back(k);
  for (auto it = keys.rbegin(); it != keys.rend(); ++it) patch = json{{*it, patch}};
  detail::merge(j, patch, "");
}

inline RunConfig load_config(const std::optional<fs::path>& file, const std::vector<std::string>& overrides = {}) {
  json j = RunConfig{}.to_json();
  fs::path base = ".";
  if (file) {
    std::ifstream in(*file, std::ios::binary);
    if (!in) fail(ErrorKind::MissingFile, "config file not found: " + file->string());
    std::stringstream buf;
    buf << in.rdbuf();
    detail::merge(j, parse_toml(buf.str(), file->string()), "");
    base = file->parent_path().empty() ? fs::path(".") : file->parent_path();
  }
  for (const auto& o : overrides) apply_override(j, o);
  return config_from_json(j, base);
}

}  // namespace epcfusion::cli
