#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "epcfusion/datahub/records.hpp"
#include "epcfusion/error.hpp"

namespace epcfusion::fusionnet {

enum class Modality { Tabular = 0, Text = 1, Spatial = 2 };

inline constexpr std::array<std::string_view, 3> kModalityNames = {"tab", "text", "spatial"};

/// Subset of {tab, text, spatial}; encoder order is always tab, text, spatial.
struct Modalities {
  bool tab = true;
  bool text = true;
  bool spatial = true;

  static Modalities all() { return {}; }

  bool has(Modality m) const {
    switch (m) {
      case Modality::Tabular: return tab;
      case Modality::Text: return text;
      case Modality::Spatial: return spatial;
    }
    return false;
  }

  int count() const { return static_cast<int>(tab) + static_cast<int>(text) + static_cast<int>(spatial); }

  std::vector<Modality> list() const {
    std::vector<Modality> out;
    if (tab) out.push_back(Modality::Tabular);
    if (text) out.push_back(Modality::Text);
    if (spatial) out.push_back(Modality::Spatial);
    return out;
  }

  std::string name() const {
    std::string out;
    for (Modality m : list()) {
      if (!out.empty()) out += "+";
      out += kModalityNames[static_cast<std::size_t>(m)];
    }
    return out;
  }

  static Modalities parse(const std::string& text_spec) {
    Modalities m{false, false, false};
    std::size_t start = 0;
    while (start <= text_spec.size()) {
      const std::size_t end = std::min(text_spec.find_first_of("+,", start), text_spec.size());
      const std::string token = text_spec.substr(start, end - start);
      if (token == "tab" || token == "tabular") {
        m.tab = true;
      } else if (token == "text") {
        m.text = true;
      } else if (token == "spatial") {
        m.spatial = true;
      } else if (token == "all") {
        m = all();
      } else if (!token.empty()) {
        fail(ErrorKind::InvalidConfig, "unknown modality '" + token + "'");
      }
      start = end + 1;
    }
    if (m.count() == 0) fail(ErrorKind::InvalidConfig, "modality subset is empty");
    return m;
  }

  // The seven non-empty subsets in reporting order.
  static std::vector<Modalities> ablation_suite() {
    return {{true, false, false}, {false, true, false}, {false, false, true}, {true, true, false},
            {true, false, true},  {false, true, true},  {true, true, true}};
  }

  friend bool operator==(const Modalities&, const Modalities&) = default;
};

struct ModelConfig {
  int d = 128;           // unified latent width
  int e = 64;            // categorical embedding width
  int h = static_cast<int>(datahub::kTextDim);
  int boundary_length = 128;
  std::vector<int> numeric_mlp = {128, 64};
  std::vector<int> spatial_numeric_mlp = {64, 32};
  int gate_hidden = 128;
  std::vector<int> fusion_mlp = {256, 128};
  double dropout = 0.1;
  int n_bands = 7;
  std::array<int, datahub::kNumCategorical> vocab_sizes = {1, 1, 1, 1, 1};
  Modalities modalities;

  void validate() const {
    auto positive = [](int v, const char* what) {
      if (v <= 0) fail(ErrorKind::InvalidConfig, std::string("model ") + what + " must be > 0");
    };
    positive(d, "d");
    positive(e, "e");
    positive(h, "h");
    positive(boundary_length, "boundary_length");
    positive(gate_hidden, "gate_hidden");
    positive(n_bands, "n_bands");
    for (int v : numeric_mlp) positive(v, "numeric_mlp width");
    for (int v : spatial_numeric_mlp) positive(v, "spatial_numeric_mlp width");
    for (int v : fusion_mlp) positive(v, "fusion_mlp width");
    for (int v : vocab_sizes) positive(v, "vocabulary size");
    if (numeric_mlp.empty() || spatial_numeric_mlp.empty() || fusion_mlp.empty()) {
      fail(ErrorKind::InvalidConfig, "MLP width lists must be non-empty");
    }
    if (dropout < 0.0 || dropout >= 1.0) fail(ErrorKind::InvalidConfig, "dropout must be in [0, 1)");
    if (modalities.count() == 0) fail(ErrorKind::InvalidConfig, "modality subset is empty");
  }

  nlohmann::json to_json() const {
    return {{"d", d},
            {"e", e},
            {"h", h},
            {"boundary_length", boundary_length},
            {"numeric_mlp", numeric_mlp},
            {"spatial_numeric_mlp", spatial_numeric_mlp},
            {"gate_hidden", gate_hidden},
            {"fusion_mlp", fusion_mlp},
            {"dropout", dropout},
            {"n_bands", n_bands},
            {"vocab_sizes", vocab_sizes},
            {"modalities", modalities.name()}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    try {
      c.d = j.at("d").get<int>();
      c.e = j.at("e").get<int>();
      c.h = j.at("h").get<int>();
      c.boundary_length = j.at("boundary_length").get<int>();
      c.numeric_mlp = j.at("numeric_mlp").get<std::vector<int>>();
      c.spatial_numeric_mlp = j.at("spatial_numeric_mlp").get<std::vector<int>>();
      c.gate_hidden = j.at("gate_hidden").get<int>();
      c.fusion_mlp = j.at("fusion_mlp").get<std::vector<int>>();
      c.dropout = j.at("dropout").get<double>();
      c.n_bands = j.at("n_bands").get<int>();
      c.vocab_sizes = j.at("vocab_sizes").get<std::array<int, datahub::kNumCategorical>>();
      c.modalities = Modalities::parse(j.at("modalities").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::SchemaMismatch, std::string("model config: ") + e.what());
    }
    c.validate();
    return c;
  }
};

}  // namespace epcfusion::fusionnet
