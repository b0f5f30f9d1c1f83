#pragma once

// Synthetic EPC-like corpus with planted signal in every modality.
//
//   SAP = 58 + w_tab*T_sap + w_text*9*t + w_spatial*(6.3*za + 6.3*zh) + N(0, noise^2)
//   EI  = 55 + w_tab*T_ei  + w_text*8*t + w_spatial*(5.0*za + 7.0*zh) + N(0, noise^2)
//
//   T_sap = 6*zf - q*(zf^2 - 1) + 7*zp + s*5.5*zg
//   T_ei  = 4*zf + 9*zp + s*(6*zg + fuel_effect)
//
// with zf = (ln TFA - ln 85)/0.35, zp = photo_supply/30, zg = standardized age
// band index, za = (ln area - ln 70)/0.4, zh = (height - 21.5)/(37/sqrt(12)),
// q = 1.2 and s = 1 unless `linear_tabular` (then q = s = 0). t ~ N(0, 1) is
// carried only by the walls embedding along a fixed direction u. Scores are
// clamped to [1, 100].

#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "epcfusion/datahub/ingest.hpp"
#include "epcfusion/datahub/records.hpp"
#include "epcfusion/format.hpp"
#include "epcfusion/geometry.hpp"
#include "epcfusion/random.hpp"

namespace epcfusion::datahub {

struct SynthOptions {
  std::size_t count = 10000;
  std::uint64_t seed = 1;
  std::size_t text_dim = kTextDim;
  double tab_weight = 1.0;
  double text_weight = 1.0;
  double spatial_weight = 1.0;
  double noise_sd = 3.0;
  bool linear_tabular = false;
  // Skips the embedding rows entirely (split/sampler studies at large n).
  bool with_text = true;
  double missing_text_rate = 0.05;     // per non-walls field
  double missing_numeric_rate = 0.03;  // number_heated_rooms only
  double outbuilding_rate = 0.05;      // second, smaller polygon per uprn
  double wall_direction_norm = 3.0;
};

struct SynthDataset {
  std::vector<EpcRow> epc;
  std::vector<BoundaryRow> boundaries;
  std::vector<EmbeddingRow> embeddings;
  std::array<Embedding, kNumTextFields> masks{};
  std::map<std::string, Embedding> replacements;
  std::vector<double> wall_signal;  // t per EPC row
};

inline constexpr std::array<const char*, 5> kSynthPropertyTypes = {"House", "Flat", "Bungalow", "Maisonette",
                                                                   "Park home"};
inline constexpr std::array<double, 5> kSynthPropertyTypeWeights = {0.45, 0.35, 0.10, 0.08, 0.02};
inline constexpr std::array<const char*, 6> kSynthBuiltForms = {
    "Detached", "Semi-Detached", "Mid-Terrace", "End-Terrace", "Enclosed Mid-Terrace", "Enclosed End-Terrace"};
inline constexpr std::array<const char*, 12> kSynthAgeBands = {
    "before 1900", "1900-1929", "1930-1949", "1950-1966", "1967-1975", "1976-1982",
    "1983-1990",   "1991-1995", "1996-2002", "2003-2006", "2007-2011", "2012 onwards"};
inline constexpr std::array<const char*, 4> kSynthTariffs = {"Single", "dual", "off-peak 7 hour", "standard tariff"};
inline constexpr std::array<const char*, 6> kSynthFuels = {"mains gas", "electricity", "oil", "LPG", "biomass", "coal"};
inline constexpr std::array<double, 6> kSynthFuelEffect = {0.0, -4.0, -6.0, -3.0, 5.0, -8.0};
inline constexpr std::size_t kSynthTemplatesPerField = 6;
inline constexpr std::size_t kWallsField = 0;

namespace detail {

inline std::vector<double> random_direction(Rng& rng, std::size_t dim, double norm) {
  std::vector<double> v(dim);
  double sq = 0.0;
  for (double& x : v) {
    x = rng.normal();
    sq += x * x;
  }
  const double scale = norm / std::sqrt(sq);
  for (double& x : v) x *= scale;
  return v;
}

// Quantized to 1e-6 so the JSONL files stay compact and parse back exactly.
inline std::vector<double> quantize(std::vector<double> v) {
  for (double& x : v) x = std::round(x * 1e6) / 1e6;
  return v;
}

inline std::size_t weighted_pick(Rng& rng, std::span<const double> weights) {
  double u = rng.uniform();
  for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
    if (u < weights[i]) return i;
    u -= weights[i];
  }
  return weights.size() - 1;
}

inline geometry::Ring place(const geometry::Ring& shape, double angle, geometry::Point origin) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  geometry::Ring out;
  for (const auto& p : shape) {
    const double x = origin.x + c * p.x - s * p.y;
    const double y = origin.y + s * p.x + c * p.y;
    out.push_back({std::round(x * 1000.0) / 1000.0, std::round(y * 1000.0) / 1000.0});
  }
  return out;
}

// Rectangle or L-shape of the requested area, centred near the origin.
inline geometry::Ring footprint_shape(Rng& rng, double area) {
  const double aspect = rng.uniform(1.0, 3.0);
  if (rng.uniform() < 0.3) {
    // W x H box minus its top-right quarter: area 0.75 W H.
    const double h = std::sqrt(area / (0.75 * aspect));
    const double w = aspect * h;
    return {{0, 0}, {w, 0}, {w, h / 2}, {w / 2, h / 2}, {w / 2, h}, {0, h}};
  }
  const double h = std::sqrt(area / aspect);
  const double w = aspect * h;
  return {{0, 0}, {w, 0}, {w, h}, {0, h}};
}

}  // namespace detail

inline SynthDataset generate_synthetic(const SynthOptions& o) {
  Rng rng(mix64(o.seed, 0x5717));
  SynthDataset out;
  const std::size_t dim = o.text_dim;

  // Field templates, wall direction, mask vectors.
  std::array<std::vector<Embedding>, kNumTextFields> templates;
  std::array<std::vector<std::vector<double>>, kNumTextFields> raw_templates;
  for (std::size_t k = 0; k < kNumTextFields; ++k) {
    for (std::size_t c = 0; c < kSynthTemplatesPerField; ++c) {
      raw_templates[k].push_back(detail::quantize(detail::random_direction(rng, dim, 1.0)));
      templates[k].push_back(make_embedding(raw_templates[k].back()));
    }
  }
  const std::vector<double> u = detail::random_direction(rng, dim, o.wall_direction_norm);
  for (std::size_t k = 0; k < kNumTextFields; ++k) {
    out.masks[k] = make_embedding(detail::quantize(detail::random_direction(rng, dim, 1.0)));
  }
  {
    std::vector<double> insulated = raw_templates[kWallsField][0];
    for (std::size_t i = 0; i < dim; ++i) insulated[i] += 2.0 * u[i];
    out.replacements["walls_insulated"] = make_embedding(detail::quantize(std::move(insulated)));
    out.replacements["roof_insulated"] = templates[3][0];
    out.replacements["glazing_upgraded"] = templates[1][0];
  }

  const double q = o.linear_tabular ? 0.0 : 1.2;
  const double s = o.linear_tabular ? 0.0 : 1.0;
  const double height_sd = 37.0 / std::sqrt(12.0);
  out.epc.reserve(o.count);
  for (std::size_t i = 0; i < o.count; ++i) {
    EpcRow row;
    row.uprn = std::to_string(100000000 + i);
    const std::size_t ptype = detail::weighted_pick(rng, kSynthPropertyTypeWeights);
    const std::size_t form = rng.below(kSynthBuiltForms.size());
    const std::size_t age = rng.below(kSynthAgeBands.size());
    const std::size_t tariff = rng.below(kSynthTariffs.size());
    const std::size_t fuel = rng.below(kSynthFuels.size());
    row.categorical = {kSynthAgeBands[age], kSynthPropertyTypes[ptype], kSynthBuiltForms[form], kSynthTariffs[tariff],
                       kSynthFuels[fuel]};

    const double tfa = std::round(std::clamp(std::exp(std::log(85.0) + 0.35 * rng.normal()), 25.0, 400.0) * 10) / 10;
    const double rooms = std::max(1.0, std::round(tfa / 22.0 + 0.7 * rng.normal()));
    const double heated = std::max(1.0, rooms - (rng.uniform() < 0.2 ? 1.0 : 0.0));
    const double photo = rng.uniform() < 0.25 ? std::round(rng.uniform(5.0, 60.0)) : 0.0;
    row.numeric = {tfa, rooms, heated, photo};
    if (rng.uniform() < o.missing_numeric_rate) row.numeric[2].reset();

    const double area = std::clamp(std::exp(std::log(70.0) + 0.4 * rng.normal()), 20.0, 600.0);
    const double height = std::round(rng.uniform(3.0, 40.0) * 10) / 10;
    const double t = rng.normal();

    const double zf = (std::log(tfa) - std::log(85.0)) / 0.35;
    const double zp = photo / 30.0;
    const double zg = (static_cast<double>(age) - 5.5) / std::sqrt(143.0 / 12.0);
    const double za = (std::log(area) - std::log(70.0)) / 0.4;
    const double zh = (height - 21.5) / height_sd;
    const double tab_sap = 6.0 * zf - q * (zf * zf - 1.0) + 7.0 * zp + s * 5.5 * zg;
    const double tab_ei = 4.0 * zf + 9.0 * zp + s * (6.0 * zg + kSynthFuelEffect[fuel]);
    const double sap = 58.0 + o.tab_weight * tab_sap + o.text_weight * 9.0 * t +
                       o.spatial_weight * (6.3 * za + 6.3 * zh) + o.noise_sd * rng.normal();
    const double ei = 55.0 + o.tab_weight * tab_ei + o.text_weight * 8.0 * t +
                      o.spatial_weight * (5.0 * za + 7.0 * zh) + o.noise_sd * rng.normal();
    row.sap = std::round(std::clamp(sap, 1.0, 100.0) * 1000) / 1000;
    row.ei = std::round(std::clamp(ei, 1.0, 100.0) * 1000) / 1000;
    row.needs_wall = t < 0.0;
    row.needs_roof = rng.uniform() < 0.2;
    row.needs_glazing = rng.uniform() < 0.4;

    const geometry::Point origin{530000.0 + rng.uniform(0.0, 5000.0), 180000.0 + rng.uniform(0.0, 5000.0)};
    const double angle = rng.uniform(0.0, std::numbers::pi);
    out.boundaries.push_back({row.uprn, detail::place(detail::footprint_shape(rng, area), angle, origin), {}, height});
    if (rng.uniform() < o.outbuilding_rate) {
      const geometry::Point shed{origin.x + 30.0, origin.y + 30.0};
      out.boundaries.push_back({row.uprn, detail::place(detail::footprint_shape(rng, 0.2 * area), angle, shed), {}, 3.0});
    }

    if (o.with_text) {
      for (std::size_t k = 0; k < kNumTextFields; ++k) {
        const std::size_t c = rng.below(kSynthTemplatesPerField);
        if (k == kWallsField) {
          std::vector<double> v = raw_templates[k][c];
          for (std::size_t d = 0; d < dim; ++d) v[d] += t * u[d];
          out.embeddings.push_back({row.uprn, k, make_embedding(detail::quantize(std::move(v)))});
        } else if (rng.uniform() >= o.missing_text_rate) {
          out.embeddings.push_back({row.uprn, k, templates[k][c]});
        }
      }
    }
    out.wall_signal.push_back(t);
    out.epc.push_back(std::move(row));
  }
  return out;
}

inline void write_properties_csv(std::ostream& out, const std::vector<EpcRow>& rows) {
  const auto& header = properties_csv_header();
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  for (const EpcRow& r : rows) {
    out << csv_escape(r.uprn);
    for (const std::string& c : r.categorical) out << ',' << csv_escape(c);
    for (const auto& v : r.numeric) out << ',' << (v ? format_double(*v) : "");
    out << ',' << format_double(r.sap) << ',' << format_double(r.ei) << ',' << (r.needs_wall ? "true" : "false") << ','
        << (r.needs_roof ? "true" : "false") << ',' << (r.needs_glazing ? "true" : "false") << '\n';
  }
}

inline nlohmann::json ring_json(const geometry::Ring& ring) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& p : ring) j.push_back({p.x, p.y});
  return j;
}

inline void write_boundaries_jsonl(std::ostream& out, const std::vector<BoundaryRow>& rows) {
  for (const BoundaryRow& b : rows) {
    nlohmann::json j{{"uprn", b.uprn}, {"points", ring_json(b.points)}, {"height", b.height}};
    if (!b.holes.empty()) {
      j["holes"] = nlohmann::json::array();
      for (const auto& h : b.holes) j["holes"].push_back(ring_json(h));
    }
    out << j.dump() << '\n';
  }
}

inline void write_text_embeddings_jsonl(std::ostream& out, const std::vector<EmbeddingRow>& rows) {
  for (const EmbeddingRow& e : rows) {
    out << nlohmann::json{{"uprn", e.uprn}, {"field", kTextFields[e.field]}, {"vector", *e.vector}}.dump() << '\n';
  }
}

inline void write_mask_embeddings_jsonl(std::ostream& out, const std::array<Embedding, kNumTextFields>& masks) {
  for (std::size_t k = 0; k < kNumTextFields; ++k) {
    if (masks[k]) out << nlohmann::json{{"field", kTextFields[k]}, {"vector", *masks[k]}}.dump() << '\n';
  }
}

inline void write_replacement_embeddings_jsonl(std::ostream& out, const std::map<std::string, Embedding>& reps) {
  for (const auto& [key, v] : reps) out << nlohmann::json{{"key", key}, {"vector", *v}}.dump() << '\n';
}

// Linked records straight from the generator (the same path as file ingest).
inline LinkResult link_synthetic(const SynthDataset& data, const LinkOptions& options = {}) {
  return link_records(data.epc, data.boundaries, data.embeddings, {}, options);
}

}  // namespace epcfusion::datahub
