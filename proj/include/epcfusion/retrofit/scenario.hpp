#pragma once

#include <array>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "epcfusion/datahub/records.hpp"
#include "epcfusion/format.hpp"
#include "epcfusion/fusionnet/bundle.hpp"
#include "epcfusion/retrofit/formulas.hpp"

namespace epcfusion::retrofit {

using datahub::PropertyRecord;

inline constexpr std::array<std::string_view, 4> kScenarioNames = {"wall_insulation", "roof_insulation",
                                                                   "glazing_upgrade", "custom"};

/// A retrofit intervention: which records it applies to and which inputs it
/// edits on them.
struct ScenarioSpec {
  std::string name = "custom";
  datahub::EligibilityFlag eligibility = datahub::EligibilityFlag::NeedsWall;
  std::map<std::string, std::string> text_replacements;  // text field -> replacement key
  std::map<std::string, std::string> categorical_overrides;
  std::map<std::string, double> numeric_overrides;
  double tariff_deflator = 1.0;

  void validate() const {
    if (std::find(kScenarioNames.begin(), kScenarioNames.end(), name) == kScenarioNames.end()) {
      fail(ErrorKind::InvalidConfig, "unknown scenario name '" + name + "'");
    }
    for (const auto& [field, key] : text_replacements) {
      if (!datahub::field_index(datahub::kTextFields, field)) {
        fail(ErrorKind::InvalidConfig, "unknown text field '" + field + "' in text_replacements");
      }
      if (key.empty()) fail(ErrorKind::InvalidConfig, "empty replacement key for field '" + field + "'");
    }
    for (const auto& [field, value] : categorical_overrides) {
      if (!datahub::field_index(datahub::kCategoricalFields, field)) {
        fail(ErrorKind::InvalidConfig, "unknown categorical field '" + field + "' in categorical_overrides");
      }
    }
    for (const auto& [field, value] : numeric_overrides) {
      if (!datahub::field_index(datahub::kNumericFields, field)) {
        fail(ErrorKind::InvalidConfig, "unknown numeric field '" + field + "' in numeric_overrides");
      }
      if (!std::isfinite(value)) fail(ErrorKind::InvalidConfig, "numeric override for '" + field + "' is not finite");
    }
    if (!(tariff_deflator > 0.0) || !std::isfinite(tariff_deflator)) {
      fail(ErrorKind::InvalidConfig, "tariff_deflator must be positive");
    }
  }

  static ScenarioSpec from_json(const nlohmann::json& j) {
    ScenarioSpec s;
    try {
      if (!j.is_object()) fail(ErrorKind::InvalidConfig, "scenario must be a JSON object");
      for (const auto& [key, value] : j.items()) {
        static const std::array<std::string_view, 6> known = {"name", "eligibility_flag", "text_replacements",
                                                              "categorical_overrides", "numeric_overrides",
                                                              "tariff_deflator"};
        if (std::find(known.begin(), known.end(), key) == known.end()) {
          fail(ErrorKind::InvalidConfig, "unknown scenario key '" + key + "'");
        }
      }
      s.name = j.at("name").get<std::string>();
      const std::string flag = j.at("eligibility_flag").get<std::string>();
      const auto parsed = datahub::parse_eligibility_flag(flag);
      if (!parsed) fail(ErrorKind::InvalidConfig, "unknown eligibility flag '" + flag + "'");
      s.eligibility = *parsed;
      s.text_replacements = j.value("text_replacements", std::map<std::string, std::string>{});
      s.categorical_overrides = j.value("categorical_overrides", std::map<std::string, std::string>{});
      s.numeric_overrides = j.value("numeric_overrides", std::map<std::string, double>{});
      s.tariff_deflator = j.value("tariff_deflator", 1.0);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::InvalidConfig, std::string("scenario file: ") + e.what());
    }
    s.validate();
    return s;
  }

  nlohmann::json to_json() const {
    return {{"name", name},
            {"eligibility_flag", std::string(datahub::to_string(eligibility))},
            {"text_replacements", text_replacements},
            {"categorical_overrides", categorical_overrides},
            {"numeric_overrides", numeric_overrides},
            {"tariff_deflator", tariff_deflator}};
  }
};

struct ScenarioView {
  std::vector<PropertyRecord> records;  // edited copies; ineligible rows unchanged
  std::vector<bool> eligible;
  std::size_t n_eligible = 0;
};

/// Copies `records` and edits the eligible ones. Categorical overrides are
/// encoded with `schema`; values outside its vocabulary map to unknown.
inline ScenarioView apply_scenario(const std::vector<PropertyRecord>& records, const ScenarioSpec& spec,
                                   const std::map<std::string, datahub::Embedding>& replacements,
                                   const datahub::Schema& schema) {
  spec.validate();
  std::vector<std::pair<std::size_t, datahub::Embedding>> text;
  for (const auto& [field, key] : spec.text_replacements) {
    auto it = replacements.find(key);
    if (it == replacements.end() || !it->second) {
      fail(ErrorKind::InvalidConfig, "replacement embedding '" + key + "' not found");
    }
    text.emplace_back(*datahub::field_index(datahub::kTextFields, field), it->second);
  }
  ScenarioView view;
  view.records = records;
  view.eligible.assign(records.size(), false);
  for (std::size_t i = 0; i < view.records.size(); ++i) {
    PropertyRecord& r = view.records[i];
    if (!r.eligible(spec.eligibility)) continue;
    view.eligible[i] = true;
    ++view.n_eligible;
    for (const auto& [field, embedding] : text) r.text[field] = embedding;
    for (const auto& [field, value] : spec.categorical_overrides) {
      const std::size_t f = *datahub::field_index(datahub::kCategoricalFields, field);
      r.categorical_values[f] = value;
      r.categorical[f] = schema.vocabularies[f].encode(value);
    }
    for (const auto& [field, value] : spec.numeric_overrides) {
      r.numeric[*datahub::field_index(datahub::kNumericFields, field)] = value;
    }
  }
  return view;
}

struct ScenarioRow {
  std::string uprn;
  bool eligible = false;
  std::string error;  // conversion failure, row excluded from aggregates
  double pre_sap = 0, post_sap = 0, pre_ei = 0, post_ei = 0;
  double pre_cost = 0, post_cost = 0, pre_eco2 = 0, post_eco2 = 0;

  bool ok() const { return error.empty(); }
  double delta_sap() const { return post_sap - pre_sap; }
  double delta_ei() const { return post_ei - pre_ei; }
  double delta_cost() const { return pre_cost - post_cost; }
  double delta_eco2() const { return pre_eco2 - post_eco2; }
};

struct ScenarioAggregates {
  std::size_t n_records = 0;
  std::size_t n_eligible = 0;  // eligible rows that converted cleanly
  std::size_t n_exceptions = 0;
  double total_delta_cost = 0, total_delta_eco2 = 0, total_delta_sap = 0, total_delta_ei = 0;
  double mean_delta_cost = 0, mean_delta_eco2 = 0, mean_delta_sap = 0, mean_delta_ei = 0;

  nlohmann::json to_json() const {
    return {{"n_records", n_records},           {"n_eligible", n_eligible},
            {"n_exceptions", n_exceptions},     {"total_delta_cost", total_delta_cost},
            {"total_delta_eco2", total_delta_eco2}, {"total_delta_sap", total_delta_sap},
            {"total_delta_ei", total_delta_ei}, {"mean_delta_cost", mean_delta_cost},
            {"mean_delta_eco2", mean_delta_eco2}, {"mean_delta_sap", mean_delta_sap},
            {"mean_delta_ei", mean_delta_ei}};
  }
};

struct ScenarioResult {
  ScenarioSpec spec;
  std::vector<ScenarioRow> rows;
  ScenarioAggregates aggregates;
  std::vector<std::string> exceptions;  // "uprn: message"
};

/// Totals are summed in row order; means divide those totals by the number
/// of aggregated eligible rows.
inline ScenarioAggregates aggregate(const std::vector<ScenarioRow>& rows) {
  ScenarioAggregates a;
  a.n_records = rows.size();
  for (const ScenarioRow& r : rows) {
    if (!r.eligible) continue;
    if (!r.ok()) {
      ++a.n_exceptions;
      continue;
    }
    ++a.n_eligible;
    a.total_delta_cost += r.delta_cost();
    a.total_delta_eco2 += r.delta_eco2();
    a.total_delta_sap += r.delta_sap();
    a.total_delta_ei += r.delta_ei();
  }
  if (a.n_eligible > 0) {
    const double n = static_cast<double>(a.n_eligible);
    a.mean_delta_cost = a.total_delta_cost / n;
    a.mean_delta_eco2 = a.total_delta_eco2 / n;
    a.mean_delta_sap = a.total_delta_sap / n;
    a.mean_delta_ei = a.total_delta_ei / n;
  }
  return a;
}

/// Predicts every record before and after the intervention and converts the
/// (clamped) scores to annual cost and emissions. Pre values use the record's
/// own floor area, post values the possibly overridden one.
inline ScenarioResult evaluate_scenario(const fusionnet::ModelBundle& bundle, const std::vector<PropertyRecord>& records,
                                        const ScenarioSpec& spec,
                                        const std::map<std::string, datahub::Embedding>& replacements) {
  ScenarioResult result;
  result.spec = spec;
  const ScenarioView view = apply_scenario(records, spec, replacements, bundle.schema);
  const auto pre = fusionnet::predict_scores(bundle, fusionnet::pointers(records));
  const auto post = fusionnet::predict_scores(bundle, fusionnet::pointers(view.records));
  const double d = spec.tariff_deflator;
  result.rows.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    ScenarioRow row;
    row.uprn = records[i].uprn;
    row.eligible = view.eligible[i];
    row.pre_sap = clamp_score(pre[i][0]);
    row.pre_ei = clamp_score(pre[i][1]);
    row.post_sap = row.eligible ? clamp_score(post[i][0]) : row.pre_sap;
    row.post_ei = row.eligible ? clamp_score(post[i][1]) : row.pre_ei;
    try {
      const auto& tfa_pre = records[i].numeric[datahub::kTotalFloorAreaField];
      const auto& tfa_post = view.records[i].numeric[datahub::kTotalFloorAreaField];
      if (!tfa_pre || !tfa_post) fail(ErrorKind::OutOfRange, "total floor area missing");
      if (!std::isfinite(pre[i][0]) || !std::isfinite(pre[i][1]) || !std::isfinite(post[i][0]) ||
          !std::isfinite(post[i][1])) {
        fail(ErrorKind::OutOfRange, "non-finite prediction");
      }
      row.pre_cost = cost_from_sap(row.pre_sap, *tfa_pre, d);
      row.pre_eco2 = eco2_from_ei(row.pre_ei, *tfa_pre);
      row.post_cost = row.eligible ? cost_from_sap(row.post_sap, *tfa_post, d) : row.pre_cost;
      row.post_eco2 = row.eligible ? eco2_from_ei(row.post_ei, *tfa_post) : row.pre_eco2;
    } catch (const Error& e) {
      row.error = e.what();
      result.exceptions.push_back(row.uprn + ": " + e.what());
    }
    result.rows.push_back(std::move(row));
  }
  result.aggregates = aggregate(result.rows);
  return result;
}

inline void write_scenario_csv(std::ostream& out, const ScenarioResult& result) {
  out << "uprn,eligible,pre_sap,post_sap,delta_sap,pre_ei,post_ei,delta_ei,pre_cost,post_cost,delta_cost,"
         "pre_eco2,post_eco2,delta_eco2,error\n";
  for (const ScenarioRow& r : result.rows) {
    out << csv_escape(r.uprn) << ',' << (r.eligible ? "true" : "false") << ',' << format_double(r.pre_sap) << ','
        << format_double(r.post_sap) << ',' << format_double(r.delta_sap()) << ',' << format_double(r.pre_ei) << ','
        << format_double(r.post_ei) << ',' << format_double(r.delta_ei()) << ',';
    if (r.ok()) {
      out << format_double(r.pre_cost) << ',' << format_double(r.post_cost) << ',' << format_double(r.delta_cost())
          << ',' << format_double(r.pre_eco2) << ',' << format_double(r.post_eco2) << ','
          << format_double(r.delta_eco2()) << ",\n";
    } else {
      out << "NA,NA,NA,NA,NA,NA," << csv_escape(r.error) << '\n';
    }
  }
}

inline nlohmann::json ring_coordinates(const geometry::Ring& ring) {
  nlohmann::json coords = nlohmann::json::array();
  for (const geometry::Point& p : ring) coords.push_back({p.x, p.y});
  if (!ring.empty() && !(ring.front() == ring.back())) coords.push_back({ring.front().x, ring.front().y});
  return coords;
}

/// FeatureCollection with one footprint polygon per record (projected
/// coordinates, metres) and the per-record scenario fields as properties.
inline nlohmann::json scenario_geojson(const ScenarioResult& result, const std::vector<PropertyRecord>& records) {
  nlohmann::json features = nlohmann::json::array();
  for (std::size_t i = 0; i < result.rows.size(); ++i) {
    const ScenarioRow& r = result.rows[i];
    const geometry::FootprintPolygon& fp = records.at(i).footprint;
    nlohmann::json rings = nlohmann::json::array({ring_coordinates(fp.points)});
    for (const auto& hole : fp.holes) rings.push_back(ring_coordinates(hole));
    nlohmann::json props{{"uprn", r.uprn},         {"eligible", r.eligible},       {"pre_sap", r.pre_sap},
                         {"post_sap", r.post_sap}, {"delta_sap", r.delta_sap()},   {"pre_ei", r.pre_ei},
                         {"post_ei", r.post_ei},   {"delta_ei", r.delta_ei()}};
    if (r.ok()) {
      props["pre_cost"] = r.pre_cost;
      props["post_cost"] = r.post_cost;
      props["delta_cost"] = r.delta_cost();
      props["pre_eco2"] = r.pre_eco2;
      props["post_eco2"] = r.post_eco2;
      props["delta_eco2"] = r.delta_eco2();
    } else {
      props["error"] = r.error;
    }
    features.push_back({{"type", "Feature"}, {"geometry", {{"type", "Polygon"}, {"coordinates", rings}}},
                        {"properties", props}});
  }
  return {{"type", "FeatureCollection"},
          {"scenario", result.spec.to_json()},
          {"summary", result.aggregates.to_json()},
          {"features", features}};
}

}  // namespace epcfusion::retrofit
