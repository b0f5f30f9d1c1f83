#pragma once

#include <cctype>
#include <charconv>
#include <cmath>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "epcfusion/datahub/bands.hpp"
#include "epcfusion/datahub/records.hpp"
#include "epcfusion/error.hpp"
#include "epcfusion/geometry.hpp"

namespace epcfusion::datahub {

struct EpcRow {
  std::string uprn;
  std::array<std::string, kNumCategorical> categorical;
  std::array<std::optional<double>, kNumNumeric> numeric;
  double sap = 0.0;
  double ei = 0.0;
  bool needs_wall = false;
  bool needs_roof = false;
  bool needs_glazing = false;
};

struct BoundaryRow {
  std::string uprn;
  geometry::Ring points;
  std::vector<geometry::Ring> holes;
  double height = 0.0;
};

struct EmbeddingRow {
  std::string uprn;
  std::size_t field = 0;
  Embedding vector;
};

/// Counts of everything dropped, repaired or flagged during ingestion.
struct IngestReport {
  std::size_t epc_rows = 0;
  std::size_t boundary_rows = 0;
  std::size_t embedding_rows = 0;
  std::size_t linked = 0;
  std::size_t unmatched_geometry = 0;  // EPC row without a usable footprint
  std::size_t unmatched_text = 0;      // EPC row without any text field
  std::size_t orphan_boundaries = 0;   // footprint uprn not in the EPC rows
  std::size_t orphan_embeddings = 0;
  std::size_t multi_polygon_resolved = 0;
  std::size_t self_intersecting = 0;
  std::size_t unknown_categories = 0;
  std::array<std::size_t, kNumNumeric> missing_numeric{};
  std::map<std::string, std::size_t> skipped;  // reason -> count
  std::vector<std::string> messages;           // first few skip messages

  void skip(const std::string& reason, const std::string& detail) {
    ++skipped[reason];
    if (messages.size() < 50) messages.push_back(reason + ": " + detail);
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["epc_rows"] = epc_rows;
    j["boundary_rows"] = boundary_rows;
    j["embedding_rows"] = embedding_rows;
    j["linked"] = linked;
    j["unmatched_geometry"] = unmatched_geometry;
    j["unmatched_text"] = unmatched_text;
    j["orphan_boundaries"] = orphan_boundaries;
    j["orphan_embeddings"] = orphan_embeddings;
    j["multi_polygon_resolved"] = multi_polygon_resolved;
    j["self_intersecting"] = self_intersecting;
    j["unknown_categories"] = unknown_categories;
    nlohmann::json missing;
    for (std::size_t f = 0; f < kNumNumeric; ++f) missing[std::string(kNumericFields[f])] = missing_numeric[f];
    j["missing_numeric"] = missing;
    j["skipped"] = skipped;
    j["messages"] = messages;
    return j;
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r' || s[b] == '\n')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r' || s[e - 1] == '\n')) --e;
  return std::string(s.substr(b, e - b));
}

// One CSV record; double quotes delimit fields and "" escapes a quote.
inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(trim(cur));
  return fields;
}

inline std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::optional<bool> parse_bool(const std::string& s) {
  std::string lower;
  for (char c : s) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (lower == "1" || lower == "true" || lower == "y" || lower == "yes") return true;
  if (lower == "0" || lower == "false" || lower == "n" || lower == "no" || lower.empty()) return false;
  return std::nullopt;
}

inline geometry::Ring parse_ring(const nlohmann::json& j) {
  if (!j.is_array()) throw std::invalid_argument("ring is not an array");
  geometry::Ring ring;
  ring.reserve(j.size());
  for (const auto& p : j) {
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
      throw std::invalid_argument("point is not [x, y]");
    }
    ring.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  return ring;
}

inline std::vector<double> parse_vector(const nlohmann::json& j, std::size_t dim) {
  if (!j.is_array()) throw std::invalid_argument("vector is not an array");
  if (j.size() != dim) {
    throw std::invalid_argument("vector has dimension " + std::to_string(j.size()) + ", expected " + std::to_string(dim));
  }
  std::vector<double> v;
  v.reserve(dim);
  for (const auto& x : j) {
    if (!x.is_number()) throw std::invalid_argument("vector entry is not a number");
    const double d = x.get<double>();
    if (!std::isfinite(d)) throw std::invalid_argument("non-finite vector entry");
    v.push_back(d);
  }
  return v;
}

inline std::string json_id(const nlohmann::json& j) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_number_integer()) return std::to_string(j.get<long long>());
  throw std::invalid_argument("identifier is neither string nor integer");
}

}  // namespace detail

inline const std::vector<std::string>& properties_csv_header() {
  static const std::vector<std::string> header = {
      "uprn", "construction_age_band", "property_type", "built_form", "energy_tariff", "main_fuel",
      "total_floor_area", "number_habitable_rooms", "number_heated_rooms", "photo_supply",
      "sap_score", "ei_score", "needs_wall", "needs_roof", "needs_glazing"};
  return header;
}

/// properties.csv -> rows. Columns are matched by header name. Malformed rows
/// are skipped and counted; a repeated uprn raises DuplicateKey.
inline std::vector<EpcRow> read_properties_csv(std::istream& in, IngestReport& report) {
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::SchemaMismatch, "properties.csv is empty");
  const std::vector<std::string> header = detail::split_csv_line(line);
  std::map<std::string, std::size_t> column;
  for (std::size_t i = 0; i < header.size(); ++i) column[header[i]] = i;
  for (const std::string& required : properties_csv_header()) {
    if (!column.contains(required)) fail(ErrorKind::SchemaMismatch, "properties.csv lacks column " + required);
  }

  std::vector<EpcRow> rows;
  std::set<std::string> seen;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    ++report.epc_rows;
    const std::vector<std::string> f = detail::split_csv_line(line);
    const std::string where = "properties.csv line " + std::to_string(line_no);
    if (f.size() != header.size()) {
      report.skip("malformed_epc_row", where + ": expected " + std::to_string(header.size()) + " fields");
      continue;
    }
    EpcRow row;
    row.uprn = f[column["uprn"]];
    if (row.uprn.empty()) {
      report.skip("malformed_epc_row", where + ": empty uprn");
      continue;
    }
    for (std::size_t c = 0; c < kNumCategorical; ++c) row.categorical[c] = f[column[std::string(kCategoricalFields[c])]];
    bool ok = true;
    for (std::size_t c = 0; c < kNumNumeric; ++c) {
      const std::string& cell = f[column[std::string(kNumericFields[c])]];
      if (cell.empty()) {
        ++report.missing_numeric[c];
        continue;
      }
      auto v = detail::parse_double(cell);
      if (!v) {
        report.skip("malformed_epc_row", where + ": bad number in " + std::string(kNumericFields[c]));
        ok = false;
        break;
      }
      row.numeric[c] = v;
    }
    if (!ok) continue;
    auto sap = detail::parse_double(f[column["sap_score"]]);
    auto ei = detail::parse_double(f[column["ei_score"]]);
    if (!sap || !ei) {
      report.skip("malformed_epc_row", where + ": missing or invalid target");
      continue;
    }
    if (*sap < 1.0 || *sap > 100.0 || *ei < 1.0 || *ei > 100.0) {
      report.skip("target_out_of_range", where);
      continue;
    }
    row.sap = *sap;
    row.ei = *ei;
    auto w = detail::parse_bool(f[column["needs_wall"]]);
    auto r = detail::parse_bool(f[column["needs_roof"]]);
    auto g = detail::parse_bool(f[column["needs_glazing"]]);
    if (!w || !r || !g) {
      report.skip("malformed_epc_row", where + ": invalid needs_* flag");
      continue;
    }
    row.needs_wall = *w;
    row.needs_roof = *r;
    row.needs_glazing = *g;
    if (!seen.insert(row.uprn).second) fail(ErrorKind::DuplicateKey, "uprn " + row.uprn + " repeated in properties.csv");
    rows.push_back(std::move(row));
  }
  return rows;
}

/// boundaries.jsonl: {"uprn", "points": [[x, y], ...], "height", optional "holes"}.
/// A uprn may appear several times (multi-part footprints).
inline std::vector<BoundaryRow> read_boundaries_jsonl(std::istream& in, IngestReport& report) {
  std::vector<BoundaryRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    ++report.boundary_rows;
    try {
      const auto j = nlohmann::json::parse(line);
      BoundaryRow row;
      row.uprn = detail::json_id(j.at("uprn"));
      row.points = detail::parse_ring(j.at("points"));
      if (!j.at("height").is_number()) throw std::invalid_argument("height is not a number");
      row.height = j.at("height").get<double>();
      if (j.contains("holes")) {
        for (const auto& h : j.at("holes")) row.holes.push_back(detail::parse_ring(h));
      }
      rows.push_back(std::move(row));
    } catch (const std::exception& e) {
      report.skip("malformed_boundary_row", "boundaries.jsonl line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return rows;
}

/// text_embeddings.jsonl: {"uprn", "field", "vector": [dim floats]}.
/// A repeated (uprn, field) pair raises DuplicateKey.
inline std::vector<EmbeddingRow> read_text_embeddings_jsonl(std::istream& in, std::size_t dim, IngestReport& report) {
  std::vector<EmbeddingRow> rows;
  std::set<std::pair<std::string, std::size_t>> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    ++report.embedding_rows;
    EmbeddingRow row;
    try {
      const auto j = nlohmann::json::parse(line);
      row.uprn = detail::json_id(j.at("uprn"));
      const std::string field = j.at("field").get<std::string>();
      auto idx = field_index(kTextFields, field);
      if (!idx) throw std::invalid_argument("unknown text field '" + field + "'");
      row.field = *idx;
      row.vector = make_embedding(detail::parse_vector(j.at("vector"), dim));
    } catch (const std::exception& e) {
      report.skip("malformed_embedding_row", "text_embeddings.jsonl line " + std::to_string(line_no) + ": " + e.what());
      continue;
    }
    if (!seen.insert({row.uprn, row.field}).second) {
      fail(ErrorKind::DuplicateKey, "uprn " + row.uprn + " field " + std::string(kTextFields[row.field]) +
                                        " repeated in text_embeddings.jsonl");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// mask_embeddings.jsonl: {"field", "vector"}; every field must be present.
inline std::array<Embedding, kNumTextFields> read_mask_embeddings_jsonl(std::istream& in, std::size_t dim) {
  std::array<Embedding, kNumTextFields> out{};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const std::string field = j.at("field").get<std::string>();
      auto idx = field_index(kTextFields, field);
      if (!idx) throw std::invalid_argument("unknown text field '" + field + "'");
      if (out[*idx]) fail(ErrorKind::DuplicateKey, "mask embedding for " + field + " repeated");
      out[*idx] = make_embedding(detail::parse_vector(j.at("vector"), dim));
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      fail(ErrorKind::SchemaMismatch, "mask_embeddings.jsonl line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

// replacement_embeddings.jsonl: {"key", "vector"}.
inline std::map<std::string, Embedding> read_replacement_embeddings_jsonl(std::istream& in, std::size_t dim) {
  std::map<std::string, Embedding> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const std::string key = j.at("key").get<std::string>();
      if (out.contains(key)) fail(ErrorKind::DuplicateKey, "replacement embedding " + key + " repeated");
      out.emplace(key, make_embedding(detail::parse_vector(j.at("vector"), dim)));
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      fail(ErrorKind::SchemaMismatch, "replacement_embeddings.jsonl line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

struct LinkOptions {
  std::size_t boundary_length = geometry::kBoundaryLength;
  // Encode categories with an existing schema (e.g. from a checkpoint)
  // instead of building one from the linked records.
  std::optional<Schema> schema;
};

struct LinkResult {
  Dataset dataset;
  IngestReport report;
};

/// Inner join of the three sources on uprn, in properties.csv order. For a
/// uprn with several footprints the largest-area one is kept.
inline LinkResult link_records(std::vector<EpcRow> epc_rows, const std::vector<BoundaryRow>& boundary_rows,
                               const std::vector<EmbeddingRow>& embedding_rows, IngestReport report = {},
                               const LinkOptions& options = {}) {
  std::set<std::string> epc_ids;
  for (const EpcRow& r : epc_rows) epc_ids.insert(r.uprn);

  struct Footprint {
    geometry::FootprintPolygon polygon;
    double area = 0.0;
    int parts = 0;
  };
  std::unordered_map<std::string, Footprint> footprints;
  for (const BoundaryRow& b : boundary_rows) {
    if (!epc_ids.contains(b.uprn)) {
      ++report.orphan_boundaries;
      continue;
    }
    geometry::FootprintPolygon poly{b.uprn, b.points, b.holes, b.height, false};
    if (poly.points.size() > 1 && poly.points.front() == poly.points.back()) poly.is_closed = true;
    double area = 0.0;
    try {
      geometry::validate(poly);
      area = geometry::footprint_area(poly);
      if (!(b.height >= 0.0) || !std::isfinite(b.height)) throw Error(ErrorKind::OutOfRange, "invalid height");
    } catch (const Error& e) {
      report.skip("degenerate_geometry", b.uprn + ": " + e.what());
      continue;
    }
    Footprint& slot = footprints[b.uprn];
    ++slot.parts;
    if (area > slot.area) {
      slot.polygon = std::move(poly);
      slot.area = area;
    }
  }

  std::unordered_map<std::string, std::array<Embedding, kNumTextFields>> texts;
  for (const EmbeddingRow& e : embedding_rows) {
    if (!epc_ids.contains(e.uprn)) {
      ++report.orphan_embeddings;
      continue;
    }
    texts[e.uprn][e.field] = e.vector;
  }

  LinkResult result;
  std::vector<PropertyRecord>& records = result.dataset.records;
  for (EpcRow& row : epc_rows) {
    auto fp = footprints.find(row.uprn);
    if (fp == footprints.end()) {
      ++report.unmatched_geometry;
      continue;
    }
    auto tx = texts.find(row.uprn);
    if (tx == texts.end()) {
      ++report.unmatched_text;
      continue;
    }
    PropertyRecord rec;
    rec.uprn = row.uprn;
    rec.categorical_values = std::move(row.categorical);
    rec.numeric = row.numeric;
    rec.text = tx->second;
    rec.sap = row.sap;
    rec.ei = row.ei;
    rec.needs_wall = row.needs_wall;
    rec.needs_roof = row.needs_roof;
    rec.needs_glazing = row.needs_glazing;
    try {
      const auto enc = geometry::build_spatial_features(fp->second.polygon, fp->second.polygon.height,
                                                        options.boundary_length);
      rec.spatial = enc.features;
      rec.boundary = enc.boundary;
    } catch (const Error& e) {
      report.skip("degenerate_geometry", row.uprn + ": " + e.what());
      continue;
    }
    if (fp->second.parts > 1) ++report.multi_polygon_resolved;
    if (geometry::is_self_intersecting(fp->second.polygon.points)) ++report.self_intersecting;
    rec.footprint = fp->second.polygon;
    records.push_back(std::move(rec));
  }

  result.dataset.schema = options.schema ? *options.schema : Schema::from_records(records);
  for (PropertyRecord& r : records) {
    result.dataset.schema.encode(r);
    for (std::size_t f = 0; f < kNumCategorical; ++f) {
      if (r.categorical[f] == 0 && !r.categorical_values[f].empty()) ++report.unknown_categories;
    }
  }
  report.linked = records.size();
  result.report = std::move(report);
  return result;
}

}  // namespace epcfusion::datahub
