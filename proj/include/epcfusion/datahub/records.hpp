#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "epcfusion/error.hpp"
#include "epcfusion/geometry.hpp"

namespace epcfusion::datahub {

inline constexpr std::size_t kNumCategorical = 5;
inline constexpr std::size_t kNumNumeric = 4;
inline constexpr std::size_t kNumTextFields = 8;
inline constexpr std::size_t kNumSpatialNumeric = 3;
inline constexpr std::size_t kNumTabular = kNumCategorical + kNumNumeric;
inline constexpr std::size_t kTextDim = 768;

inline constexpr std::array<std::string_view, kNumCategorical> kCategoricalFields = {
    "construction_age_band", "property_type", "built_form", "energy_tariff", "main_fuel"};
inline constexpr std::array<std::string_view, kNumNumeric> kNumericFields = {
    "total_floor_area", "number_habitable_rooms", "number_heated_rooms", "photo_supply"};
inline constexpr std::array<std::string_view, kNumTextFields> kTextFields = {
    "walls", "windows", "floor", "roof", "mainheat", "mainheatcont", "hotwater", "lighting"};
inline constexpr std::array<std::string_view, kNumSpatialNumeric> kSpatialNumericFields = {
    "footprint_area", "height", "orientation"};

inline constexpr std::size_t kPropertyTypeField = 1;
inline constexpr std::size_t kTotalFloorAreaField = 0;

template <std::size_t N>
std::optional<std::size_t> field_index(const std::array<std::string_view, N>& names, std::string_view name) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == name) return i;
  }
  return std::nullopt;
}

// Names of the 9 tabular features in attribution order: categoricals then numerics.
inline std::string_view tabular_feature_name(std::size_t i) {
  return i < kNumCategorical ? kCategoricalFields[i] : kNumericFields[i - kNumCategorical];
}

// Precomputed field embeddings are immutable and shared between dataset views.
using Embedding = std::shared_ptr<const std::vector<double>>;

inline Embedding make_embedding(std::vector<double> values) {
  return std::make_shared<const std::vector<double>>(std::move(values));
}

enum class EligibilityFlag { NeedsWall, NeedsRoof, NeedsGlazing };

struct PropertyRecord {
  std::string uprn;
  std::array<std::string, kNumCategorical> categorical_values;
  std::array<int, kNumCategorical> categorical{};  // 0 = unknown
  std::array<std::optional<double>, kNumNumeric> numeric;
  std::array<Embedding, kNumTextFields> text;  // null = field absent
  geometry::FootprintPolygon footprint;
  geometry::SpatialFeatures spatial;
  geometry::BoundarySequence boundary;
  double sap = 0.0;
  double ei = 0.0;
  bool needs_wall = false;
  bool needs_roof = false;
  bool needs_glazing = false;

  bool text_present(std::size_t field) const { return text[field] != nullptr; }

  std::size_t text_field_count() const {
    return static_cast<std::size_t>(std::count_if(text.begin(), text.end(), [](const Embedding& e) { return e != nullptr; }));
  }

  bool eligible(EligibilityFlag flag) const {
    switch (flag) {
      case EligibilityFlag::NeedsWall: return needs_wall;
      case EligibilityFlag::NeedsRoof: return needs_roof;
      case EligibilityFlag::NeedsGlazing: return needs_glazing;
    }
    return false;
  }
};

inline std::optional<EligibilityFlag> parse_eligibility_flag(std::string_view name) {
  if (name == "needs_wall") return EligibilityFlag::NeedsWall;
  if (name == "needs_roof") return EligibilityFlag::NeedsRoof;
  if (name == "needs_glazing") return EligibilityFlag::NeedsGlazing;
  return std::nullopt;
}

inline std::string_view to_string(EligibilityFlag flag) {
  switch (flag) {
    case EligibilityFlag::NeedsWall: return "needs_wall";
    case EligibilityFlag::NeedsRoof: return "needs_roof";
    case EligibilityFlag::NeedsGlazing: return "needs_glazing";
  }
  return "needs_wall";
}

// Category string <-> index; index 0 is reserved for unknown or missing values.
class Vocabulary {
 public:
  Vocabulary() = default;

  static Vocabulary from_values(std::vector<std::string> values) {
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    values.erase(std::remove(values.begin(), values.end(), std::string()), values.end());
    Vocabulary v;
    v.values_ = std::move(values);
    for (std::size_t i = 0; i < v.values_.size(); ++i) v.index_[v.values_[i]] = static_cast<int>(i + 1);
    return v;
  }

  int encode(const std::string& value) const {
    auto it = index_.find(value);
    return it == index_.end() ? 0 : it->second;
  }

  const std::string& decode(int index) const {
    static const std::string unknown;
    if (index <= 0 || index > static_cast<int>(values_.size())) return unknown;
    return values_[static_cast<std::size_t>(index - 1)];
  }

  // Table size including the unknown slot.
  int size() const { return static_cast<int>(values_.size()) + 1; }
  const std::vector<std::string>& values() const { return values_; }

 private:
  std::vector<std::string> values_;
  std::map<std::string, int> index_;
};

struct Schema {
  std::array<Vocabulary, kNumCategorical> vocabularies;

  std::array<int, kNumCategorical> vocab_sizes() const {
    std::array<int, kNumCategorical> out{};
    for (std::size_t i = 0; i < kNumCategorical; ++i) out[i] = vocabularies[i].size();
    return out;
  }

  static Schema from_records(const std::vector<PropertyRecord>& records) {
    Schema schema;
    for (std::size_t f = 0; f < kNumCategorical; ++f) {
      std::vector<std::string> values;
      values.reserve(records.size());
      for (const PropertyRecord& r : records) values.push_back(r.categorical_values[f]);
      schema.vocabularies[f] = Vocabulary::from_values(std::move(values));
    }
    return schema;
  }

  void encode(PropertyRecord& record) const {
    for (std::size_t f = 0; f < kNumCategorical; ++f) {
      record.categorical[f] = vocabularies[f].encode(record.categorical_values[f]);
    }
  }
};

struct Dataset {
  Schema schema;
  std::vector<PropertyRecord> records;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
};

// Copies of the selected records (embeddings are shared, not duplicated).
inline std::vector<PropertyRecord> select(const std::vector<PropertyRecord>& records,
                                          const std::vector<std::size_t>& indices) {
  std::vector<PropertyRecord> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(records.at(i));
  return out;
}

}  // namespace epcfusion::datahub
