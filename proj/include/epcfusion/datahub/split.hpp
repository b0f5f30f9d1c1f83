#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "epcfusion/datahub/bands.hpp"
#include "epcfusion/datahub/records.hpp"
#include "epcfusion/error.hpp"
#include "epcfusion/random.hpp"

namespace epcfusion::datahub {

struct StratumLabel {
  int property_type = 0;
  int sap_band = 0;
  int ei_band = 0;

  friend auto operator<=>(const StratumLabel&, const StratumLabel&) = default;
};

inline StratumLabel stratum_of(const PropertyRecord& r, const BandTable& table) {
  return {r.categorical[kPropertyTypeField], table.band(r.sap), table.band(r.ei)};
}

struct SplitRatios {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;

  void validate() const {
    if (train < 0 || val < 0 || test < 0 || std::abs(train + val + test - 1.0) > 1e-9) {
      fail(ErrorKind::InvalidConfig, "split ratios must be non-negative and sum to 1");
    }
  }
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

struct StratumAllocation {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
};

// floor(n * r); the guard absorbs representation error such as 10 * 0.7.
inline std::size_t floor_share(std::size_t n, double ratio) {
  return static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratio + 1e-9));
}

/// Per-stratum counts: floor(n*r_train), floor(n*r_val), remainder to test.
/// Strata smaller than 3 go wholly to train.
inline StratumAllocation allocate_stratum(std::size_t n, const SplitRatios& ratios) {
  if (n < 3) return {n, 0, 0};
  StratumAllocation a;
  a.train = floor_share(n, ratios.train);
  a.val = floor_share(n, ratios.val);
  a.test = n - a.train - a.val;
  return a;
}

/// Joint-stratified split: strata are visited in ascending label order, each
/// shuffled with one seeded stream, then cut by allocate_stratum.
inline SplitIndices joint_stratified_split(std::span<const StratumLabel> labels, const SplitRatios& ratios,
                                           std::uint64_t seed) {
  ratios.validate();
  if (labels.empty()) fail(ErrorKind::EmptyInput, "cannot split an empty dataset");
  std::map<StratumLabel, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < labels.size(); ++i) strata[labels[i]].push_back(i);

  Rng rng(mix64(seed, 0x5EED5EEDULL));
  SplitIndices out;
  for (auto& [label, members] : strata) {
    rng.shuffle(std::span<std::size_t>(members));
    const StratumAllocation a = allocate_stratum(members.size(), ratios);
    out.train.insert(out.train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(a.train));
    out.val.insert(out.val.end(), members.begin() + static_cast<std::ptrdiff_t>(a.train),
                   members.begin() + static_cast<std::ptrdiff_t>(a.train + a.val));
    out.test.insert(out.test.end(), members.begin() + static_cast<std::ptrdiff_t>(a.train + a.val), members.end());
  }
  return out;
}

inline SplitIndices joint_stratified_split(const std::vector<PropertyRecord>& records, const BandTable& table,
                                           const SplitRatios& ratios, std::uint64_t seed) {
  std::vector<StratumLabel> labels;
  labels.reserve(records.size());
  for (const PropertyRecord& r : records) labels.push_back(stratum_of(r, table));
  return joint_stratified_split(labels, ratios, seed);
}

}  // namespace epcfusion::datahub
