#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>

#include "epcfusion/error.hpp"

namespace epcfusion::datahub {

inline constexpr std::size_t kNumBands = 7;
inline constexpr std::size_t kNumPartitions = 5;
inline constexpr std::array<std::string_view, kNumBands> kBandNames = {"A", "B", "C", "D", "E", "F", "G"};
inline constexpr std::array<std::string_view, kNumPartitions> kPartitionNames = {"AB", "C", "D", "E", "FG"};

// Band index 0..6 (A..G) -> merged partition 0..4 ([AB],[C],[D],[E],[FG]).
inline constexpr std::array<int, kNumBands> kPartitionOfBand = {0, 0, 1, 2, 3, 4, 4};

/// Score -> band thresholds. min_score[b] is the lowest score in band b;
/// thresholds strictly decrease and band G starts at 1 so [1, 100] is covered.
struct BandTable {
  std::array<double, kNumBands> min_score = {92.0, 81.0, 69.0, 55.0, 39.0, 21.0, 1.0};

  void validate() const {
    for (std::size_t b = 1; b < kNumBands; ++b) {
      if (!(min_score[b] < min_score[b - 1])) {
        fail(ErrorKind::InvalidConfig, "band thresholds must strictly decrease");
      }
    }
    if (min_score.back() != 1.0) fail(ErrorKind::InvalidConfig, "band G must start at score 1");
    if (min_score.front() > 100.0) fail(ErrorKind::InvalidConfig, "band A threshold above 100");
  }

  // First band whose minimum is <= score. Throws OutOfRange outside [1, 100].
  int band(double score) const {
    if (!(score >= 1.0 && score <= 100.0)) {
      fail(ErrorKind::OutOfRange, "score " + std::to_string(score) + " outside [1, 100]");
    }
    for (std::size_t b = 0; b < kNumBands; ++b) {
      if (min_score[b] <= score) return static_cast<int>(b);
    }
    return static_cast<int>(kNumBands - 1);
  }

  // Band of a model prediction, which may fall outside [1, 100].
  int band_clamped(double score) const {
    if (std::isnan(score)) fail(ErrorKind::OutOfRange, "NaN score");
    return band(score < 1.0 ? 1.0 : (score > 100.0 ? 100.0 : score));
  }

  static int partition(int band) { return kPartitionOfBand.at(static_cast<std::size_t>(band)); }
  int partition_of_score(double score) const { return partition(band(score)); }
};

inline int map_score_to_band(double score, const BandTable& table) { return table.band(score); }

}  // namespace epcfusion::datahub
