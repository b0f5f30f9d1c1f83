#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "epcfusion/datahub/records.hpp"
#include "epcfusion/error.hpp"

namespace epcfusion::datahub {

// Population mean/std of (SAP, EI) over the training records.
struct TargetScaler {
  std::array<double, 2> mean{};
  std::array<double, 2> stddev{1.0, 1.0};

  static TargetScaler fit(std::span<const PropertyRecord> train) {
    if (train.empty()) fail(ErrorKind::EmptyInput, "cannot fit target scaler on an empty training set");
    TargetScaler s;
    const double n = static_cast<double>(train.size());
    for (const PropertyRecord& r : train) {
      s.mean[0] += r.sap;
      s.mean[1] += r.ei;
    }
    s.mean[0] /= n;
    s.mean[1] /= n;
    std::array<double, 2> var{};
    for (const PropertyRecord& r : train) {
      var[0] += (r.sap - s.mean[0]) * (r.sap - s.mean[0]);
      var[1] += (r.ei - s.mean[1]) * (r.ei - s.mean[1]);
    }
    for (std::size_t t = 0; t < 2; ++t) {
      s.stddev[t] = std::sqrt(var[t] / n);
      if (!(s.stddev[t] > 0.0)) {
        fail(ErrorKind::DegenerateTarget, std::string(t == 0 ? "SAP" : "EI") + " has zero variance in the training set");
      }
    }
    return s;
  }

  double normalize(double y, std::size_t target) const { return (y - mean[target]) / stddev[target]; }
  double denormalize(double z, std::size_t target) const { return z * stddev[target] + mean[target]; }

  std::array<double, 2> normalize(const std::array<double, 2>& y) const {
    return {normalize(y[0], 0), normalize(y[1], 1)};
  }
  std::array<double, 2> denormalize(const std::array<double, 2>& z) const {
    return {denormalize(z[0], 0), denormalize(z[1], 1)};
  }
};

inline double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  return values.size() % 2 == 1 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
}

/// Train-set statistics for the tabular numerics (median imputation, then
/// standardization) and the spatial numerics (standardization).
struct FeatureScaler {
  std::array<double, kNumNumeric> numeric_median{};
  std::array<double, kNumNumeric> numeric_mean{};
  std::array<double, kNumNumeric> numeric_std{1.0, 1.0, 1.0, 1.0};
  std::array<double, kNumSpatialNumeric> spatial_mean{};
  std::array<double, kNumSpatialNumeric> spatial_std{1.0, 1.0, 1.0};

  static std::array<double, kNumSpatialNumeric> spatial_values(const PropertyRecord& r) {
    return {r.spatial.footprint_area, r.spatial.height, r.spatial.orientation};
  }

  static FeatureScaler fit(std::span<const PropertyRecord> train) {
    if (train.empty()) fail(ErrorKind::EmptyInput, "cannot fit feature scaler on an empty training set");
    FeatureScaler s;
    const double n = static_cast<double>(train.size());
    for (std::size_t f = 0; f < kNumNumeric; ++f) {
      std::vector<double> present;
      for (const PropertyRecord& r : train) {
        if (r.numeric[f]) present.push_back(*r.numeric[f]);
      }
      s.numeric_median[f] = median(present);
      double sum = 0.0;
      for (const PropertyRecord& r : train) sum += r.numeric[f].value_or(s.numeric_median[f]);
      s.numeric_mean[f] = sum / n;
      double var = 0.0;
      for (const PropertyRecord& r : train) {
        const double d = r.numeric[f].value_or(s.numeric_median[f]) - s.numeric_mean[f];
        var += d * d;
      }
      const double sd = std::sqrt(var / n);
      s.numeric_std[f] = sd > 0.0 ? sd : 1.0;  // constant column -> centred only
    }
    for (std::size_t f = 0; f < kNumSpatialNumeric; ++f) {
      double sum = 0.0;
      for (const PropertyRecord& r : train) sum += spatial_values(r)[f];
      s.spatial_mean[f] = sum / n;
      double var = 0.0;
      for (const PropertyRecord& r : train) {
        const double d = spatial_values(r)[f] - s.spatial_mean[f];
        var += d * d;
      }
      const double sd = std::sqrt(var / n);
      s.spatial_std[f] = sd > 0.0 ? sd : 1.0;
    }
    return s;
  }

  double numeric(const PropertyRecord& r, std::size_t f) const {
    return (r.numeric[f].value_or(numeric_median[f]) - numeric_mean[f]) / numeric_std[f];
  }
  double numeric_raw(double value, std::size_t f) const { return (value - numeric_mean[f]) / numeric_std[f]; }

  double spatial(const PropertyRecord& r, std::size_t f) const {
    return (spatial_values(r)[f] - spatial_mean[f]) / spatial_std[f];
  }
};

}  // namespace epcfusion::datahub
