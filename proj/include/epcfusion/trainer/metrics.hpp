#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "epcfusion/datahub/bands.hpp"
#include "epcfusion/error.hpp"

namespace epcfusion::trainer {

using Scores = std::array<double, 2>;  // (SAP, EI)

inline constexpr std::array<const char*, 2> kTargetNames = {"SAP", "EI"};

struct RegressionMetrics {
  std::size_t n = 0;
  double mae = 0.0;
  double rmse = 0.0;
  std::optional<double> r2;  // empty when the targets have zero variance

  nlohmann::json to_json() const {
    nlohmann::json j{{"n", n}, {"mae", mae}, {"rmse", rmse}};
    j["r2"] = r2 ? nlohmann::json(*r2) : nlohmann::json(nullptr);
    return j;
  }
};

// Compensated summation; keeps metric sums independent of magnitude ordering
// to well below reporting precision.
class Accumulator {
 public:
  void add(double v) {
    const double t = sum_ + v;
    comp_ += std::abs(sum_) >= std::abs(v) ? (sum_ - t) + v : (v - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline RegressionMetrics regression_metrics(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) fail(ErrorKind::ShapeError, "prediction and target counts differ");
  if (truth.empty()) fail(ErrorKind::EmptyInput, "metrics need at least one sample");
  const double n = static_cast<double>(truth.size());
  Accumulator abs_err, sq_err, total;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double e = pred[i] - truth[i];
    abs_err.add(std::abs(e));
    sq_err.add(e * e);
    total.add(truth[i]);
  }
  const double mean = total.value() / n;
  Accumulator ss_tot;
  for (double y : truth) ss_tot.add((y - mean) * (y - mean));
  RegressionMetrics m;
  m.n = truth.size();
  m.mae = abs_err.value() / n;
  m.rmse = std::sqrt(sq_err.value() / n);
  if (ss_tot.value() > 0.0) m.r2 = 1.0 - sq_err.value() / ss_tot.value();
  return m;
}

struct EvalMetrics {
  std::array<RegressionMetrics, 2> target;  // SAP, EI
  double mean_mae = 0.0;

  nlohmann::json to_json() const {
    return {{"SAP", target[0].to_json()}, {"EI", target[1].to_json()}, {"mean_mae", mean_mae}};
  }
};

inline std::vector<double> column(std::span<const Scores> rows, std::size_t t) {
  std::vector<double> out;
  out.reserve(rows.size());
  for (const Scores& s : rows) out.push_back(s[t]);
  return out;
}

/// Per-target MAE/RMSE/R² on the original score scale; Mean_MAE is the
/// arithmetic mean of the two MAEs.
inline EvalMetrics compute_metrics(std::span<const Scores> pred, std::span<const Scores> truth) {
  EvalMetrics m;
  for (std::size_t t = 0; t < 2; ++t) m.target[t] = regression_metrics(column(pred, t), column(truth, t));
  m.mean_mae = 0.5 * (m.target[0].mae + m.target[1].mae);
  return m;
}

/// Fraction of samples whose predicted and true scores fall in the same
/// merged partition (AB, C, D, E, FG). Predictions are clamped to [1, 100].
inline double band_accuracy(std::span<const double> pred, std::span<const double> truth,
                            const datahub::BandTable& table) {
  if (pred.size() != truth.size()) fail(ErrorKind::ShapeError, "prediction and target counts differ");
  if (truth.empty()) fail(ErrorKind::EmptyInput, "band accuracy needs at least one sample");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    hits += datahub::BandTable::partition(table.band_clamped(pred[i])) == table.partition_of_score(truth[i]);
  }
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

// Rows = true partition, columns = predicted partition.
using Confusion = std::array<std::array<std::size_t, datahub::kNumPartitions>, datahub::kNumPartitions>;

inline Confusion confusion_matrix(std::span<const double> pred, std::span<const double> truth,
                                  const datahub::BandTable& table) {
  if (pred.size() != truth.size()) fail(ErrorKind::ShapeError, "prediction and target counts differ");
  Confusion c{};
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int p = datahub::BandTable::partition(table.band_clamped(pred[i]));
    const int t = table.partition_of_score(truth[i]);
    ++c[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
  }
  return c;
}

/// Everything reported for one evaluated split.
struct EvalSummary {
  EvalMetrics metrics;
  std::array<double, 2> band_accuracy{};
  std::array<Confusion, 2> confusion{};

  nlohmann::json to_json() const {
    nlohmann::json j = metrics.to_json();
    j["band_accuracy"] = {{"SAP", band_accuracy[0]}, {"EI", band_accuracy[1]}};
    return j;
  }
};

inline EvalSummary summarize(std::span<const Scores> pred, std::span<const Scores> truth,
                             const datahub::BandTable& table) {
  EvalSummary s;
  s.metrics = compute_metrics(pred, truth);
  for (std::size_t t = 0; t < 2; ++t) {
    const std::vector<double> p = column(pred, t);
    const std::vector<double> y = column(truth, t);
    s.band_accuracy[t] = band_accuracy(p, y, table);
    s.confusion[t] = confusion_matrix(p, y, table);
  }
  return s;
}

}  // namespace epcfusion::trainer
