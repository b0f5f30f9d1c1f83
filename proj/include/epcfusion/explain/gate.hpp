#pragma once

// Distribution of the sample-wise fusion weights.

#include <cmath>
#include <string>
#include <vector>

#include "epcfusion/explain/common.hpp"

namespace epcfusion::explain {

inline constexpr double kGateBinWidth = 0.02;
inline constexpr std::size_t kGateBins = 50;

struct GateModalityStats {
  std::string modality;
  double mean = 0.0;
  double stddev = 0.0;  // population
  std::vector<std::size_t> histogram = std::vector<std::size_t>(kGateBins, 0);
};

struct GateStats {
  std::vector<std::string> uprns;
  Matrix alpha;  // n x |modalities|
  std::vector<GateModalityStats> modalities;
  double max_row_sum_error = 0.0;

  nlohmann::json to_json(const Provenance& prov) const {
    nlohmann::json j = prov.to_json();
    j["bin_width"] = kGateBinWidth;
    j["max_row_sum_error"] = max_row_sum_error;
    j["modalities"] = nlohmann::json::array();
    for (const auto& m : modalities) {
      j["modalities"].push_back({{"modality", m.modality}, {"mean", m.mean}, {"std", m.stddev}, {"histogram", m.histogram}});
    }
    return j;
  }
};

// Bin [k*w, (k+1)*w); a weight of exactly 1 goes to the last bin.
inline std::size_t gate_bin(double a) {
  if (!(a > 0.0)) return 0;
  const auto k = static_cast<std::size_t>(std::floor(a / kGateBinWidth));
  return std::min(k, kGateBins - 1);
}

inline GateStats gate_weight_stats(const ModelBundle& bundle, std::span<const datahub::PropertyRecord* const> rows) {
  require_samples(rows, 1, "gate statistics");
  const auto list = bundle.config().modalities.list();
  const Index k = static_cast<Index>(list.size());
  GateStats out;
  out.alpha.resize(static_cast<Index>(rows.size()), k);
  for (const auto* r : rows) out.uprns.push_back(r->uprn);
  for_each_chunk(bundle, rows, [&](std::size_t start, const ModelInput&, const std::vector<Tensor>& z) {
    fusionnet::ForwardContext eval;
    const Matrix& a = bundle.model.fuse(z, eval).alpha.value();
    out.alpha.middleRows(static_cast<Index>(start), a.rows()) = a;
  });
  const double n = static_cast<double>(rows.size());
  for (Index i = 0; i < out.alpha.rows(); ++i) {
    out.max_row_sum_error = std::max(out.max_row_sum_error, std::abs(out.alpha.row(i).sum() - 1.0));
  }
  for (Index m = 0; m < k; ++m) {
    GateModalityStats s;
    s.modality = std::string(fusionnet::kModalityNames[static_cast<std::size_t>(list[static_cast<std::size_t>(m)])]);
    double sum = 0.0;
    for (Index i = 0; i < out.alpha.rows(); ++i) {
      sum += out.alpha(i, m);
      ++s.histogram[gate_bin(out.alpha(i, m))];
    }
    s.mean = sum / n;
    double var = 0.0;
    for (Index i = 0; i < out.alpha.rows(); ++i) var += (out.alpha(i, m) - s.mean) * (out.alpha(i, m) - s.mean);
    s.stddev = std::sqrt(var / n);
    out.modalities.push_back(std::move(s));
  }
  return out;
}

// Per-sample weights: uprn, then one column per modality.
inline void write_gate_csv(std::ostream& out, const GateStats& stats, const Provenance& prov) {
  prov.write_comment(out);
  out << "uprn";
  for (const auto& m : stats.modalities) out << ",alpha_" << m.modality;
  out << '\n';
  for (std::size_t i = 0; i < stats.uprns.size(); ++i) {
    out << csv_escape(stats.uprns[i]);
    for (Index m = 0; m < stats.alpha.cols(); ++m) out << ',' << format_double(stats.alpha(static_cast<Index>(i), m));
    out << '\n';
  }
}

}  // namespace epcfusion::explain
