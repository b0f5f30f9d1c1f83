#pragma once

#include <span>
#include <vector>

#include <json.hpp>

#include "epcfusion/datahub/bands.hpp"
#include "epcfusion/datahub/records.hpp"
#include "epcfusion/datahub/scaling.hpp"
#include "epcfusion/diffcore/ops.hpp"
#include "epcfusion/error.hpp"
#include "epcfusion/fusionnet/model.hpp"

namespace epcfusion::trainer {

using diffcore::Index;
using diffcore::Matrix;
using diffcore::Tensor;

struct LossConfig {
  double delta = 1.0;
  double w_sap = 0.1;
  double w_ei = 0.1;

  void validate() const {
    if (!(delta > 0.0)) fail(ErrorKind::InvalidConfig, "loss delta must be > 0");
    if (!(w_sap >= 0.0) || !(w_ei >= 0.0)) fail(ErrorKind::InvalidConfig, "auxiliary loss weights must be >= 0");
  }

  nlohmann::json to_json() const { return {{"delta", delta}, {"w_sap", w_sap}, {"w_ei", w_ei}}; }
};

/// Regression targets in normalized space plus band labels of the raw scores.
struct BatchTargets {
  Matrix y_norm;  // B x 2
  std::vector<int> sap_band;
  std::vector<int> ei_band;
};

inline BatchTargets make_targets(std::span<const datahub::PropertyRecord* const> rows,
                                 const datahub::TargetScaler& scaler, const datahub::BandTable& table) {
  BatchTargets t;
  t.y_norm.resize(static_cast<Index>(rows.size()), 2);
  t.sap_band.reserve(rows.size());
  t.ei_band.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const datahub::PropertyRecord& r = *rows[i];
    t.y_norm(static_cast<Index>(i), 0) = scaler.normalize(r.sap, 0);
    t.y_norm(static_cast<Index>(i), 1) = scaler.normalize(r.ei, 1);
    t.sap_band.push_back(table.band(r.sap));
    t.ei_band.push_back(table.band(r.ei));
  }
  return t;
}

// Band labels recovered from normalized targets; de-normalization round-off
// at the [1, 100] edges is absorbed by the clamp.
inline BatchTargets targets_from_normalized(const Matrix& y_norm, const datahub::TargetScaler& scaler,
                                            const datahub::BandTable& table) {
  BatchTargets t{y_norm, {}, {}};
  for (Index b = 0; b < y_norm.rows(); ++b) {
    t.sap_band.push_back(table.band_clamped(scaler.denormalize(y_norm(b, 0), 0)));
    t.ei_band.push_back(table.band_clamped(scaler.denormalize(y_norm(b, 1), 1)));
  }
  return t;
}

/// Huber over batch x 2 targets plus weighted band cross-entropies. Zero
/// weights drop the auxiliary terms from the graph entirely.
inline Tensor total_loss(const fusionnet::FusionOutput& out, const BatchTargets& targets, int n_bands,
                         const LossConfig& cfg) {
  Tensor loss = diffcore::huber_loss(out.y_hat, targets.y_norm, cfg.delta);
  if (cfg.w_sap > 0.0) {
    loss = diffcore::add(loss, diffcore::scale(diffcore::cross_entropy(out.sap_logits(n_bands), targets.sap_band), cfg.w_sap));
  }
  if (cfg.w_ei > 0.0) {
    loss = diffcore::add(loss, diffcore::scale(diffcore::cross_entropy(out.ei_logits(n_bands), targets.ei_band), cfg.w_ei));
  }
  return loss;
}

inline Tensor total_loss(const fusionnet::FusionOutput& out, const Matrix& y_norm, const datahub::TargetScaler& scaler,
                         const datahub::BandTable& table, const LossConfig& cfg) {
  return total_loss(out, targets_from_normalized(y_norm, scaler, table), static_cast<int>(datahub::kNumBands), cfg);
}

}  // namespace epcfusion::trainer
