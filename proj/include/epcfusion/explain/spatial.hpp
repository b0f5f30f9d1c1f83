#pragma once

// Spatial attributions: permutation of the standardized spatial numerics,
// footprint exchange across samples, and per-point gradient saliency.

#include <numeric>
#include <string>
#include <vector>

#include "epcfusion/explain/common.hpp"
#include "epcfusion/random.hpp"
#include "epcfusion/trainer/metrics.hpp"

namespace epcfusion::explain {

/// Uniform random cyclic permutation (Sattolo): no element maps to itself.
inline std::vector<std::size_t> sattolo_derangement(std::size_t n, std::uint64_t seed) {
  if (n < 2) fail(ErrorKind::EmptyInput, "a derangement needs at least 2 elements");
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));  // j < i
    std::swap(p[i], p[j]);
  }
  return p;
}

inline std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(p));
  return p;
}

inline std::size_t spatial_feature_index(std::string_view name) {
  if (name == "area") return 0;
  if (auto i = datahub::field_index(datahub::kSpatialNumericFields, name)) return *i;
  fail(ErrorKind::InvalidConfig, "unknown spatial feature '" + std::string(name) + "' (area, height, orientation)");
}

namespace detail {

// Predictions with the spatial input rewritten by edit(start, input) per chunk.
template <typename Edit>
std::pair<std::vector<Scores>, std::vector<Scores>> spatial_ablation(const ModelBundle& bundle,
                                                                     std::span<const datahub::PropertyRecord* const> rows,
                                                                     Edit edit) {
  const int slot = modality_slot(bundle.config(), fusionnet::Modality::Spatial);
  if (slot < 0) fail(ErrorKind::InvalidConfig, "model has no spatial encoder");
  std::vector<Scores> base, permuted;
  base.reserve(rows.size());
  permuted.reserve(rows.size());
  for_each_chunk(bundle, rows, [&](std::size_t start, const ModelInput& in, const std::vector<Tensor>& z) {
    fusionnet::ForwardContext eval;
    for (const Scores& s : denormalize_rows(bundle, bundle.model.fuse(z, eval).y_hat.value())) base.push_back(s);
    ModelInput changed = in;
    edit(start, changed);
    std::vector<Tensor> zp = z;
    zp[static_cast<std::size_t>(slot)] = bundle.model.encode_spatial(changed, eval);
    for (const Scores& s : denormalize_rows(bundle, bundle.model.fuse(zp, eval).y_hat.value())) permuted.push_back(s);
  });
  return {std::move(base), std::move(permuted)};
}

}  // namespace detail

struct SpatialPermutationResult {
  std::string feature;
  Scores importance{};  // mean |delta| per target
  std::size_t n_samples = 0;
};

/// Column `feature` of the standardized spatial numerics is reordered by
/// `perm` (row i takes the value of row perm[i]).
inline SpatialPermutationResult spatial_permutation(const ModelBundle& bundle,
                                                    std::span<const datahub::PropertyRecord* const> rows,
                                                    std::size_t feature, std::span<const std::size_t> perm) {
  require_samples(rows, 2, "spatial permutation");
  if (feature >= datahub::kNumSpatialNumeric) fail(ErrorKind::InvalidConfig, "spatial feature index out of range");
  if (perm.size() != rows.size()) fail(ErrorKind::ShapeError, "permutation length differs from sample count");
  std::vector<double> column(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) column[i] = bundle.feature_scaler.spatial(*rows[i], feature);
  const auto [base, permuted] = detail::spatial_ablation(bundle, rows, [&](std::size_t start, ModelInput& in) {
    for (Index b = 0; b < in.batch_size; ++b) {
      in.spatial_numeric(b, static_cast<Index>(feature)) = column.at(perm[start + static_cast<std::size_t>(b)]);
    }
  });
  return {std::string(datahub::kSpatialNumericFields[feature]), mean_abs_delta(base, permuted), rows.size()};
}

inline SpatialPermutationResult spatial_permutation(const ModelBundle& bundle,
                                                    std::span<const datahub::PropertyRecord* const> rows,
                                                    std::size_t feature, std::uint64_t seed) {
  const auto perm = seeded_permutation(rows.size(), mix64(seed, 0x5A7ULL + feature));
  return spatial_permutation(bundle, rows, feature, perm);
}

inline void write_spatial_permutation_csv(std::ostream& out, const std::vector<SpatialPermutationResult>& results,
                                          const Provenance& prov) {
  prov.write_comment(out);
  out << "feature,importance_sap,importance_ei,n_samples\n";
  for (const auto& r : results) {
    out << r.feature << ',' << format_double(r.importance[0]) << ',' << format_double(r.importance[1]) << ','
        << r.n_samples << '\n';
  }
}

struct BoundaryPermutationResult {
  std::vector<std::size_t> permutation;
  trainer::EvalMetrics baseline;
  trainer::EvalMetrics permuted;

  nlohmann::json to_json(const Provenance& prov) const {
    nlohmann::json j = prov.to_json();
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); };
    for (std::size_t t = 0; t < 2; ++t) {
      const auto& a = baseline.target[t];
      const auto& b = permuted.target[t];
      nlohmann::json entry = {{"baseline", a.to_json()},
                              {"permuted", b.to_json()},
                              {"delta_mae", b.mae - a.mae},
                              {"delta_rmse", b.rmse - a.rmse}};
      entry["delta_r2"] = (a.r2 && b.r2) ? opt(*b.r2 - *a.r2) : nlohmann::json();
      j[std::string(trainer::kTargetNames[t])] = entry;
    }
    j["derangement"] = "sattolo";
    return j;
  }
};

/// Boundaries exchanged across samples by `perm`; spatial numerics untouched.
inline BoundaryPermutationResult boundary_permutation(const ModelBundle& bundle,
                                                      std::span<const datahub::PropertyRecord* const> rows,
                                                      std::span<const std::size_t> perm) {
  require_samples(rows, 2, "boundary permutation");
  if (perm.size() != rows.size()) fail(ErrorKind::ShapeError, "permutation length differs from sample count");
  const Index len = bundle.config().boundary_length;
  const auto [base, permuted] = detail::spatial_ablation(bundle, rows, [&](std::size_t start, ModelInput& in) {
    for (Index b = 0; b < in.batch_size; ++b) {
      const auto& pts = rows[perm[start + static_cast<std::size_t>(b)]]->boundary.points;
      if (static_cast<Index>(pts.size()) != len) fail(ErrorKind::ShapeError, "boundary length mismatch");
      for (Index l = 0; l < len; ++l) {
        in.boundary(b * len + l, 0) = pts[static_cast<std::size_t>(l)].x;
        in.boundary(b * len + l, 1) = pts[static_cast<std::size_t>(l)].y;
      }
    }
  });
  std::vector<Scores> truth;
  for (const auto* r : rows) truth.push_back({r->sap, r->ei});
  BoundaryPermutationResult out;
  out.permutation.assign(perm.begin(), perm.end());
  out.baseline = trainer::compute_metrics(base, truth);
  out.permuted = trainer::compute_metrics(permuted, truth);
  return out;
}

inline BoundaryPermutationResult boundary_permutation(const ModelBundle& bundle,
                                                      std::span<const datahub::PropertyRecord* const> rows,
                                                      std::uint64_t seed) {
  require_samples(rows, 2, "boundary permutation");
  const auto perm = sattolo_derangement(rows.size(), mix64(seed, 0xB0D7ULL));
  return boundary_permutation(bundle, rows, perm);
}

struct PointSaliency {
  std::string uprn;
  Matrix points;    // L x 2, normalized boundary
  Matrix saliency;  // L x 2: SAP, EI in score units per unit of coordinate
};

/// ||d y_t / d (x_l, y_l)||_2 for every boundary point, by reverse mode.
inline PointSaliency point_saliency(const ModelBundle& bundle, const datahub::PropertyRecord& record) {
  const fusionnet::FusionModel& model = bundle.model;
  const int slot = modality_slot(bundle.config(), fusionnet::Modality::Spatial);
  if (slot < 0) fail(ErrorKind::InvalidConfig, "model has no spatial encoder");
  const datahub::PropertyRecord* self = &record;
  const ModelInput in = fusionnet::make_batch(std::span<const datahub::PropertyRecord* const>(&self, 1),
                                              bundle.feature_scaler, bundle.config());
  fusionnet::ForwardContext eval;
  std::vector<Tensor> z;
  {
    diffcore::NoGradGuard no_grad;
    z = model.encode(in, eval);
  }
  Tensor leaf = Tensor::parameter(in.boundary);
  z[static_cast<std::size_t>(slot)] = model.encode_spatial(in, eval, &leaf);
  const Tensor y = model.fuse(z, eval).y_hat;

  PointSaliency out;
  out.uprn = record.uprn;
  out.points = in.boundary;
  out.saliency.resize(in.boundary.rows(), 2);
  for (Index t = 0; t < 2; ++t) {
    leaf.zero_grad();
    Matrix seed = Matrix::Zero(1, 2);
    seed(0, t) = 1.0;
    diffcore::backward(y, &seed);
    const double gain = bundle.target_scaler.stddev[static_cast<std::size_t>(t)];
    for (Index l = 0; l < out.saliency.rows(); ++l) {
      out.saliency(l, t) = leaf.has_grad() ? gain * leaf.grad().row(l).norm() : 0.0;
    }
  }
  // Read-only analysis: leave no gradients behind on the model.
  for (const auto& p : model.parameters()) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
  return out;
}

inline void write_saliency_csv(std::ostream& out, const PointSaliency& s, const Provenance& prov) {
  prov.write_comment(out);
  out << "point,x,y,saliency_sap,saliency_ei\n";
  for (Index l = 0; l < s.points.rows(); ++l) {
    out << l << ',' << format_double(s.points(l, 0)) << ',' << format_double(s.points(l, 1)) << ','
        << format_double(s.saliency(l, 0)) << ',' << format_double(s.saliency(l, 1)) << '\n';
  }
}

}  // namespace epcfusion::explain
