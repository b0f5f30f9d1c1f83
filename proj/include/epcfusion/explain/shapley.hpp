#pragma once

// Exact Shapley values for the 9 tabular features by enumerating all 2^9
// coalitions. v(S) is the mean denormalized prediction over a background set
// with features outside S taken from the background row; text and spatial
// inputs stay those of the explained sample.

#include <algorithm>
#include <array>
#include <bit>
#include <numeric>
#include <string>
#include <vector>

#include "epcfusion/explain/common.hpp"
#include "epcfusion/random.hpp"

namespace epcfusion::explain {

inline constexpr std::size_t kShapleyFeatures = datahub::kNumTabular;
inline constexpr std::size_t kDefaultBackground = 32;

/// Shapley values of n players from the value of every coalition, indexed by
/// bitmask (bit i set = player i present).
template <std::size_t Targets>
std::vector<std::array<double, Targets>> shapley_from_values(std::size_t n,
                                                             std::span<const std::array<double, Targets>> v) {
  if (n == 0 || n > 20) fail(ErrorKind::InvalidConfig, "shapley: unsupported number of players");
  const std::size_t full = std::size_t{1} << n;
  if (v.size() != full) fail(ErrorKind::ShapeError, "shapley: need one value per coalition");
  // w[s] = s! (n - s - 1)! / n!
  std::vector<double> w(n);
  for (std::size_t s = 0; s < n; ++s) {
    double x = 1.0 / static_cast<double>(n);
    for (std::size_t k = 1; k <= s; ++k) x *= static_cast<double>(k) / static_cast<double>(n - k);
    w[s] = x;
  }
  std::vector<std::array<double, Targets>> phi(n);
  for (auto& p : phi) p.fill(0.0);
  for (std::size_t mask = 0; mask < full; ++mask) {
    const auto size = static_cast<std::size_t>(std::popcount(mask));
    for (std::size_t i = 0; i < n; ++i) {
      if (mask & (std::size_t{1} << i)) continue;
      const auto& with = v[mask | (std::size_t{1} << i)];
      for (std::size_t t = 0; t < Targets; ++t) phi[i][t] += w[size] * (with[t] - v[mask][t]);
    }
  }
  return phi;
}

/// Seeded draw of `size` rows without replacement from `pool`.
inline RecordPtrs select_background(std::span<const datahub::PropertyRecord* const> pool, std::size_t size,
                                    std::uint64_t seed) {
  if (size == 0) fail(ErrorKind::InvalidConfig, "background size must be >= 1");
  if (size > pool.size()) {
    fail(ErrorKind::InvalidConfig, "background size " + std::to_string(size) + " exceeds the " +
                                       std::to_string(pool.size()) + " available rows");
  }
  std::vector<std::size_t> idx(pool.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(mix64(seed, 0xB4C6ULL));
  rng.shuffle(std::span<std::size_t>(idx));
  idx.resize(size);
  std::sort(idx.begin(), idx.end());
  RecordPtrs out;
  for (std::size_t i : idx) out.push_back(pool[i]);
  return out;
}

struct ShapleySample {
  std::string uprn;
  std::array<Scores, kShapleyFeatures> phi{};
  Scores base{};        // v(empty set)
  Scores prediction{};  // v(all features) = f(x)

  // |sum(phi) - (f(x) - base)|, worst target.
  double efficiency_error() const {
    double worst = 0.0;
    for (std::size_t t = 0; t < 2; ++t) {
      double sum = 0.0;
      for (const auto& p : phi) sum += p[t];
      worst = std::max(worst, std::abs(sum - (prediction[t] - base[t])));
    }
    return worst;
  }
};

struct ShapleyResult {
  std::vector<ShapleySample> samples;
  std::vector<std::string> background_uprns;
  std::array<Scores, kShapleyFeatures> mean_abs{};  // global importance
};

/// Value of every coalition for one sample.
inline std::vector<Scores> coalition_values(const ModelBundle& bundle, const datahub::PropertyRecord& sample,
                                            const ModelInput& background, std::size_t chunk_masks = 128) {
  const fusionnet::FusionModel& model = bundle.model;
  const int tab_slot = modality_slot(bundle.config(), fusionnet::Modality::Tabular);
  if (tab_slot < 0) fail(ErrorKind::InvalidConfig, "shapley: model has no tabular encoder");
  const Index bg = background.batch_size;
  if (bg == 0) fail(ErrorKind::InvalidConfig, "background size must be >= 1");

  diffcore::NoGradGuard no_grad;
  fusionnet::ForwardContext eval;
  const datahub::PropertyRecord* self = &sample;
  const ModelInput x = fusionnet::make_batch(std::span<const datahub::PropertyRecord* const>(&self, 1),
                                             bundle.feature_scaler, bundle.config());
  const std::vector<Tensor> z_self = model.encode(x, eval);

  constexpr std::size_t kCat = datahub::kNumCategorical;
  constexpr std::size_t kNum = datahub::kNumNumeric;
  const std::size_t n_masks = std::size_t{1} << kShapleyFeatures;
  std::vector<Scores> v(n_masks);
  for (std::size_t m0 = 0; m0 < n_masks; m0 += chunk_masks) {
    const std::size_t masks = std::min(chunk_masks, n_masks - m0);
    const Index rows = static_cast<Index>(masks) * bg;
    ModelInput in;
    in.batch_size = rows;
    in.categorical.resize(static_cast<std::size_t>(rows) * kCat);
    in.numeric.resize(rows, static_cast<Index>(kNum));
    for (std::size_t mi = 0; mi < masks; ++mi) {
      const std::size_t mask = m0 + mi;
      for (Index b = 0; b < bg; ++b) {
        const Index r = static_cast<Index>(mi) * bg + b;
        for (std::size_t f = 0; f < kCat; ++f) {
          const bool keep = mask & (std::size_t{1} << f);
          in.categorical[static_cast<std::size_t>(r) * kCat + f] =
              keep ? x.categorical[f] : background.categorical[static_cast<std::size_t>(b) * kCat + f];
        }
        for (std::size_t f = 0; f < kNum; ++f) {
          const bool keep = mask & (std::size_t{1} << (kCat + f));
          in.numeric(r, static_cast<Index>(f)) = keep ? x.numeric(0, static_cast<Index>(f))
                                                      : background.numeric(b, static_cast<Index>(f));
        }
      }
    }
    std::vector<Tensor> z;
    for (std::size_t s = 0; s < z_self.size(); ++s) {
      if (static_cast<int>(s) == tab_slot) {
        z.push_back(model.encode_tabular(in, eval));
      } else {
        z.push_back(Tensor::constant(z_self[s].value().replicate(rows, 1)));
      }
    }
    const std::vector<Scores> y = denormalize_rows(bundle, model.fuse(z, eval).y_hat.value());
    for (std::size_t mi = 0; mi < masks; ++mi) {
      Scores sum{0.0, 0.0};
      for (Index b = 0; b < bg; ++b) {
        const Scores& s = y[mi * static_cast<std::size_t>(bg) + static_cast<std::size_t>(b)];
        sum[0] += s[0];
        sum[1] += s[1];
      }
      v[m0 + mi] = {sum[0] / static_cast<double>(bg), sum[1] / static_cast<double>(bg)};
    }
  }
  return v;
}

inline ShapleyResult shapley_tabular(const ModelBundle& bundle, std::span<const datahub::PropertyRecord* const> samples,
                                     std::span<const datahub::PropertyRecord* const> background) {
  if (background.empty()) fail(ErrorKind::InvalidConfig, "background size must be >= 1");
  require_samples(samples, 1, "shapley");
  const ModelInput bg = fusionnet::make_batch(background, bundle.feature_scaler, bundle.config());
  ShapleyResult out;
  for (const auto* r : background) out.background_uprns.push_back(r->uprn);
  for (auto& m : out.mean_abs) m = {0.0, 0.0};
  for (const auto* r : samples) {
    const std::vector<Scores> v = coalition_values(bundle, *r, bg);
    const auto phi = shapley_from_values<2>(kShapleyFeatures, v);
    ShapleySample s;
    s.uprn = r->uprn;
    std::copy(phi.begin(), phi.end(), s.phi.begin());
    s.base = v.front();
    s.prediction = v.back();
    for (std::size_t i = 0; i < kShapleyFeatures; ++i) {
      for (std::size_t t = 0; t < 2; ++t) out.mean_abs[i][t] += std::abs(s.phi[i][t]);
    }
    out.samples.push_back(std::move(s));
  }
  for (auto& m : out.mean_abs) {
    for (double& x : m) x /= static_cast<double>(samples.size());
  }
  return out;
}

// Long format: scope is phi | base | prediction per sample, mean_abs globally.
inline void write_shapley_csv(std::ostream& out, const ShapleyResult& result, const Provenance& prov) {
  prov.write_comment(out);
  out << "scope,uprn,feature,sap,ei\n";
  auto row = [&](std::string_view scope, const std::string& uprn, std::string_view feature, const Scores& s) {
    out << scope << ',' << csv_escape(uprn) << ',' << feature << ',' << format_double(s[0]) << ','
        << format_double(s[1]) << '\n';
  };
  for (std::size_t i = 0; i < kShapleyFeatures; ++i) {
    row("mean_abs", "", datahub::tabular_feature_name(i), result.mean_abs[i]);
  }
  for (const auto& s : result.samples) {
    row("base", s.uprn, "", s.base);
    row("prediction", s.uprn, "", s.prediction);
    for (std::size_t i = 0; i < kShapleyFeatures; ++i) row("phi", s.uprn, datahub::tabular_feature_name(i), s.phi[i]);
  }
}

}  // namespace epcfusion::explain
