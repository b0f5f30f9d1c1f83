#pragma once

// Shared plumbing for the attribution analyses: checkpoint identity, output
// headers and eval-mode forward passes with reusable modality embeddings.

#include <array>
#include <cstdio>
#include <functional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "epcfusion/diffcore/checkpoint.hpp"
#include "epcfusion/format.hpp"
#include "epcfusion/fusionnet/bundle.hpp"

namespace epcfusion::explain {

using diffcore::Index;
using diffcore::Matrix;
using diffcore::Tensor;
using fusionnet::ModelBundle;
using fusionnet::ModelInput;
using RecordPtrs = std::vector<const datahub::PropertyRecord*>;
using Scores = std::array<double, 2>;

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// FNV-1a over the serialized checkpoint: identifies weights, scalers and
/// vocabularies together.
inline std::string checkpoint_hash(const ModelBundle& bundle) {
  std::ostringstream bytes;
  diffcore::write_checkpoint(bytes, bundle.to_checkpoint());
  return hex64(diffcore::fnv1a64(bytes.str()));
}

struct Provenance {
  std::string kind;
  std::uint64_t seed = 0;
  std::string checkpoint;
  std::size_t n_samples = 0;
  std::vector<std::pair<std::string, std::string>> extra;  // e.g. background descriptor

  nlohmann::json to_json() const {
    nlohmann::json j = {{"analysis", kind}, {"seed", seed}, {"checkpoint", checkpoint}, {"n_samples", n_samples}};
    for (const auto& [k, v] : extra) j[k] = v;
    return j;
  }

  // CSV outputs start with one '#' comment line carrying the same fields.
  void write_comment(std::ostream& out) const {
    out << "# analysis=" << kind << " seed=" << seed << " checkpoint=" << checkpoint << " n_samples=" << n_samples;
    for (const auto& [k, v] : extra) out << ' ' << k << '=' << v;
    out << '\n';
  }
};

inline void require_samples(std::span<const datahub::PropertyRecord* const> rows, std::size_t min, const char* what) {
  if (rows.size() < min) {
    fail(ErrorKind::EmptyInput, std::string(what) + " needs at least " + std::to_string(min) + " samples");
  }
}

/// Denormalized (SAP, EI) for each row of a normalized B x 2 output.
inline std::vector<Scores> denormalize_rows(const ModelBundle& bundle, const Matrix& y_hat) {
  std::vector<Scores> out(static_cast<std::size_t>(y_hat.rows()));
  for (Index b = 0; b < y_hat.rows(); ++b) {
    out[static_cast<std::size_t>(b)] = bundle.target_scaler.denormalize({y_hat(b, 0), y_hat(b, 1)});
  }
  return out;
}

/// Calls fn(chunk_rows, input, embeddings) for consecutive chunks of eval-mode
/// inputs. Embeddings are in the model's (tab, text, spatial) slot order.
inline void for_each_chunk(const ModelBundle& bundle, std::span<const datahub::PropertyRecord* const> rows,
                           const std::function<void(std::size_t, const ModelInput&, const std::vector<Tensor>&)>& fn) {
  diffcore::NoGradGuard no_grad;
  fusionnet::ForwardContext eval;
  for (std::size_t start = 0; start < rows.size(); start += fusionnet::kEvalBatch) {
    const std::size_t n = std::min(fusionnet::kEvalBatch, rows.size() - start);
    const ModelInput in = fusionnet::make_batch(rows.subspan(start, n), bundle.feature_scaler, bundle.config());
    fn(start, in, bundle.model.encode(in, eval));
  }
}

/// Slot of a modality within the model's embedding list, or -1.
inline int modality_slot(const fusionnet::ModelConfig& config, fusionnet::Modality m) {
  int slot = 0;
  for (fusionnet::Modality x : config.modalities.list()) {
    if (x == m) return slot;
    ++slot;
  }
  return -1;
}

inline Scores mean_abs_delta(const std::vector<Scores>& a, const std::vector<Scores>& b) {
  Scores sum{0.0, 0.0};
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t t = 0; t < 2; ++t) sum[t] += std::abs(a[i][t] - b[i][t]);
  }
  const double n = static_cast<double>(a.size());
  return {sum[0] / n, sum[1] / n};
}

}  // namespace epcfusion::explain
