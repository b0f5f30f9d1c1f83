#pragma once

#include <span>
#include <vector>

#include "epcfusion/datahub/records.hpp"
#include "epcfusion/datahub/scaling.hpp"
#include "epcfusion/diffcore/tensor.hpp"
#include "epcfusion/fusionnet/config.hpp"

namespace epcfusion::fusionnet {

using diffcore::Index;
using diffcore::Matrix;

/// One batch of standardized model inputs. Only the blocks of the configured
/// modalities are filled.
struct ModelInput {
  Index batch_size = 0;
  std::vector<int> categorical;  // batch_size * 5, row-major
  Matrix numeric;                // B x 4
  Matrix text;                   // (B * 8) x h
  Matrix text_mask;              // B x 8
  Matrix boundary;               // (B * L) x 2
  Matrix spatial_numeric;        // B x 3
  std::size_t unknown_categories = 0;

  std::span<const int> categorical_row(Index b) const {
    return std::span<const int>(categorical).subspan(static_cast<std::size_t>(b) * datahub::kNumCategorical,
                                                     datahub::kNumCategorical);
  }
};

inline void fill_tabular(ModelInput& in, Index row, const datahub::PropertyRecord& r,
                         const datahub::FeatureScaler& scaler, const ModelConfig& config) {
  for (std::size_t f = 0; f < datahub::kNumCategorical; ++f) {
    int idx = r.categorical[f];
    if (idx < 0 || idx >= config.vocab_sizes[f]) {
      idx = 0;
      ++in.unknown_categories;
    }
    in.categorical[static_cast<std::size_t>(row) * datahub::kNumCategorical + f] = idx;
  }
  for (std::size_t f = 0; f < datahub::kNumNumeric; ++f) in.numeric(row, static_cast<Index>(f)) = scaler.numeric(r, f);
}

inline void fill_text(ModelInput& in, Index row, const datahub::PropertyRecord& r, const ModelConfig& config) {
  constexpr Index kFields = static_cast<Index>(datahub::kNumTextFields);
  for (Index k = 0; k < kFields; ++k) {
    const datahub::Embedding& e = r.text[static_cast<std::size_t>(k)];
    if (e) {
      if (static_cast<int>(e->size()) != config.h) {
        fail(ErrorKind::ShapeError, "text field vector of " + r.uprn + " has dimension " + std::to_string(e->size()));
      }
      in.text.row(row * kFields + k) = Eigen::Map<const Eigen::RowVectorXd>(e->data(), config.h);
      in.text_mask(row, k) = 1.0;
    }
  }
}

inline void fill_spatial(ModelInput& in, Index row, const datahub::PropertyRecord& r,
                         const datahub::FeatureScaler& scaler, const ModelConfig& config) {
  const Index len = config.boundary_length;
  if (static_cast<Index>(r.boundary.points.size()) != len) {
    fail(ErrorKind::ShapeError, "boundary of " + r.uprn + " has length " + std::to_string(r.boundary.points.size()) +
                                    ", model expects " + std::to_string(len));
  }
  for (Index l = 0; l < len; ++l) {
    in.boundary(row * len + l, 0) = r.boundary.points[static_cast<std::size_t>(l)].x;
    in.boundary(row * len + l, 1) = r.boundary.points[static_cast<std::size_t>(l)].y;
  }
  for (std::size_t f = 0; f < datahub::kNumSpatialNumeric; ++f) {
    in.spatial_numeric(row, static_cast<Index>(f)) = scaler.spatial(r, f);
  }
}

// Assembles the model input for records[i] for every i in `rows`.
inline ModelInput make_batch(std::span<const datahub::PropertyRecord* const> rows, const datahub::FeatureScaler& scaler,
                             const ModelConfig& config) {
  ModelInput in;
  const Index n = static_cast<Index>(rows.size());
  in.batch_size = n;
  const Modalities& m = config.modalities;
  if (m.tab) {
    in.categorical.assign(rows.size() * datahub::kNumCategorical, 0);
    in.numeric.resize(n, static_cast<Index>(datahub::kNumNumeric));
  }
  if (m.text) {
    in.text = Matrix::Zero(n * static_cast<Index>(datahub::kNumTextFields), config.h);
    in.text_mask = Matrix::Zero(n, static_cast<Index>(datahub::kNumTextFields));
  }
  if (m.spatial) {
    in.boundary.resize(n * config.boundary_length, 2);
    in.spatial_numeric.resize(n, static_cast<Index>(datahub::kNumSpatialNumeric));
  }
  for (Index b = 0; b < n; ++b) {
    const datahub::PropertyRecord& r = *rows[static_cast<std::size_t>(b)];
    if (m.tab) fill_tabular(in, b, r, scaler, config);
    if (m.text) fill_text(in, b, r, config);
    if (m.spatial) fill_spatial(in, b, r, scaler, config);
  }
  return in;
}

inline ModelInput make_batch(const std::vector<datahub::PropertyRecord>& records, std::span<const std::size_t> indices,
                             const datahub::FeatureScaler& scaler, const ModelConfig& config) {
  std::vector<const datahub::PropertyRecord*> rows;
  rows.reserve(indices.size());
  for (std::size_t i : indices) rows.push_back(&records.at(i));
  return make_batch(rows, scaler, config);
}

}  // namespace epcfusion::fusionnet
