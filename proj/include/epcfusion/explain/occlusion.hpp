#pragma once

// Text-field occlusion: swap one field's vector for its mask embedding and
// measure the mean absolute change of the denormalized predictions. Fields
// absent at ingest are occluded too (the mask becomes present), so every
// sample contributes; coverage counts how many actually had the field.

#include <array>
#include <string>
#include <vector>

#include "epcfusion/explain/common.hpp"

namespace epcfusion::explain {

using MaskEmbeddings = std::array<datahub::Embedding, datahub::kNumTextFields>;

struct FieldOcclusion {
  std::string field;
  Scores importance{};  // mean |delta| per target
  std::size_t coverage = 0;
};

struct OcclusionResult {
  std::vector<FieldOcclusion> fields;
  std::size_t n_samples = 0;
};

inline OcclusionResult text_field_occlusion(const ModelBundle& bundle,
                                            std::span<const datahub::PropertyRecord* const> rows,
                                            const MaskEmbeddings& masks) {
  const fusionnet::ModelConfig& config = bundle.config();
  const int text_slot = modality_slot(config, fusionnet::Modality::Text);
  if (text_slot < 0) fail(ErrorKind::InvalidConfig, "occlusion: model has no text encoder");
  for (std::size_t k = 0; k < datahub::kNumTextFields; ++k) {
    if (!masks[k]) fail(ErrorKind::InvalidConfig, "missing mask embedding for field " + std::string(datahub::kTextFields[k]));
    if (static_cast<int>(masks[k]->size()) != config.h) {
      fail(ErrorKind::InvalidConfig, "mask embedding for " + std::string(datahub::kTextFields[k]) + " has dimension " +
                                         std::to_string(masks[k]->size()));
    }
  }
  require_samples(rows, 1, "occlusion");

  constexpr Index kFields = static_cast<Index>(datahub::kNumTextFields);
  OcclusionResult out;
  out.n_samples = rows.size();
  std::array<Scores, datahub::kNumTextFields> sums{};
  for (auto& s : sums) s = {0.0, 0.0};
  std::array<std::size_t, datahub::kNumTextFields> coverage{};

  for_each_chunk(bundle, rows, [&](std::size_t, const ModelInput& in, const std::vector<Tensor>& z) {
    fusionnet::ForwardContext eval;
    const std::vector<Scores> base = denormalize_rows(bundle, bundle.model.fuse(z, eval).y_hat.value());
    for (Index k = 0; k < kFields; ++k) {
      ModelInput occluded = in;
      const auto& mask = *masks[static_cast<std::size_t>(k)];
      for (Index b = 0; b < in.batch_size; ++b) {
        if (in.text_mask(b, k) != 0.0) ++coverage[static_cast<std::size_t>(k)];
        occluded.text.row(b * kFields + k) = Eigen::Map<const Eigen::RowVectorXd>(mask.data(), config.h);
        occluded.text_mask(b, k) = 1.0;
      }
      std::vector<Tensor> zk = z;
      zk[static_cast<std::size_t>(text_slot)] = bundle.model.encode_text(occluded, eval);
      const std::vector<Scores> y = denormalize_rows(bundle, bundle.model.fuse(zk, eval).y_hat.value());
      for (std::size_t b = 0; b < y.size(); ++b) {
        for (std::size_t t = 0; t < 2; ++t) sums[static_cast<std::size_t>(k)][t] += std::abs(y[b][t] - base[b][t]);
      }
    }
  });
  const double n = static_cast<double>(rows.size());
  for (std::size_t k = 0; k < datahub::kNumTextFields; ++k) {
    out.fields.push_back({std::string(datahub::kTextFields[k]), {sums[k][0] / n, sums[k][1] / n}, coverage[k]});
  }
  return out;
}

inline void write_occlusion_csv(std::ostream& out, const OcclusionResult& result, const Provenance& prov) {
  prov.write_comment(out);
  out << "field,importance_sap,importance_ei,coverage,n_samples\n";
  for (const auto& f : result.fields) {
    out << f.field << ',' << format_double(f.importance[0]) << ',' << format_double(f.importance[1]) << ','
        << f.coverage << ',' << result.n_samples << '\n';
  }
}

}  // namespace epcfusion::explain
