#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "epcfusion/datahub/bands.hpp"
#include "epcfusion/datahub/records.hpp"
#include "epcfusion/datahub/scaling.hpp"
#include "epcfusion/diffcore/checkpoint.hpp"
#include "epcfusion/fusionnet/model.hpp"

namespace epcfusion::fusionnet {

/// A trained model plus everything needed to feed it: category vocabularies,
/// feature and target scalers, and the band table.
struct ModelBundle {
  FusionModel model;
  datahub::Schema schema;
  datahub::TargetScaler target_scaler;
  datahub::FeatureScaler feature_scaler;
  datahub::BandTable bands;
  std::uint64_t seed = 0;

  const ModelConfig& config() const { return model.config(); }

  std::uint64_t config_hash() const { return diffcore::fnv1a64(model.config().to_json().dump()); }

  diffcore::Checkpoint to_checkpoint() const {
    diffcore::Checkpoint ckpt;
    ckpt.seed = seed;
    ckpt.config_hash = config_hash();
    nlohmann::json header;
    header["format"] = "epcfusion-model";
    header["model_config"] = model.config().to_json();
    nlohmann::json vocab;
    for (std::size_t f = 0; f < datahub::kNumCategorical; ++f) {
      vocab[std::string(datahub::kCategoricalFields[f])] = schema.vocabularies[f].values();
    }
    header["vocabularies"] = vocab;
    ckpt.header = header.dump();
    ckpt.blobs = model.state_dict();

    Matrix target(2, 2);
    target << target_scaler.mean[0], target_scaler.mean[1], target_scaler.stddev[0], target_scaler.stddev[1];
    ckpt.blobs["scaler.target"] = target;
    Matrix numeric(3, static_cast<Index>(datahub::kNumNumeric));
    for (std::size_t f = 0; f < datahub::kNumNumeric; ++f) {
      numeric(0, static_cast<Index>(f)) = feature_scaler.numeric_median[f];
      numeric(1, static_cast<Index>(f)) = feature_scaler.numeric_mean[f];
      numeric(2, static_cast<Index>(f)) = feature_scaler.numeric_std[f];
    }
    ckpt.blobs["scaler.numeric"] = numeric;
    Matrix spatial(2, static_cast<Index>(datahub::kNumSpatialNumeric));
    for (std::size_t f = 0; f < datahub::kNumSpatialNumeric; ++f) {
      spatial(0, static_cast<Index>(f)) = feature_scaler.spatial_mean[f];
      spatial(1, static_cast<Index>(f)) = feature_scaler.spatial_std[f];
    }
    ckpt.blobs["scaler.spatial"] = spatial;
    Matrix band(1, static_cast<Index>(datahub::kNumBands));
    for (std::size_t b = 0; b < datahub::kNumBands; ++b) band(0, static_cast<Index>(b)) = bands.min_score[b];
    ckpt.blobs["bands.min_score"] = band;
    return ckpt;
  }

  static ModelBundle from_checkpoint(const diffcore::Checkpoint& ckpt) {
    nlohmann::json header;
    try {
      header = nlohmann::json::parse(ckpt.header);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::SchemaMismatch, std::string("checkpoint header: ") + e.what());
    }
    if (header.value("format", "") != "epcfusion-model") fail(ErrorKind::SchemaMismatch, "checkpoint is not a model");
    ModelConfig config = ModelConfig::from_json(header.at("model_config"));
    ModelBundle bundle{FusionModel(config, ckpt.seed), {}, {}, {}, {}, ckpt.seed};
    if (bundle.config_hash() != ckpt.config_hash) fail(ErrorKind::SchemaMismatch, "checkpoint config hash mismatch");

    auto blob = [&](const std::string& name, Index rows, Index cols) -> const Matrix& {
      auto it = ckpt.blobs.find(name);
      if (it == ckpt.blobs.end() || it->second.rows() != rows || it->second.cols() != cols) {
        fail(ErrorKind::SchemaMismatch, "checkpoint blob " + name + " missing or misshapen");
      }
      return it->second;
    };
    std::map<std::string, Matrix> params;
    for (const auto& [name, m] : ckpt.blobs) {
      if (name.rfind("scaler.", 0) != 0 && name.rfind("bands.", 0) != 0) params.emplace(name, m);
    }
    bundle.model.load_state_dict(params);

    try {
      for (std::size_t f = 0; f < datahub::kNumCategorical; ++f) {
        bundle.schema.vocabularies[f] = datahub::Vocabulary::from_values(
            header.at("vocabularies").at(std::string(datahub::kCategoricalFields[f])).get<std::vector<std::string>>());
      }
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::SchemaMismatch, std::string("checkpoint vocabularies: ") + e.what());
    }
    const Matrix& target = blob("scaler.target", 2, 2);
    bundle.target_scaler.mean = {target(0, 0), target(0, 1)};
    bundle.target_scaler.stddev = {target(1, 0), target(1, 1)};
    const Matrix& numeric = blob("scaler.numeric", 3, static_cast<Index>(datahub::kNumNumeric));
    for (std::size_t f = 0; f < datahub::kNumNumeric; ++f) {
      bundle.feature_scaler.numeric_median[f] = numeric(0, static_cast<Index>(f));
      bundle.feature_scaler.numeric_mean[f] = numeric(1, static_cast<Index>(f));
      bundle.feature_scaler.numeric_std[f] = numeric(2, static_cast<Index>(f));
    }
    const Matrix& spatial = blob("scaler.spatial", 2, static_cast<Index>(datahub::kNumSpatialNumeric));
    for (std::size_t f = 0; f < datahub::kNumSpatialNumeric; ++f) {
      bundle.feature_scaler.spatial_mean[f] = spatial(0, static_cast<Index>(f));
      bundle.feature_scaler.spatial_std[f] = spatial(1, static_cast<Index>(f));
    }
    const Matrix& band = blob("bands.min_score", 1, static_cast<Index>(datahub::kNumBands));
    for (std::size_t b = 0; b < datahub::kNumBands; ++b) bundle.bands.min_score[b] = band(0, static_cast<Index>(b));
    bundle.bands.validate();
    return bundle;
  }

  // Re-encodes categories of records ingested under another schema.
  void encode(datahub::PropertyRecord& record) const { schema.encode(record); }
};

inline constexpr std::size_t kEvalBatch = 256;

/// Eval-mode predictions on the original score scale, one (SAP, EI) pair per
/// selected record.
inline std::vector<std::array<double, 2>> predict_scores(const FusionModel& model, const datahub::FeatureScaler& features,
                                                         const datahub::TargetScaler& targets,
                                                         std::span<const datahub::PropertyRecord* const> rows) {
  diffcore::NoGradGuard no_grad;
  std::vector<std::array<double, 2>> out;
  out.reserve(rows.size());
  for (std::size_t start = 0; start < rows.size(); start += kEvalBatch) {
    const std::size_t end = std::min(rows.size(), start + kEvalBatch);
    const ModelInput in = make_batch(rows.subspan(start, end - start), features, model.config());
    const FusionOutput o = model.forward(in);
    for (Index b = 0; b < o.y_hat.rows(); ++b) {
      out.push_back(targets.denormalize({o.y_hat.value()(b, 0), o.y_hat.value()(b, 1)}));
    }
  }
  return out;
}

inline std::vector<const datahub::PropertyRecord*> pointers(const std::vector<datahub::PropertyRecord>& records) {
  std::vector<const datahub::PropertyRecord*> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(&r);
  return out;
}

inline std::vector<const datahub::PropertyRecord*> pointers(const std::vector<datahub::PropertyRecord>& records,
                                                            std::span<const std::size_t> indices) {
  std::vector<const datahub::PropertyRecord*> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(&records.at(i));
  return out;
}

inline std::vector<std::array<double, 2>> predict_scores(const ModelBundle& bundle,
                                                         std::span<const datahub::PropertyRecord* const> rows) {
  return predict_scores(bundle.model, bundle.feature_scaler, bundle.target_scaler, rows);
}

}  // namespace epcfusion::fusionnet
