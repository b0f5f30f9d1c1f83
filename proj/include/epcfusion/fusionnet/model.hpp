#pragma once

// Three modality encoders, sample-wise gated fusion and the SAP/EI heads.

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "epcfusion/diffcore/ops.hpp"
#include "epcfusion/diffcore/optim.hpp"
#include "epcfusion/fusionnet/batch.hpp"
#include "epcfusion/fusionnet/config.hpp"
#include "epcfusion/random.hpp"

namespace epcfusion::fusionnet {

using diffcore::Tensor;

inline constexpr const char* kProjectionGroup = "projection";
inline constexpr const char* kMainGroup = "main";

struct ForwardContext {
  bool training = false;
  diffcore::DropoutStream* dropout = nullptr;
};

struct Linear {
  Tensor weight;
  Tensor bias;

  Tensor operator()(const Tensor& x) const { return diffcore::dense(x, weight, bias); }
};

struct Conv1d {
  Tensor weight;  // (3 * C_in) x C_out
  Tensor bias;

  Tensor operator()(const Tensor& x, Index seq_len) const { return diffcore::conv1d(x, weight, bias, seq_len); }
};

struct FusionOutput {
  Tensor z_tab;
  Tensor z_text;
  Tensor z_spatial;
  Tensor alpha;        // B x |modalities|
  Tensor z_fuse;       // B x fusion_mlp.back()
  Tensor y_hat;        // B x 2, normalized targets
  Tensor band_logits;  // B x (2 * n_bands): SAP logits then EI logits

  Tensor sap_logits(int n_bands) const { return diffcore::slice_cols(band_logits, 0, n_bands); }
  Tensor ei_logits(int n_bands) const { return diffcore::slice_cols(band_logits, n_bands, n_bands); }
};

struct NamedParam {
  std::string name;
  std::string group;
  Tensor tensor;
};

class FusionModel {
 public:
  FusionModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    Rng rng(mix64(seed, 0x1417ULL));
    const int d = config_.d;
    const Modalities& m = config_.modalities;

    if (m.tab) {
      for (std::size_t f = 0; f < datahub::kNumCategorical; ++f) {
        tab_embeddings_.push_back(
            add_normal("tab.embedding." + std::string(datahub::kCategoricalFields[f]), config_.vocab_sizes[f], config_.e, rng));
      }
      int in = static_cast<int>(datahub::kNumNumeric);
      for (std::size_t i = 0; i < config_.numeric_mlp.size(); ++i) {
        tab_numeric_.push_back(add_linear("tab.numeric." + std::to_string(i), in, config_.numeric_mlp[i], kMainGroup, rng));
        in = config_.numeric_mlp[i];
      }
      const int concat_width = static_cast<int>(datahub::kNumCategorical) * config_.e + in;
      tab_proj_ = add_linear("tab.proj", concat_width, d, kMainGroup, rng);
    }
    if (m.text) {
      text_proj_ = add_linear("text.proj", config_.h, d, kProjectionGroup, rng);
    }
    if (m.spatial) {
      point_proj_ = add_linear("spatial.point", 2, d, kMainGroup, rng);
      positional_ = add_normal("spatial.positional", config_.boundary_length, d, rng);
      for (int i = 0; i < 2; ++i) convs_.push_back(add_conv("spatial.conv." + std::to_string(i), d, d, rng));
      int in = static_cast<int>(datahub::kNumSpatialNumeric);
      for (std::size_t i = 0; i < config_.spatial_numeric_mlp.size(); ++i) {
        spatial_numeric_.push_back(
            add_linear("spatial.numeric." + std::to_string(i), in, config_.spatial_numeric_mlp[i], kMainGroup, rng));
        in = config_.spatial_numeric_mlp[i];
      }
      spatial_proj_ = add_linear("spatial.proj", d + in, d, kMainGroup, rng);
    }

    const int k = m.count();
    if (k > 1) {
      gate_hidden_ = add_linear("gate.0", k * d, config_.gate_hidden, kMainGroup, rng);
      gate_out_ = add_linear("gate.1", config_.gate_hidden, k, kMainGroup, rng);
    }
    int in = k * d;
    for (std::size_t i = 0; i < config_.fusion_mlp.size(); ++i) {
      fusion_.push_back(add_linear("fusion." + std::to_string(i), in, config_.fusion_mlp[i], kMainGroup, rng));
      in = config_.fusion_mlp[i];
    }
    regression_head_ = add_linear("head.regression", in, 2, kMainGroup, rng);
    band_head_ = add_linear("head.band", in, 2 * config_.n_bands, kMainGroup, rng);
  }

  FusionModel(const FusionModel&) = delete;
  FusionModel& operator=(const FusionModel&) = delete;
  FusionModel(FusionModel&&) = default;
  FusionModel& operator=(FusionModel&&) = default;

  const ModelConfig& config() const { return config_; }
  const std::vector<NamedParam>& parameters() const { return params_; }

  std::vector<diffcore::ParamGroup> param_groups(double main_lr, double projection_lr) const {
    diffcore::ParamGroup main{kMainGroup, main_lr, {}};
    diffcore::ParamGroup proj{kProjectionGroup, projection_lr, {}};
    for (const NamedParam& p : params_) (p.group == kProjectionGroup ? proj : main).params.push_back(p.tensor);
    std::vector<diffcore::ParamGroup> groups{std::move(main)};
    if (!proj.params.empty()) groups.push_back(std::move(proj));
    return groups;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const NamedParam& p : params_) n += static_cast<std::size_t>(p.tensor.value().size());
    return n;
  }

  std::vector<Matrix> snapshot() const {
    std::vector<Matrix> out;
    out.reserve(params_.size());
    for (const NamedParam& p : params_) out.push_back(p.tensor.value());
    return out;
  }

  void restore(const std::vector<Matrix>& values) {
    if (values.size() != params_.size()) fail(ErrorKind::ShapeError, "snapshot size mismatch");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor t = params_[i].tensor;
      if (t.rows() != values[i].rows() || t.cols() != values[i].cols()) {
        fail(ErrorKind::ShapeError, "snapshot shape mismatch for " + params_[i].name);
      }
      t.mutable_value() = values[i];
    }
  }

  std::map<std::string, Matrix> state_dict() const {
    std::map<std::string, Matrix> out;
    for (const NamedParam& p : params_) out.emplace(p.name, p.tensor.value());
    return out;
  }

  void load_state_dict(const std::map<std::string, Matrix>& state) {
    for (NamedParam& p : params_) {
      auto it = state.find(p.name);
      if (it == state.end()) fail(ErrorKind::SchemaMismatch, "checkpoint lacks parameter " + p.name);
      if (it->second.rows() != p.tensor.rows() || it->second.cols() != p.tensor.cols()) {
        fail(ErrorKind::SchemaMismatch, "parameter " + p.name + " has the wrong shape in checkpoint");
      }
      p.tensor.mutable_value() = it->second;
    }
  }

  Tensor* find_parameter(const std::string& name) {
    for (NamedParam& p : params_) {
      if (p.name == name) return &p.tensor;
    }
    return nullptr;
  }

  Tensor encode_tabular(const ModelInput& in, ForwardContext& ctx) const {
    require_modality(Modality::Tabular);
    std::vector<Tensor> parts;
    std::vector<int> column(static_cast<std::size_t>(in.batch_size));
    for (std::size_t f = 0; f < datahub::kNumCategorical; ++f) {
      for (Index b = 0; b < in.batch_size; ++b) column[static_cast<std::size_t>(b)] = in.categorical_row(b)[f];
      parts.push_back(diffcore::embedding_lookup(tab_embeddings_[f], column));
    }
    Tensor h = Tensor::constant(in.numeric);
    for (const Linear& layer : tab_numeric_) h = block(layer, h, ctx);
    parts.push_back(h);
    return block(tab_proj_, diffcore::concat(parts), ctx);
  }

  Tensor encode_text(const ModelInput& in, ForwardContext& ctx) const {
    require_modality(Modality::Text);
    const Tensor pooled = diffcore::masked_mean_pool(Tensor::constant(in.text), in.text_mask);
    return block(text_proj_, pooled, ctx);
  }

  /// `boundary` overrides the input point sequence, e.g. with a
  /// gradient-tracking leaf for saliency.
  Tensor encode_spatial(const ModelInput& in, ForwardContext& ctx, const Tensor* boundary = nullptr) const {
    require_modality(Modality::Spatial);
    const Index len = config_.boundary_length;
    const Tensor points = boundary != nullptr ? *boundary : Tensor::constant(in.boundary);
    diffcore::require_shape(points.cols() == 2 && points.rows() == in.batch_size * len,
                            "boundary input must be (B*L) x 2 with L = " + std::to_string(len));
    Tensor x = diffcore::add_tiled(point_proj_(points), positional_);
    for (const Conv1d& conv : convs_) x = diffcore::relu(conv(x, len));
    const Tensor pooled = diffcore::global_average_pool(x, len);
    Tensor u = Tensor::constant(in.spatial_numeric);
    for (const Linear& layer : spatial_numeric_) u = block(layer, u, ctx);
    return block(spatial_proj_, diffcore::concat({pooled, u}), ctx);
  }

  /// Gate + fusion MLP + heads over the modality embeddings given in
  /// (tab, text, spatial) order restricted to the configured subset.
  FusionOutput fuse(const std::vector<Tensor>& z, ForwardContext& ctx) const {
    const int k = config_.modalities.count();
    if (static_cast<int>(z.size()) != k) fail(ErrorKind::ShapeError, "fuse: expected one embedding per modality");
    FusionOutput out;
    std::size_t slot = 0;
    for (Modality m : config_.modalities.list()) {
      if (m == Modality::Tabular) out.z_tab = z[slot];
      if (m == Modality::Text) out.z_text = z[slot];
      if (m == Modality::Spatial) out.z_spatial = z[slot];
      ++slot;
    }
    const Index batch = z.front().rows();
    Tensor gated;
    if (k == 1) {
      out.alpha = Tensor::constant(Matrix::Ones(batch, 1));
      gated = z.front();
    } else {
      const Tensor logits = gate_out_(diffcore::relu(gate_hidden_(diffcore::concat(z))));
      out.alpha = diffcore::softmax(logits);
      std::vector<Tensor> scaled;
      for (int i = 0; i < k; ++i) scaled.push_back(diffcore::scale_rows_by(z[static_cast<std::size_t>(i)], out.alpha, i));
      gated = diffcore::concat(scaled);
    }
    Tensor f = gated;
    for (const Linear& layer : fusion_) f = block(layer, f, ctx);
    out.z_fuse = f;
    out.y_hat = regression_head_(f);
    out.band_logits = band_head_(f);
    return out;
  }

  std::vector<Tensor> encode(const ModelInput& in, ForwardContext& ctx) const {
    std::vector<Tensor> z;
    if (config_.modalities.tab) z.push_back(encode_tabular(in, ctx));
    if (config_.modalities.text) z.push_back(encode_text(in, ctx));
    if (config_.modalities.spatial) z.push_back(encode_spatial(in, ctx));
    return z;
  }

  FusionOutput forward(const ModelInput& in, ForwardContext& ctx) const { return fuse(encode(in, ctx), ctx); }

  FusionOutput forward(const ModelInput& in) const {
    ForwardContext eval;
    return forward(in, eval);
  }

 private:
  void require_modality(Modality m) const {
    if (!config_.modalities.has(m)) {
      fail(ErrorKind::InvalidConfig, std::string("model has no ") + std::string(kModalityNames[static_cast<std::size_t>(m)]) + " encoder");
    }
  }

  // Linear + ReLU + Dropout.
  Tensor block(const Linear& layer, const Tensor& x, ForwardContext& ctx) const {
    return diffcore::dropout(diffcore::relu(layer(x)), config_.dropout, ctx.training, ctx.dropout);
  }

  Linear add_linear(const std::string& name, int in, int out, const char* group, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    Matrix w(in, out);
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-limit, limit);
    Linear layer{Tensor::parameter(std::move(w)), Tensor::parameter(Matrix::Zero(1, out))};
    params_.push_back({name + ".weight", group, layer.weight});
    params_.push_back({name + ".bias", group, layer.bias});
    return layer;
  }

  Conv1d add_conv(const std::string& name, int in_channels, int out_channels, Rng& rng) {
    Linear l = add_linear(name, 3 * in_channels, out_channels, kMainGroup, rng);
    return Conv1d{l.weight, l.bias};
  }

  Tensor add_normal(const std::string& name, int rows, int cols, Rng& rng) {
    Matrix w(rows, cols);
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal(0.0, 0.02);
    Tensor t = Tensor::parameter(std::move(w));
    params_.push_back({name, kMainGroup, t});
    return t;
  }

  ModelConfig config_;
  std::vector<NamedParam> params_;

  std::vector<Tensor> tab_embeddings_;
  std::vector<Linear> tab_numeric_;
  Linear tab_proj_;
  Linear text_proj_;
  Linear point_proj_;
  Tensor positional_;
  std::vector<Conv1d> convs_;
  std::vector<Linear> spatial_numeric_;
  Linear spatial_proj_;
  Linear gate_hidden_;
  Linear gate_out_;
  std::vector<Linear> fusion_;
  Linear regression_head_;
  Linear band_head_;
};

// Single-modality models bypass the gate; the rest gate over |subset| logits.
inline FusionModel build_ablation_model(ModelConfig config, const Modalities& modalities, std::uint64_t seed) {
  if (modalities.count() == 0) fail(ErrorKind::InvalidConfig, "ablation subset is empty");
  config.modalities = modalities;
  return FusionModel(std::move(config), seed);
}

}  // namespace epcfusion::fusionnet
