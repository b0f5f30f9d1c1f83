#pragma once

// Reverse-mode vs central finite differences for every layer type on its own
// and for the composed training loss of a small fusion model on 4 samples.

#include <chrono>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "epcfusion/datahub/synth.hpp"
#include "epcfusion/diffcore/gradcheck.hpp"
#include "epcfusion/diffcore/ops.hpp"
#include "epcfusion/fusionnet/batch.hpp"
#include "epcfusion/fusionnet/model.hpp"
#include "epcfusion/random.hpp"
#include "epcfusion/trainer/loss.hpp"

namespace epcfusion::trainer {

struct GradCheckEntry {
  std::string name;
  diffcore::GradCheckResult result;
};

struct GradCheckSuite {
  std::vector<GradCheckEntry> entries;
  double seconds = 0.0;

  double max_rel_error() const {
    double worst = 0.0;
    for (const auto& e : entries) worst = std::max(worst, e.result.max_rel_error);
    return worst;
  }

  bool passed(double tolerance = 1e-4) const { return max_rel_error() < tolerance; }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["max_rel_error"] = max_rel_error();
    j["seconds"] = seconds;
    for (const auto& e : entries) {
      j["checks"].push_back({{"name", e.name},
                             {"max_rel_error", e.result.max_rel_error},
                             {"checked", e.result.checked},
                             {"skipped_kinks", e.result.skipped_kinks},
                             {"grown_steps", e.result.grown_steps}});
    }
    return j;
  }
};

namespace detail {

inline Matrix random_matrix(Index rows, Index cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-scale, scale);
  return m;
}

// Scalar <x, w>: turns any layer output into a loss with a generic upstream gradient.
inline Tensor probe(const Tensor& x, const Matrix& w) {
  Matrix y(1, 1);
  y(0, 0) = x.value().cwiseProduct(w).sum();
  return diffcore::make_result(std::move(y), {x}, [w](diffcore::Node& self) {
    self.parents[0]->accumulate(w * self.grad(0, 0));
  });
}

}  // namespace detail

inline fusionnet::ModelConfig gradcheck_model_config(const datahub::Schema& schema, int text_dim, int boundary_length) {
  fusionnet::ModelConfig c;
  c.d = 8;
  c.e = 4;
  c.h = text_dim;
  c.boundary_length = boundary_length;
  c.numeric_mlp = {8, 6};
  c.spatial_numeric_mlp = {6, 4};
  c.gate_hidden = 8;
  c.fusion_mlp = {12, 8};
  c.vocab_sizes = schema.vocab_sizes();
  return c;
}

inline GradCheckSuite run_gradcheck_suite(std::uint64_t seed, const diffcore::GradCheckOptions& options = {}) {
  using namespace diffcore;
  const auto start = std::chrono::steady_clock::now();
  GradCheckSuite suite;
  Rng rng(mix64(seed, 0x6C4EULL));
  auto check = [&](const std::string& name, const std::function<Tensor()>& loss, std::vector<Tensor> params) {
    suite.entries.push_back({name, grad_check(loss, std::move(params), options)});
  };

  const Index len = 6;
  Tensor x = Tensor::parameter(detail::random_matrix(2 * len, 3, rng));
  Tensor w = Tensor::parameter(detail::random_matrix(3, 4, rng));
  Tensor b = Tensor::parameter(detail::random_matrix(1, 4, rng));
  Tensor wc = Tensor::parameter(detail::random_matrix(9, 4, rng, 0.5));
  Tensor pattern = Tensor::parameter(detail::random_matrix(len, 3, rng));
  Tensor table = Tensor::parameter(detail::random_matrix(5, 3, rng));
  Tensor slots = Tensor::parameter(detail::random_matrix(2 * 4, 3, rng));
  Tensor logits = Tensor::parameter(detail::random_matrix(2 * len, 4, rng, 2.0));
  Matrix mask(2, 4);
  mask << 1, 0, 1, 1, 0, 1, 0, 0;
  const std::vector<int> idx{3, 0, 3};
  const std::vector<int> labels{1, 3, 0, 2, 2, 1, 0, 3, 1, 1, 2, 0};
  const Matrix target = detail::random_matrix(2 * len, 4, rng, 3.0);
  auto p = [&](Index r, Index c) { return detail::random_matrix(r, c, rng); };

  const Matrix p_dense = p(2 * len, 4), p_emb = p(3, 3), p_conv = p(2 * len, 4), p_relu = p(2 * len, 3);
  const Matrix p_drop = p(2 * len, 3), p_gap = p(2, 3), p_mmp = p(2, 3), p_soft = p(2 * len, 4);
  const Matrix p_cat = p(2 * len, 7), p_slice = p(2 * len, 2), p_tile = p(2 * len, 3), p_rows = p(2 * len, 3);
  const Matrix p_add = p(2 * len, 3);

  check("dense", [&] { return detail::probe(dense(x, w, b), p_dense); }, {x, w, b});
  check("embedding", [&] { return detail::probe(embedding_lookup(table, idx), p_emb); }, {table});
  check("conv1d", [&] { return detail::probe(conv1d(x, wc, b, len), p_conv); }, {x, wc, b});
  check("relu", [&] { return detail::probe(relu(x), p_relu); }, {x});
  check("dropout", [&] {
    DropoutStream stream(mix64(seed, 5));
    return detail::probe(dropout(x, 0.3, true, &stream), p_drop);
  }, {x});
  check("global_average_pool", [&] { return detail::probe(global_average_pool(x, len), p_gap); }, {x});
  check("masked_mean_pool", [&] { return detail::probe(masked_mean_pool(slots, mask), p_mmp); }, {slots});
  check("softmax", [&] { return detail::probe(softmax(logits), p_soft); }, {logits});
  check("concat", [&] { return detail::probe(concat({x, logits}), p_cat); }, {x, logits});
  check("slice_cols", [&] { return detail::probe(slice_cols(logits, 1, 2), p_slice); }, {logits});
  check("add_tiled", [&] { return detail::probe(add_tiled(x, pattern), p_tile); }, {x, pattern});
  check("scale_rows_by", [&] { return detail::probe(scale_rows_by(x, logits, 2), p_rows); }, {x, logits});
  check("add_scale", [&] { return detail::probe(add(x, scale(x, -0.4)), p_add); }, {x});
  check("mean_all", [&] { return mean_all(logits); }, {logits});
  check("huber", [&] { return huber_loss(logits, target, 1.0); }, {logits});
  check("cross_entropy", [&] { return cross_entropy(logits, labels); }, {logits});

  // Composed loss through every encoder, the gate, the fusion MLP and both heads.
  constexpr int kDim = 16;
  constexpr int kLength = 16;
  datahub::SynthOptions so;
  so.count = 16;
  so.seed = mix64(seed, 0x5EEDULL);
  so.text_dim = kDim;
  datahub::LinkOptions link;
  link.boundary_length = kLength;
  const datahub::Dataset data = datahub::link_synthetic(datahub::generate_synthetic(so), link).dataset;
  if (data.records.size() < 4) fail(ErrorKind::Internal, "gradcheck fixture produced fewer than 4 records");
  const fusionnet::ModelConfig config = gradcheck_model_config(data.schema, kDim, kLength);
  const fusionnet::FusionModel model(config, mix64(seed, 0x30DE1ULL));
  const datahub::FeatureScaler features = datahub::FeatureScaler::fit(data.records);
  const datahub::TargetScaler targets = datahub::TargetScaler::fit(data.records);
  const std::vector<const datahub::PropertyRecord*> rows = {&data.records[0], &data.records[1], &data.records[2],
                                                            &data.records[3]};
  const fusionnet::ModelInput in = fusionnet::make_batch(rows, features, config);
  const BatchTargets batch = make_targets(rows, targets, datahub::BandTable{});
  LossConfig loss_cfg;
  loss_cfg.w_sap = 0.3;
  loss_cfg.w_ei = 0.3;
  std::vector<Tensor> params;
  for (const auto& np : model.parameters()) params.push_back(np.tensor);
  check("fusion_model_total_loss", [&] {
    DropoutStream stream(mix64(seed, 77));
    fusionnet::ForwardContext ctx{true, &stream};
    return total_loss(model.forward(in, ctx), batch, config.n_bands, loss_cfg);
  }, params);

  suite.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return suite;
}

}  // namespace epcfusion::trainer
