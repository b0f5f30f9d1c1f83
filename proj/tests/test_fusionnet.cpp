#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

#include "epcfusion/diffcore/gradcheck.hpp"
#include "epcfusion/fusionnet/bundle.hpp"
#include "epcfusion/fusionnet/model.hpp"
#include "support.hpp"

using namespace testing_support;
using epcfusion::ErrorKind;
using epcfusion::diffcore::Index;
using epcfusion::diffcore::Matrix;
using epcfusion::diffcore::Tensor;
namespace dc = epcfusion::diffcore;

namespace {

Matrix seeded_matrix(Index rows, Index cols, std::uint64_t seed) {
  epcfusion::Rng rng(seed);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-1.0, 1.0);
  return m;
}

fn::ModelInput batch_of(const Fixture& f, std::size_t first, std::size_t count, const fn::ModelConfig& config) {
  auto rows = fn::pointers(f.data.records);
  return fn::make_batch(std::span(rows).subspan(first, count), f.features, config);
}

Matrix relu(const Matrix& m) { return m.cwiseMax(0.0); }

double max_abs_diff(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

Matrix param(fn::FusionModel& m, const std::string& name) { return m.find_parameter(name)->value(); }

void set_param(fn::FusionModel& m, const std::string& name, const Matrix& v) {
  m.find_parameter(name)->mutable_value() = v;
}

void zero_param(fn::FusionModel& m, const std::string& name) {
  Tensor* t = m.find_parameter(name);
  t->mutable_value().setZero();
}

}  // namespace

TEST(FusionModel, OutputShapes) {
  auto f = small_fixture(20);
  fn::FusionModel model(f.config, 1);
  auto out = model.forward(batch_of(f, 0, 5, f.config));
  EXPECT_EQ(out.z_tab.cols(), 8);
  EXPECT_EQ(out.z_text.cols(), 8);
  EXPECT_EQ(out.z_spatial.cols(), 8);
  EXPECT_EQ(out.alpha.rows(), 5);
  EXPECT_EQ(out.alpha.cols(), 3);
  EXPECT_EQ(out.y_hat.cols(), 2);
  EXPECT_EQ(out.band_logits.cols(), 14);
  EXPECT_TRUE(out.band_logits.value().allFinite());
}

TEST(FusionModel, DefaultDimensionsAreTableDefaults) {
  fn::ModelConfig c;
  EXPECT_EQ(c.d, 128);
  EXPECT_EQ(c.e, 64);
  EXPECT_EQ(c.h, 768);
  EXPECT_EQ(c.boundary_length, 128);
  EXPECT_EQ(c.gate_hidden, 128);
  EXPECT_EQ(c.numeric_mlp, (std::vector<int>{128, 64}));
  EXPECT_EQ(c.spatial_numeric_mlp, (std::vector<int>{64, 32}));
  EXPECT_EQ(c.fusion_mlp, (std::vector<int>{256, 128}));
  EXPECT_DOUBLE_EQ(c.dropout, 0.1);
  c.vocab_sizes = {13, 6, 7, 5, 7};
  fn::FusionModel model(c, 1);
  EXPECT_EQ(model.find_parameter("spatial.positional")->rows(), 128);
  EXPECT_EQ(model.find_parameter("spatial.positional")->cols(), 128);
  EXPECT_EQ(model.find_parameter("spatial.conv.1.weight")->rows(), 3 * 128);
  EXPECT_EQ(model.find_parameter("tab.embedding.main_fuel")->cols(), 64);
  EXPECT_EQ(model.find_parameter("tab.proj.weight")->rows(), 5 * 64 + 64);
  EXPECT_EQ(model.find_parameter("text.proj.weight")->rows(), 768);
  EXPECT_EQ(model.find_parameter("spatial.proj.weight")->rows(), 128 + 32);
  EXPECT_EQ(model.find_parameter("fusion.0.weight")->rows(), 3 * 128);
  EXPECT_EQ(model.find_parameter("fusion.1.weight")->cols(), 128);
  EXPECT_EQ(model.find_parameter("head.band.weight")->cols(), 14);
}

TEST(FusionModel, AlphaOnSimplexForFullAndBimodal) {
  auto f = small_fixture(64);
  for (auto m : {fn::Modalities::all(), fn::Modalities{true, true, false}, fn::Modalities{false, true, true}}) {
    auto model = fn::build_ablation_model(f.config, m, 4);
    auto out = model.forward(batch_of(f, 0, 64, model.config()));
    EXPECT_EQ(out.alpha.cols(), m.count());
    for (Index b = 0; b < 64; ++b) {
      EXPECT_NEAR(out.alpha.value().row(b).sum(), 1.0, 1e-12);
      EXPECT_GE(out.alpha.value().row(b).minCoeff(), 0.0);
    }
  }
}

TEST(FusionModel, ZeroGateGivesUniformAlpha) {
  auto f = small_fixture(10);
  fn::FusionModel model(f.config, 2);
  zero_param(model, "gate.1.weight");
  zero_param(model, "gate.1.bias");
  auto out = model.forward(batch_of(f, 0, 10, f.config));
  EXPECT_LT(max_abs_diff(out.alpha.value(), Matrix::Constant(10, 3, 1.0 / 3.0)), 1e-15);
}

TEST(FusionModel, LargeGateLogitSaturates) {
  auto f = small_fixture(10);
  fn::FusionModel model(f.config, 2);
  zero_param(model, "gate.1.weight");
  Matrix bias = Matrix::Zero(1, 3);
  bias(0, 1) = 10.0;
  set_param(model, "gate.1.bias", bias);
  auto out = model.forward(batch_of(f, 0, 10, f.config));
  const double expected = std::exp(10.0) / (std::exp(10.0) + 2.0);
  for (Index b = 0; b < 10; ++b) {
    EXPECT_NEAR(out.alpha.value()(b, 1), expected, 1e-12);
    EXPECT_GT(out.alpha.value()(b, 1), 0.9999);
  }
}

TEST(FusionModel, ZeroFusionOutputGivesHeadBias) {
  auto f = small_fixture(6);
  fn::FusionModel model(f.config, 5);
  zero_param(model, "fusion.1.weight");
  zero_param(model, "fusion.1.bias");
  Matrix rb(1, 2);
  rb << 0.25, -1.5;
  set_param(model, "head.regression.bias", rb);
  auto out = model.forward(batch_of(f, 0, 6, f.config));
  EXPECT_EQ(out.z_fuse.value().cwiseAbs().maxCoeff(), 0.0);
  for (Index b = 0; b < 6; ++b) {
    EXPECT_EQ(out.y_hat.value()(b, 0), 0.25);
    EXPECT_EQ(out.y_hat.value()(b, 1), -1.5);
    EXPECT_EQ(out.band_logits.value().row(b), param(model, "head.band.bias").row(0));
  }
}

TEST(FusionModel, RegressionHeadIsAffine) {
  auto f = small_fixture(6);
  fn::FusionModel model(f.config, 5);
  Tensor z = Tensor::constant(fn::FusionModel(f.config, 9).forward(batch_of(f, 0, 6, f.config)).z_fuse.value());
  const Matrix w = param(model, "head.regression.weight");
  const Matrix b = param(model, "head.regression.bias");
  auto head = [&](const Matrix& x) {
    Matrix y = x * w;
    y.rowwise() += b.row(0);
    return y;
  };
  const Matrix lhs = head(2.0 * z.value()) - head(z.value());
  const Matrix rhs = head(z.value()) - head(Matrix::Zero(6, z.cols()));
  EXPECT_LT(max_abs_diff(lhs, rhs), 1e-12);
}

TEST(EncodeTabular, UnknownCategoriesMatchHandTrace) {
  auto f = small_fixture(8);
  fn::FusionModel model(f.config, 6);
  // The numeric MLP has zero biases at init, so MLP(0) = 0.
  fn::ModelInput in = batch_of(f, 0, 1, f.config);
  std::fill(in.categorical.begin(), in.categorical.end(), 0);
  in.numeric.setZero();
  fn::ForwardContext eval;
  const Matrix z = model.encode_tabular(in, eval).value();

  Matrix concat = Matrix::Zero(1, 5 * 4 + 6);
  for (std::size_t fld = 0; fld < 5; ++fld) {
    concat.block(0, static_cast<Index>(fld) * 4, 1, 4) =
        param(model, "tab.embedding." + std::string(dh::kCategoricalFields[fld])).row(0);
  }
  Matrix expected = relu(concat * param(model, "tab.proj.weight") + param(model, "tab.proj.bias"));
  EXPECT_LT(max_abs_diff(z, expected), 1e-14);
}

TEST(EncodeTabular, MainFuelChangesOutputAndOutOfVocabIsCounted) {
  auto f = small_fixture(8);
  fn::FusionModel model(f.config, 6);
  fn::ModelInput in = batch_of(f, 0, 2, f.config);
  std::copy(in.categorical.begin(), in.categorical.begin() + 5, in.categorical.begin() + 5);
  in.numeric.row(1) = in.numeric.row(0);
  in.categorical[9] = in.categorical[4] == 1 ? 2 : 1;
  fn::ForwardContext eval;
  const Matrix z = model.encode_tabular(in, eval).value();
  EXPECT_GT((z.row(0) - z.row(1)).cwiseAbs().maxCoeff(), 0.0);

  dh::PropertyRecord r = f.data.records[0];
  r.categorical[4] = 999;
  std::vector<const dh::PropertyRecord*> rows{&r};
  EXPECT_EQ(fn::make_batch(rows, f.features, f.config).unknown_categories, 1u);
}

TEST(EncodeText, MeanOfPresentFields) {
  auto f = small_fixture(4);
  fn::FusionModel model(f.config, 7);
  fn::ModelInput in = batch_of(f, 0, 1, f.config);
  in.text_mask.setZero();
  in.text_mask(0, 3) = 1.0;
  fn::ForwardContext eval;
  const Matrix one = model.encode_text(in, eval).value();
  const Matrix expected = relu(in.text.row(3) * param(model, "text.proj.weight") + param(model, "text.proj.bias"));
  EXPECT_LT(max_abs_diff(one, expected), 1e-14);

  in.text.row(5) = in.text.row(3);
  in.text_mask(0, 5) = 1.0;
  EXPECT_LT(max_abs_diff(model.encode_text(in, eval).value(), expected), 1e-14);

  in.text_mask.setZero();
  EXPECT_EQ(kind_of([&] { model.encode_text(in, eval); }), ErrorKind::MissingModality);
}

TEST(EncodeText, FieldReorderingInvariance) {
  auto f = small_fixture(4);
  fn::FusionModel model(f.config, 7);
  fn::ModelInput in = batch_of(f, 0, 1, f.config);
  fn::ModelInput perm = in;
  const std::array<int, 8> order{7, 2, 5, 0, 3, 6, 1, 4};
  for (int k = 0; k < 8; ++k) {
    perm.text.row(k) = in.text.row(order[k]);
    perm.text_mask(0, k) = in.text_mask(0, order[k]);
  }
  fn::ForwardContext eval;
  EXPECT_LT(max_abs_diff(model.encode_text(in, eval).value(), model.encode_text(perm, eval).value()), 1e-13);
}

TEST(EncodeSpatial, TranslationAndScalingInvariance) {
  auto f = small_fixture(2);
  fn::FusionModel model(f.config, 8);
  const auto& rec = f.data.records[0];
  auto moved = rec;
  auto scaled = rec;
  for (auto& p : moved.footprint.points) p = {p.x + 1234.5, p.y - 987.25};
  for (auto& p : scaled.footprint.points) p = {p.x * 2.0, p.y * 2.0};
  moved.boundary = epcfusion::geometry::build_spatial_features(moved.footprint, rec.spatial.height, kSmallLength).boundary;
  scaled.boundary = epcfusion::geometry::build_spatial_features(scaled.footprint, rec.spatial.height, kSmallLength).boundary;
  std::vector<const dh::PropertyRecord*> rows{&rec, &moved, &scaled};
  fn::ModelInput in = fn::make_batch(rows, f.features, f.config);
  fn::ForwardContext eval;
  const Matrix z = model.encode_spatial(in, eval).value();
  EXPECT_LT((z.row(0) - z.row(1)).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((z.row(0) - z.row(2)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(EncodeSpatial, WrongLengthIsShapeError) {
  auto f = small_fixture(2);
  auto config = f.config;
  config.boundary_length = 32;
  EXPECT_EQ(kind_of([&] { batch_of(f, 0, 1, config); }), ErrorKind::ShapeError);
}

TEST(Ablation, SubsetArchitectures) {
  auto f = small_fixture(6);
  auto text_only = fn::build_ablation_model(f.config, {false, true, false}, 1);
  auto out = text_only.forward(batch_of(f, 0, 6, text_only.config()));
  EXPECT_EQ(out.alpha.value(), Matrix::Ones(6, 1));
  EXPECT_EQ(text_only.find_parameter("gate.0.weight"), nullptr);
  EXPECT_EQ(text_only.find_parameter("tab.proj.weight"), nullptr);

  {
    fn::ModelConfig big = f.config;
    big.d = 128;
    auto bimodal = fn::build_ablation_model(big, {true, true, false}, 1);
    EXPECT_EQ(bimodal.find_parameter("fusion.0.weight")->rows(), 256);
    EXPECT_EQ(bimodal.find_parameter("gate.1.weight")->cols(), 2);
  }

  auto full = fn::build_ablation_model(f.config, fn::Modalities::all(), 3);
  fn::FusionModel reference(f.config, 3);
  EXPECT_EQ(full.state_dict().size(), reference.state_dict().size());
  for (const auto& [name, value] : reference.state_dict()) EXPECT_EQ(full.state_dict().at(name), value) << name;

  EXPECT_EQ(kind_of([&] { fn::build_ablation_model(f.config, {false, false, false}, 1); }), ErrorKind::InvalidConfig);
  EXPECT_EQ(kind_of([] { fn::Modalities::parse(""); }), ErrorKind::InvalidConfig);
  EXPECT_EQ(fn::Modalities::parse("tab+spatial"), (fn::Modalities{true, false, true}));
}

TEST(FusionModel, EveryParameterReceivesGradient) {
  auto f = small_fixture(32);
  fn::FusionModel model(f.config, 11);
  dc::DropoutStream stream(1);
  fn::ForwardContext train{true, &stream};
  auto in = batch_of(f, 0, 32, f.config);
  auto out = model.forward(in, train);
  Matrix target = seeded_matrix(32, 2, 5);
  dc::backward(dc::add(dc::huber_loss(out.y_hat, target), dc::mean_all(out.band_logits)));
  for (const auto& p : model.parameters()) {
    ASSERT_TRUE(p.tensor.has_grad()) << p.name;
    EXPECT_GT(p.tensor.grad().cwiseAbs().maxCoeff(), 0.0) << p.name;
  }
}

TEST(FusionModel, GradCheckSmallModelAllCoordinates) {
  auto f = small_fixture(8);
  fn::FusionModel model(f.config, 12);
  auto in = batch_of(f, 0, 4, f.config);
  Matrix target = seeded_matrix(4, 2, 6);
  std::vector<int> labels{0, 3, 6, 2};
  auto loss = [&] {
    dc::DropoutStream stream(77);
    fn::ForwardContext train{true, &stream};
    auto out = model.forward(in, train);
    return dc::add(dc::huber_loss(out.y_hat, target), dc::cross_entropy(out.sap_logits(7), labels));
  };
  std::vector<Tensor> params;
  for (const auto& p : model.parameters()) params.push_back(p.tensor);
  auto r = dc::grad_check(loss, params);
  EXPECT_LT(r.max_rel_error, 1e-4);
  EXPECT_GT(r.checked, 500u);
}

TEST(FusionModel, EvalForwardIsDeterministic) {
  auto f = small_fixture(16);
  fn::FusionModel a(f.config, 21);
  fn::FusionModel b(f.config, 21);
  auto in = batch_of(f, 0, 16, f.config);
  EXPECT_EQ(a.forward(in).y_hat.value(), b.forward(in).y_hat.value());
  EXPECT_EQ(a.forward(in).y_hat.value(), a.forward(in).y_hat.value());
}

TEST(Bundle, CheckpointRoundTripGivesIdenticalPredictions) {
  auto f = small_fixture(16);
  fn::ModelBundle bundle{fn::FusionModel(f.config, 31), f.data.schema, f.targets, f.features, {}, 31};
  std::stringstream buf;
  dc::write_checkpoint(buf, bundle.to_checkpoint());
  auto loaded = fn::ModelBundle::from_checkpoint(dc::read_checkpoint(buf));
  auto rows = fn::pointers(f.data.records);
  EXPECT_EQ(fn::predict_scores(bundle, rows), fn::predict_scores(loaded, rows));
  EXPECT_EQ(loaded.seed, 31u);
  EXPECT_EQ(loaded.schema.vocabularies[1].values(), f.data.schema.vocabularies[1].values());
  EXPECT_EQ(loaded.feature_scaler.numeric_median, f.features.numeric_median);

  auto ckpt = bundle.to_checkpoint();
  ckpt.config_hash ^= 1;
  EXPECT_EQ(kind_of([&] { fn::ModelBundle::from_checkpoint(ckpt); }), ErrorKind::SchemaMismatch);
}
