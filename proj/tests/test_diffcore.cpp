#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "epcfusion/diffcore/checkpoint.hpp"
#include "epcfusion/diffcore/gradcheck.hpp"
#include "epcfusion/diffcore/ops.hpp"
#include "epcfusion/diffcore/optim.hpp"
#include "epcfusion/random.hpp"

using namespace epcfusion::diffcore;
using epcfusion::Error;
using epcfusion::ErrorKind;
using epcfusion::Rng;

namespace {

Matrix random_matrix(Index r, Index c, Rng& rng, double sd = 1.0) {
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, sd);
  return m;
}

// Scalar probe <x, W> so every op can be checked through a random projection.
Tensor project(const Tensor& x, const Matrix& w) {
  Matrix y(1, 1);
  y(0, 0) = x.value().cwiseProduct(w).sum();
  return make_result(std::move(y), {x}, [w](Node& self) { self.parents[0]->accumulate(w * self.grad(0, 0)); });
}

Matrix row(std::initializer_list<double> v) {
  Matrix m(1, static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

// Direct convolution, kernel 3, zero padding 1; independent of im2col.
Matrix naive_conv(const Matrix& x, const Matrix& w, const Matrix& b, Index len) {
  const Index cin = x.cols();
  const Index cout = w.cols();
  Matrix y(x.rows(), cout);
  for (Index s = 0; s < x.rows() / len; ++s) {
    for (Index l = 0; l < len; ++l) {
      for (Index o = 0; o < cout; ++o) {
        double acc = b(0, o);
        for (Index k = 0; k < 3; ++k) {
          const Index pos = l + k - 1;
          if (pos < 0 || pos >= len) continue;
          for (Index c = 0; c < cin; ++c) acc += x(s * len + pos, c) * w(k * cin + c, o);
        }
        y(s * len + l, o) = acc;
      }
    }
  }
  return y;
}

}  // namespace

TEST(Relu, ValuesAndSubgradientAtZero) {
  Tensor x = Tensor::parameter(row({-1, 0, 2}));
  Tensor y = relu(x);
  EXPECT_EQ(y.value(), row({0, 0, 2}));
  backward(project(y, row({1, 1, 1})));
  EXPECT_EQ(x.grad(), row({0, 0, 1}));
}

TEST(Conv1d, ConstantSequenceWithAveragingKernelKeepsInterior) {
  const Index len = 6;
  Matrix x = Matrix::Constant(len, 1, 4.0);
  Matrix w = Matrix::Constant(3, 1, 1.0 / 3.0);
  Tensor y = conv1d(Tensor::constant(x), Tensor::constant(w), Tensor::constant(Matrix::Zero(1, 1)), len);
  for (Index l = 1; l + 1 < len; ++l) EXPECT_NEAR(y.value()(l, 0), 4.0, 1e-15);
  EXPECT_NEAR(y.value()(0, 0), 8.0 / 3.0, 1e-15);
}

TEST(Conv1d, MatchesDirectConvolution) {
  Rng rng(5);
  const Index len = 7;
  Matrix x = random_matrix(3 * len, 4, rng);
  Matrix w = random_matrix(12, 5, rng);
  Matrix b = random_matrix(1, 5, rng);
  Tensor y = conv1d(Tensor::constant(x), Tensor::constant(w), Tensor::constant(b), len);
  EXPECT_LT((y.value() - naive_conv(x, w, b, len)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Softmax, EqualLogitsAndNormalization) {
  Tensor y = softmax(Tensor::constant(row({2, 2, 2})));
  for (Index i = 0; i < 3; ++i) EXPECT_NEAR(y.value()(0, i), 1.0 / 3.0, 1e-15);
  Rng rng(1);
  Matrix x = random_matrix(10, 7, rng, 5.0);
  Matrix s = softmax_rows(x);
  Matrix shifted = softmax_rows(x.array() + 123.0);
  for (Index r = 0; r < 10; ++r) EXPECT_NEAR(s.row(r).sum(), 1.0, 1e-12);
  EXPECT_LT((s - shifted).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(HuberLoss, HandComputedValues) {
  auto value = [](double e) { return huber_loss(Tensor::constant(row({e})), row({0.0}), 1.0).item(); };
  EXPECT_EQ(value(0.0), 0.0);
  EXPECT_DOUBLE_EQ(value(0.5), 0.125);
  EXPECT_DOUBLE_EQ(value(2.0), 1.5);
  EXPECT_DOUBLE_EQ(value(-2.0), 1.5);
  // Mean over elements: (0.125 + 1.5) / 2.
  EXPECT_DOUBLE_EQ(huber_loss(Tensor::constant(row({0.5, 3.0})), row({0.0, 1.0})).item(), 0.8125);
}

TEST(HuberLoss, DerivativeAtDeltaUsesQuadraticBranch) {
  Tensor p = Tensor::parameter(row({1.0, -1.0}));
  backward(huber_loss(p, row({0.0, 0.0}), 1.0));
  EXPECT_EQ(p.grad(), row({0.5, -0.5}));
}

TEST(CrossEntropy, Values) {
  const std::vector<int> label{3};
  EXPECT_NEAR(cross_entropy(Tensor::constant(Matrix::Zero(1, 7)), label).item(), std::log(7.0), 1e-15);
  Matrix sat = Matrix::Zero(1, 7);
  sat(0, 3) = 50.0;
  EXPECT_LT(cross_entropy(Tensor::constant(sat), label).item(), 1e-20);
  Rng rng(2);
  Matrix x = random_matrix(1, 7, rng);
  const double a = cross_entropy(Tensor::constant(x), label).item();
  const double b = cross_entropy(Tensor::constant(x.array() + 1000.0), label).item();
  EXPECT_LT(std::abs(a - b), 1e-9);
  EXPECT_THROW(cross_entropy(Tensor::constant(x), std::vector<int>{7}), Error);
}

TEST(Shapes, MismatchRaisesShapeError) {
  try {
    dense(Tensor::constant(Matrix::Zero(2, 3)), Tensor::constant(Matrix::Zero(4, 2)),
          Tensor::constant(Matrix::Zero(1, 2)));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ShapeError);
  }
  EXPECT_THROW(add(Tensor::constant(Matrix::Zero(2, 2)), Tensor::constant(Matrix::Zero(2, 3))), Error);
  EXPECT_THROW(concat({Tensor::constant(Matrix::Zero(2, 2)), Tensor::constant(Matrix::Zero(3, 2))}), Error);
}

TEST(MaskedMeanPool, AveragesPresentSlotsAndRejectsEmptyRows) {
  Matrix x(4, 1);
  x << 1, 3, 10, 20;
  Matrix mask(2, 2);
  mask << 1, 1, 0, 1;
  Tensor y = masked_mean_pool(Tensor::constant(x), mask);
  EXPECT_DOUBLE_EQ(y.value()(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(y.value()(1, 0), 20.0);
  mask << 1, 1, 0, 0;
  try {
    masked_mean_pool(Tensor::constant(x), mask);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::MissingModality);
  }
}

TEST(Dropout, EvalIsIdentityAndTrainIsUnbiased) {
  Rng rng(4);
  Matrix x = random_matrix(1, 8, rng);
  Tensor in = Tensor::constant(x);
  EXPECT_EQ(dropout(in, 0.1, false, nullptr).value(), x);

  DropoutStream stream(99);
  Matrix total = Matrix::Zero(1, 8);
  const int masks = 10000;
  for (int i = 0; i < masks; ++i) total += dropout(in, 0.1, true, &stream).value();
  // Per-element std of the mean: |x| * sqrt(p / (1 - p) / n) ~ 0.0033 |x|.
  for (Index i = 0; i < 8; ++i) EXPECT_NEAR(total(0, i) / masks, x(0, i), 0.02 * std::abs(x(0, i)) + 1e-12);

  DropoutStream a(7);
  DropoutStream b(7);
  EXPECT_EQ(dropout(in, 0.5, true, &a).value(), dropout(in, 0.5, true, &b).value());
}

TEST(GradCheck, SquareAtThree) {
  Tensor x = Tensor::parameter(row({3.0}));
  auto loss = [&] {
    Tensor y = x;
    Matrix v(1, 1);
    v(0, 0) = x.value()(0, 0) * x.value()(0, 0);
    return make_result(std::move(v), {x}, [](Node& self) {
      self.parents[0]->accumulate(2.0 * self.parents[0]->value * self.grad(0, 0));
    });
  };
  backward(loss());
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 6.0);
  x.zero_grad();
  auto r = grad_check(loss, {x});
  EXPECT_LT(r.max_rel_error, 1e-9);
  EXPECT_EQ(r.checked, 1u);
}

TEST(GradCheck, ReluKinkIsSkipped) {
  Tensor p = Tensor::parameter(row({0.0, 0.7}));
  auto r = grad_check([&] { return project(relu(p), row({1.0, 1.0})); }, {p});
  EXPECT_EQ(r.skipped_kinks, 1u);
  EXPECT_EQ(r.checked, 1u);
}

TEST(GradCheck, HuberKinkIsSkipped) {
  Tensor p = Tensor::parameter(row({1.0, 0.3}));
  auto r = grad_check([&] { return huber_loss(p, row({0.0, 0.0}), 1.0); }, {p});
  EXPECT_EQ(r.skipped_kinks, 1u);
  EXPECT_EQ(r.checked, 1u);
  EXPECT_LT(r.max_rel_error, 1e-9);
  EXPECT_LT(r.max_kink_one_sided_error, 1e-9);
}

TEST(GradCheck, EveryLayerType) {
  Rng rng(8);
  const Index len = 5;
  Tensor x = Tensor::parameter(random_matrix(2 * len, 3, rng));
  Tensor w1 = Tensor::parameter(random_matrix(9, 4, rng, 0.5));
  Tensor b1 = Tensor::parameter(random_matrix(1, 4, rng));
  Tensor pos = Tensor::parameter(random_matrix(len, 4, rng));
  Tensor w2 = Tensor::parameter(random_matrix(4, 3, rng));
  Tensor b2 = Tensor::parameter(random_matrix(1, 3, rng));
  Tensor table = Tensor::parameter(random_matrix(6, 3, rng));
  Tensor slots = Tensor::parameter(random_matrix(2 * 3, 3, rng));
  Matrix mask(2, 3);
  mask << 1, 0, 1, 0, 1, 1;
  const std::vector<int> idx{4, 1};
  const std::vector<int> labels{2, 0};
  Matrix probe = random_matrix(2, 12, rng);
  Matrix target = random_matrix(2, 3, rng, 3.0);

  auto loss = [&] {
    Tensor h = relu(add_tiled(conv1d(x, w1, b1, len), pos));
    Tensor pooled = global_average_pool(h, len);
    Tensor d = dense(pooled, w2, b2);
    Tensor e = embedding_lookup(table, idx);
    Tensor m = masked_mean_pool(slots, mask);
    Tensor gate = softmax(d);
    Tensor gated = add(scale_rows_by(e, gate, 1), scale(m, 0.7));
    Tensor all = concat({gated, d, slice_cols(pooled, 1, 3), e});
    Tensor first = slice_cols(all, 0, 3);
    return add(add(project(all, probe), huber_loss(first, target, 1.0)),
               add(cross_entropy(d, labels), mean_all(gated)));
  };
  auto r = grad_check(loss, {x, w1, b1, pos, w2, b2, table, slots});
  EXPECT_LT(r.max_rel_error, 1e-4);
  EXPECT_GT(r.checked, 100u);
}

TEST(Backward, RepeatedPassOnSameGraphIsConsistent) {
  Rng rng(3);
  Tensor x = Tensor::parameter(random_matrix(2, 3, rng));
  Tensor w = Tensor::parameter(random_matrix(3, 2, rng));
  Tensor b = Tensor::parameter(Matrix::Zero(1, 2));
  Tensor y = relu(dense(x, w, b));
  backward(project(y, Matrix::Ones(2, 2)));
  const Matrix first = x.grad();
  x.zero_grad();
  backward(project(y, Matrix::Ones(2, 2)));
  EXPECT_EQ(x.grad(), first);
}

TEST(NoGrad, RecordsNoGraph) {
  Tensor x = Tensor::parameter(row({1.0}));
  NoGradGuard guard;
  Tensor y = scale(x, 2.0);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Clip, ScalesNormFourToOne) {
  Tensor p = Tensor::parameter(Matrix::Zero(1, 2));
  p.mutable_grad() = row({0.0, 4.0});
  std::vector<ParamGroup> groups{{"all", 1e-3, {p}}};
  EXPECT_DOUBLE_EQ(clip_grad_norm(groups, 1.0), 4.0);
  EXPECT_EQ(p.grad(), row({0.0, 1.0}));
}

TEST(Clip, NeverExceedsOne) {
  Rng rng(12);
  for (int t = 0; t < 50; ++t) {
    Tensor a = Tensor::parameter(Matrix::Zero(3, 3));
    Tensor b = Tensor::parameter(Matrix::Zero(1, 4));
    a.mutable_grad() = random_matrix(3, 3, rng, rng.uniform(0.01, 100.0));
    b.mutable_grad() = random_matrix(1, 4, rng, rng.uniform(0.01, 100.0));
    std::vector<ParamGroup> groups{{"a", 1e-3, {a}}, {"b", 1e-4, {b}}};
    clip_grad_norm(groups, 1.0);
    EXPECT_LE(global_grad_norm(groups), 1.0 + 1e-9);
  }
}

TEST(Adam, ZeroGradientIsFixedPoint) {
  Rng rng(6);
  Matrix init = random_matrix(2, 2, rng);
  Tensor p = Tensor::parameter(init);
  Adam adam({{"all", 1e-3, {p}}});
  for (int i = 0; i < 5; ++i) {
    p.mutable_grad() = Matrix::Zero(2, 2);
    adam.step();
  }
  EXPECT_EQ(p.value(), init);
}

TEST(Adam, FirstStepClosedForm) {
  Tensor p = Tensor::parameter(row({0.0}));
  Adam adam({{"all", 1e-3, {p}}});
  p.mutable_grad() = row({1.0});
  adam.step();
  // m_hat = 1, v_hat = 1 after bias correction.
  EXPECT_NEAR(p.value()(0, 0), -1e-3 / (1.0 + 1e-8), 1e-18);
}

TEST(Adam, GroupRatesApplyPerGroup) {
  Tensor a = Tensor::parameter(row({0.0}));
  Tensor b = Tensor::parameter(row({0.0}));
  Adam adam({{"projection", 1e-4, {a}}, {"rest", 1e-3, {b}}});
  a.mutable_grad() = row({2.0});
  b.mutable_grad() = row({2.0});
  adam.step();
  EXPECT_NEAR(a.value()(0, 0), -1e-4, 1e-11);
  EXPECT_NEAR(b.value()(0, 0), -1e-3, 1e-11);
}

TEST(Plateau, StrictlyDecreasingNeverHalves) {
  PlateauScheduler s;
  for (int e = 0; e < 30; ++e) EXPECT_EQ(s.step(10.0 - e * 0.1), 1.0);
}

TEST(Plateau, TwoFlatStretchesHalveTwice) {
  PlateauScheduler s;
  double lr = 1.0;
  std::vector<int> halvings;
  const std::vector<double> losses{3, 2, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1};
  for (std::size_t e = 0; e < losses.size(); ++e) {
    const double f = s.step(losses[e]);
    if (f != 1.0) halvings.push_back(static_cast<int>(e));
    lr *= f;
  }
  // Best at epoch 2; five non-improving epochs end at 7, five more at 12 - 1.
  EXPECT_EQ(halvings, (std::vector<int>{7}));
  EXPECT_EQ(s.step(1.0), 0.5);
  EXPECT_DOUBLE_EQ(lr * 0.5, 0.25);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Rng rng(10);
  Checkpoint c;
  c.config_hash = fnv1a64("{\"d\":128}");
  c.seed = 42;
  c.header = "{\"format\":\"test\"}";
  c.blobs["a"] = random_matrix(3, 5, rng);
  c.blobs["b.c"] = random_matrix(1, 1, rng);
  c.blobs["b.c"](0, 0) = -0.0;
  std::stringstream buf;
  write_checkpoint(buf, c);
  Checkpoint d = read_checkpoint(buf);
  EXPECT_EQ(d.config_hash, c.config_hash);
  EXPECT_EQ(d.seed, 42u);
  EXPECT_EQ(d.header, c.header);
  ASSERT_EQ(d.blobs.size(), 2u);
  EXPECT_EQ(std::memcmp(d.blobs["a"].data(), c.blobs["a"].data(), sizeof(double) * 15), 0);
  EXPECT_TRUE(std::signbit(d.blobs["b.c"](0, 0)));
}

TEST(Checkpoint, CorruptAndMissingFiles) {
  std::stringstream junk("not a checkpoint");
  try {
    read_checkpoint(junk);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::SchemaMismatch);
  }
  try {
    load_checkpoint("/nonexistent/model.ckpt");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::MissingFile);
  }
}

TEST(Fnv1a, KnownVectors) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
}
