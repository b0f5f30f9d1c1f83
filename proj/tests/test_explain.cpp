#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "epcfusion/explain/gate.hpp"
#include "epcfusion/explain/occlusion.hpp"
#include "epcfusion/explain/shapley.hpp"
#include "epcfusion/explain/spatial.hpp"
#include "epcfusion/trainer/train.hpp"
#include "support.hpp"

using namespace testing_support;
using epcfusion::ErrorKind;
using epcfusion::diffcore::Index;
using epcfusion::diffcore::Matrix;
namespace ex = epcfusion::explain;
namespace tr = epcfusion::trainer;

namespace {

constexpr double kOffset = 100.0;  // keeps wired ReLUs in their linear range

fn::ModelBundle make_bundle(const Fixture& f, const std::string& modalities, std::uint64_t seed = 4) {
  fn::ModelConfig c = f.config;
  c.modalities = fn::Modalities::parse(modalities);
  std::vector<std::size_t> all(f.data.records.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return tr::prepare_bundle(c, f.data.schema, f.data.records, all, {}, seed);
}

Matrix& param(fn::ModelBundle& b, const std::string& name) {
  auto* t = b.model.find_parameter(name);
  if (t == nullptr) throw std::runtime_error("no parameter " + name);
  return t->mutable_value();
}

void zero_all(fn::ModelBundle& b) {
  for (const auto& p : b.model.parameters()) {
    auto t = p.tensor;
    t.mutable_value().setZero();
  }
}

// Carries latent channel 0 (= signal + kOffset) through the fusion MLP so the
// normalized output of both targets equals the signal.
void wire_fusion_passthrough(fn::ModelBundle& b) {
  const auto& widths = b.config().fusion_mlp;
  for (std::size_t i = 0; i < widths.size(); ++i) param(b, "fusion." + std::to_string(i) + ".weight")(0, 0) = 1.0;
  param(b, "head.regression.weight")(0, 0) = 1.0;
  param(b, "head.regression.weight")(0, 1) = 1.0;
  param(b, "head.regression.bias").setConstant(-kOffset);
}

std::vector<const dh::PropertyRecord*> ptrs(const std::vector<dh::PropertyRecord>& records) {
  return fn::pointers(records);
}

double score_of(const fn::ModelBundle& b, const dh::PropertyRecord& r, std::size_t t) {
  const dh::PropertyRecord* p = &r;
  return fn::predict_scores(b, std::span<const dh::PropertyRecord* const>(&p, 1))[0][t];
}

std::string render_csv(const std::function<void(std::ostream&)>& write) {
  std::ostringstream out;
  write(out);
  return out.str();
}

}  // namespace

// --- Shapley enumeration ---------------------------------------------------

TEST(ShapleyEnumeration, MatchesPermutationAverage) {
  constexpr std::size_t n = 4;
  epcfusion::Rng rng(9);
  std::vector<std::array<double, 2>> v(1u << n);
  for (auto& x : v) x = {rng.uniform(-5, 5), rng.uniform(-5, 5)};
  const auto phi = ex::shapley_from_values<2>(n, v);

  // Oracle: average marginal contribution over all n! orderings.
  std::array<int, n> order{0, 1, 2, 3};
  std::array<std::array<double, 2>, n> oracle{};
  int count = 0;
  do {
    std::size_t mask = 0;
    for (int p : order) {
      const std::size_t next = mask | (std::size_t{1} << p);
      for (std::size_t t = 0; t < 2; ++t) oracle[static_cast<std::size_t>(p)][t] += v[next][t] - v[mask][t];
      mask = next;
    }
    ++count;
  } while (std::next_permutation(order.begin(), order.end()));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < 2; ++t) EXPECT_NEAR(phi[i][t], oracle[i][t] / count, 1e-12);
  }
}

TEST(ShapleyEnumeration, AdditiveSurrogateClosedForm) {
  // f(x1, x2) = g1(x1) + g2(x2) with a marginal background of 5 rows.
  auto g1 = [](double x) { return 3.0 * x * x; };
  auto g2 = [](double x) { return std::sin(x) - 2.0 * x; };
  const double x1 = 0.7, x2 = -1.3;
  const std::vector<std::array<double, 2>> bg = {{0.1, 2.0}, {-0.4, 0.3}, {1.5, -0.8}, {0.0, 0.0}, {2.2, 1.1}};
  std::vector<std::array<double, 1>> v(4);
  for (std::size_t mask = 0; mask < 4; ++mask) {
    double sum = 0.0;
    for (const auto& b : bg) sum += g1(mask & 1 ? x1 : b[0]) + g2(mask & 2 ? x2 : b[1]);
    v[mask] = {sum / static_cast<double>(bg.size())};
  }
  const auto phi = ex::shapley_from_values<1>(2, v);
  double m1 = 0.0, m2 = 0.0;
  for (const auto& b : bg) {
    m1 += g1(b[0]);
    m2 += g2(b[1]);
  }
  EXPECT_NEAR(phi[0][0], g1(x1) - m1 / 5.0, 1e-9);
  EXPECT_NEAR(phi[1][0], g2(x2) - m2 / 5.0, 1e-9);
}

TEST(ShapleyEnumeration, SymmetricPlayersGetEqualValues) {
  constexpr std::size_t n = 5;
  // v depends on players 0 and 1 only through x0 + x1 (both weight 2.5).
  std::vector<std::array<double, 1>> v(1u << n);
  for (std::size_t mask = 0; mask < v.size(); ++mask) {
    const double s = 2.5 * static_cast<double>((mask & 1) + ((mask >> 1) & 1));
    v[mask] = {std::exp(0.3 * s) + 0.7 * static_cast<double>((mask >> 2) & 1) * s - static_cast<double>(mask >> 4)};
  }
  const auto phi = ex::shapley_from_values<1>(n, v);
  EXPECT_NEAR(phi[0][0], phi[1][0], 1e-9);
  EXPECT_EQ(phi[3][0], 0.0);  // dummy player
}

TEST(ShapleyEnumeration, RejectsBadInput) {
  std::vector<std::array<double, 1>> v(3);
  EXPECT_EQ(kind_of([&] { ex::shapley_from_values<1>(2, v); }), ErrorKind::ShapeError);
}

// --- Shapley on the model --------------------------------------------------

TEST(ShapleyModel, EfficiencyAndCoalitionOracle) {
  const Fixture f = small_fixture(60);
  const auto bundle = make_bundle(f, "all");
  const auto all = ptrs(f.data.records);
  const auto background = ex::select_background(std::span(all).subspan(10), 6, 11);
  const auto samples = std::span(all).subspan(0, 3);
  const auto result = ex::shapley_tabular(bundle, samples, background);
  ASSERT_EQ(result.samples.size(), 3u);
  for (std::size_t s = 0; s < 3; ++s) {
    const auto& sample = result.samples[s];
    EXPECT_LE(sample.efficiency_error(), 1e-6);
    for (std::size_t t = 0; t < 2; ++t) {
      EXPECT_NEAR(sample.prediction[t], score_of(bundle, *samples[s], t), 1e-9);
    }
  }

  // v(S) rebuilt from hybrid records through the plain prediction path.
  const ex::ModelInput bg = fn::make_batch(std::span<const dh::PropertyRecord* const>(background), bundle.feature_scaler,
                                           bundle.config());
  const auto v = ex::coalition_values(bundle, *samples[1], bg, 37);
  for (std::size_t mask : {std::size_t{0}, std::size_t{0b1000001}, std::size_t{0b110010100}, std::size_t{511}}) {
    std::vector<dh::PropertyRecord> hybrid;
    for (const auto* b : background) {
      dh::PropertyRecord h = *samples[1];
      for (std::size_t i = 0; i < dh::kNumCategorical; ++i) {
        if (!(mask & (1u << i))) h.categorical[i] = b->categorical[i];
      }
      for (std::size_t i = 0; i < dh::kNumNumeric; ++i) {
        if (!(mask & (1u << (dh::kNumCategorical + i)))) h.numeric[i] = b->numeric[i];
      }
      hybrid.push_back(h);
    }
    const auto pred = fn::predict_scores(bundle, ptrs(hybrid));
    for (std::size_t t = 0; t < 2; ++t) {
      double sum = 0.0;
      for (const auto& p : pred) sum += p[t];
      EXPECT_NEAR(v[mask][t], sum / static_cast<double>(pred.size()), 1e-9) << mask;
    }
  }
}

TEST(ShapleyModel, TabularPathCutGivesZero) {
  const Fixture f = small_fixture(40);
  auto bundle = make_bundle(f, "all");
  param(bundle, "tab.proj.weight").setZero();
  const auto all = ptrs(f.data.records);
  const auto result = ex::shapley_tabular(bundle, std::span(all).subspan(0, 2), std::span(all).subspan(20, 4));
  for (const auto& s : result.samples) {
    for (const auto& p : s.phi) {
      EXPECT_EQ(p[0], 0.0);
      EXPECT_EQ(p[1], 0.0);
    }
  }
}

TEST(ShapleyModel, EmptyBackgroundIsInvalid) {
  const Fixture f = small_fixture(20);
  const auto bundle = make_bundle(f, "all");
  const auto all = ptrs(f.data.records);
  EXPECT_EQ(kind_of([&] { ex::select_background(all, 0, 1); }), ErrorKind::InvalidConfig);
  EXPECT_EQ(kind_of([&] { ex::select_background(all, 21, 1); }), ErrorKind::InvalidConfig);
  EXPECT_EQ(kind_of([&] { ex::shapley_tabular(bundle, all, {}); }), ErrorKind::InvalidConfig);
  EXPECT_EQ(kind_of([&] { ex::shapley_tabular(make_bundle(f, "text+spatial"), all, all); }), ErrorKind::InvalidConfig);
}

TEST(ShapleyModel, BackgroundDrawIsSeededWithoutReplacement) {
  const Fixture f = small_fixture(50);
  const auto all = ptrs(f.data.records);
  const auto a = ex::select_background(all, 32, 5);
  EXPECT_EQ(a, ex::select_background(all, 32, 5));
  EXPECT_NE(a, ex::select_background(all, 32, 6));
  EXPECT_EQ(std::set<const dh::PropertyRecord*>(a.begin(), a.end()).size(), 32u);
}

// --- Gate statistics -------------------------------------------------------

TEST(GateStats, RowsOnSimplexAndMeansSumToOne) {
  const Fixture f = small_fixture(300);
  const auto bundle = make_bundle(f, "all");
  const auto stats = ex::gate_weight_stats(bundle, ptrs(f.data.records));
  ASSERT_EQ(stats.modalities.size(), 3u);
  EXPECT_LE(stats.max_row_sum_error, 1e-6);
  double mean_sum = 0.0;
  for (const auto& m : stats.modalities) {
    mean_sum += m.mean;
    EXPECT_EQ(std::accumulate(m.histogram.begin(), m.histogram.end(), std::size_t{0}), f.data.records.size());
    EXPECT_GE(m.stddev, 0.0);
  }
  EXPECT_NEAR(mean_sum, 1.0, 1e-6);
}

TEST(GateStats, SingleModalityIsDegenerateAtOne) {
  const Fixture f = small_fixture(50);
  const auto stats = ex::gate_weight_stats(make_bundle(f, "tab"), ptrs(f.data.records));
  ASSERT_EQ(stats.modalities.size(), 1u);
  EXPECT_EQ(stats.modalities[0].mean, 1.0);
  EXPECT_EQ(stats.modalities[0].stddev, 0.0);
  EXPECT_EQ(stats.modalities[0].histogram.back(), 50u);
}

TEST(GateStats, BinEdges) {
  EXPECT_EQ(ex::gate_bin(0.0), 0u);
  EXPECT_EQ(ex::gate_bin(0.0199), 0u);
  EXPECT_EQ(ex::gate_bin(0.03), 1u);
  EXPECT_EQ(ex::gate_bin(0.5), 25u);
  EXPECT_EQ(ex::gate_bin(1.0), 49u);
}

// --- Text occlusion --------------------------------------------------------

TEST(Occlusion, TextPathCutGivesZero) {
  const Fixture f = small_fixture(40);
  auto bundle = make_bundle(f, "all");
  param(bundle, "text.proj.weight").setZero();
  const auto r = ex::text_field_occlusion(bundle, ptrs(f.data.records), f.raw.masks);
  for (const auto& field : r.fields) {
    EXPECT_EQ(field.importance[0], 0.0);
    EXPECT_EQ(field.importance[1], 0.0);
  }
}

TEST(Occlusion, NonNegativeWithCoverage) {
  Fixture f = small_fixture(60);
  for (std::size_t i = 0; i < f.data.records.size(); i += 3) f.data.records[i].text[4].reset();
  for (auto& r : f.data.records) r.text[6].reset();
  const auto bundle = make_bundle(f, "all");
  const auto r = ex::text_field_occlusion(bundle, ptrs(f.data.records), f.raw.masks);
  ASSERT_EQ(r.fields.size(), dh::kNumTextFields);
  for (std::size_t k = 0; k < dh::kNumTextFields; ++k) {
    std::size_t present = 0;
    for (const auto& rec : f.data.records) present += rec.text[k] ? 1 : 0;
    EXPECT_EQ(r.fields[k].coverage, present);
    EXPECT_GE(r.fields[k].importance[0], 0.0);
    EXPECT_GE(r.fields[k].importance[1], 0.0);
  }
  // Absent everywhere, yet the mask still moves predictions.
  EXPECT_EQ(r.fields[6].coverage, 0u);
  EXPECT_GT(r.fields[6].importance[0], 0.0);
}

TEST(Occlusion, MissingMaskIsInvalid) {
  const Fixture f = small_fixture(20);
  const auto bundle = make_bundle(f, "all");
  auto masks = f.raw.masks;
  masks[3].reset();
  EXPECT_EQ(kind_of([&] { ex::text_field_occlusion(bundle, ptrs(f.data.records), masks); }), ErrorKind::InvalidConfig);
}

TEST(Occlusion, EchoModelMatchesHandTrace) {
  Fixture f = small_fixture(60);
  // Only field 1 present: the pooled text vector is that field's vector.
  std::erase_if(f.data.records, [](const dh::PropertyRecord& r) { return !r.text[1]; });
  ASSERT_GT(f.data.records.size(), 20u);
  for (auto& r : f.data.records) {
    for (std::size_t k = 0; k < dh::kNumTextFields; ++k) {
      if (k != 1) r.text[k].reset();
    }
  }
  auto bundle = make_bundle(f, "text");
  zero_all(bundle);
  param(bundle, "text.proj.weight")(0, 0) = 1.0;
  param(bundle, "text.proj.bias")(0, 0) = kOffset;
  wire_fusion_passthrough(bundle);

  const auto r = ex::text_field_occlusion(bundle, ptrs(f.data.records), f.raw.masks);
  const double m = (*f.raw.masks[1])[0];
  for (std::size_t t = 0; t < 2; ++t) {
    double sum = 0.0;
    for (const auto& rec : f.data.records) sum += std::abs((*rec.text[1])[0] - m);
    const double oracle = bundle.target_scaler.stddev[t] * sum / static_cast<double>(f.data.records.size());
    EXPECT_NEAR(r.fields[1].importance[t], oracle, 1e-9 * std::max(1.0, oracle));
  }
}

// --- Spatial permutation ---------------------------------------------------

TEST(SpatialPermutation, IdentityAndConstantColumnGiveZero) {
  Fixture f = small_fixture(40);
  const auto bundle = make_bundle(f, "all");
  const auto rows = ptrs(f.data.records);
  std::vector<std::size_t> identity(rows.size());
  std::iota(identity.begin(), identity.end(), std::size_t{0});
  for (std::size_t feat = 0; feat < 3; ++feat) {
    const auto r = ex::spatial_permutation(bundle, rows, feat, identity);
    EXPECT_EQ(r.importance[0], 0.0);
    EXPECT_EQ(r.importance[1], 0.0);
  }
  for (auto& rec : f.data.records) rec.spatial.height = 7.5;
  const auto r = ex::spatial_permutation(bundle, ptrs(f.data.records), 1, std::uint64_t{3});
  EXPECT_EQ(r.importance[0], 0.0);
  EXPECT_EQ(r.importance[1], 0.0);
}

TEST(SpatialPermutation, HeightOnlyModelSignPattern) {
  const Fixture f = small_fixture(80);
  auto bundle = make_bundle(f, "spatial");
  Matrix& w = param(bundle, "spatial.numeric.0.weight");
  w.row(0).setZero();  // area
  w.row(2).setZero();  // orientation
  const auto rows = ptrs(f.data.records);
  for (std::string name : {"area", "height", "orientation"}) {
    const auto r = ex::spatial_permutation(bundle, rows, ex::spatial_feature_index(name), std::uint64_t{5});
    if (name == "height") {
      EXPECT_GT(r.importance[0] + r.importance[1], 0.0);
    } else {
      EXPECT_EQ(r.importance[0], 0.0) << name;
      EXPECT_EQ(r.importance[1], 0.0) << name;
    }
  }
  EXPECT_EQ(kind_of([] { ex::spatial_feature_index("volume"); }), ErrorKind::InvalidConfig);
}

TEST(SpatialPermutation, NeedsTwoSamples) {
  const Fixture f = small_fixture(20);
  const auto bundle = make_bundle(f, "all");
  const auto rows = ptrs(f.data.records);
  EXPECT_EQ(kind_of([&] { ex::spatial_permutation(bundle, std::span(rows).subspan(0, 1), 0, std::uint64_t{1}); }),
            ErrorKind::EmptyInput);
}

// --- Boundary permutation --------------------------------------------------

TEST(BoundaryPermutation, SattoloIsADerangement) {
  for (std::size_t n : {2u, 3u, 7u, 100u, 1001u}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto p = ex::sattolo_derangement(n, seed);
      std::vector<bool> seen(n, false);
      for (std::size_t i = 0; i < n; ++i) {
        ASSERT_NE(p[i], i);
        ASSERT_FALSE(seen[p[i]]);
        seen[p[i]] = true;
      }
    }
  }
  EXPECT_EQ(ex::sattolo_derangement(50, 4), ex::sattolo_derangement(50, 4));
  EXPECT_EQ(kind_of([] { ex::sattolo_derangement(1, 0); }), ErrorKind::EmptyInput);
}

TEST(BoundaryPermutation, IdenticalFootprintsDoNotDegrade) {
  Fixture f = small_fixture(40);
  for (auto& r : f.data.records) r.boundary = f.data.records[0].boundary;
  const auto bundle = make_bundle(f, "all");
  const auto r = ex::boundary_permutation(bundle, ptrs(f.data.records), std::uint64_t{8});
  for (std::size_t t = 0; t < 2; ++t) {
    EXPECT_EQ(r.permuted.target[t].mae, r.baseline.target[t].mae);
    EXPECT_EQ(r.permuted.target[t].rmse, r.baseline.target[t].rmse);
  }
}

TEST(BoundaryPermutation, MeanXSurrogateMatchesOracle) {
  const Fixture f = small_fixture(50);
  auto bundle = make_bundle(f, "spatial");
  zero_all(bundle);
  param(bundle, "spatial.point.weight")(0, 0) = 1.0;
  param(bundle, "spatial.point.bias")(0, 0) = kOffset;
  const Index d = bundle.config().d;
  param(bundle, "spatial.conv.0.weight")(d, 0) = 1.0;  // centre tap, channel 0
  param(bundle, "spatial.conv.1.weight")(d, 0) = 1.0;
  param(bundle, "spatial.proj.weight")(0, 0) = 1.0;
  wire_fusion_passthrough(bundle);

  const auto rows = ptrs(f.data.records);
  auto mean_x = [](const dh::PropertyRecord& r) {
    double s = 0.0;
    for (const auto& p : r.boundary.points) s += p.x;
    return s / static_cast<double>(r.boundary.points.size());
  };
  // The wiring really echoes mean x.
  EXPECT_NEAR(score_of(bundle, *rows[3], 0),
              bundle.target_scaler.denormalize(mean_x(*rows[3]), 0), 1e-9);

  const auto perm = ex::sattolo_derangement(rows.size(), 12);
  const auto r = ex::boundary_permutation(bundle, rows, perm);
  for (std::size_t t = 0; t < 2; ++t) {
    double base_abs = 0.0, perm_abs = 0.0, base_sq = 0.0, perm_sq = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const double truth = t == 0 ? rows[i]->sap : rows[i]->ei;
      const double b = bundle.target_scaler.denormalize(mean_x(*rows[i]), t) - truth;
      const double p = bundle.target_scaler.denormalize(mean_x(*rows[perm[i]]), t) - truth;
      base_abs += std::abs(b);
      perm_abs += std::abs(p);
      base_sq += b * b;
      perm_sq += p * p;
    }
    const double n = static_cast<double>(rows.size());
    EXPECT_NEAR(r.permuted.target[t].mae - r.baseline.target[t].mae, (perm_abs - base_abs) / n, 1e-8);
    EXPECT_NEAR(r.permuted.target[t].rmse - r.baseline.target[t].rmse,
                std::sqrt(perm_sq / n) - std::sqrt(base_sq / n), 1e-8);
  }
  const auto j = r.to_json({"boundary_permutation", 12, "x", rows.size(), {}});
  EXPECT_TRUE(j["SAP"].contains("delta_r2"));
  EXPECT_EQ(j["derangement"], "sattolo");
}

// --- Point saliency --------------------------------------------------------

TEST(PointSaliency, MatchesFiniteDifferences) {
  const Fixture f = small_fixture(30);
  const auto bundle = make_bundle(f, "all", 17);
  const dh::PropertyRecord& rec = f.data.records[5];
  const auto s = ex::point_saliency(bundle, rec);
  ASSERT_EQ(s.saliency.rows(), kSmallLength);
  epcfusion::Rng rng(23);
  const double h = 1e-5;
  for (int trial = 0; trial < 8; ++trial) {
    const auto l = static_cast<std::size_t>(rng.below(kSmallLength));
    for (std::size_t t = 0; t < 2; ++t) {
      double g[2];
      for (int c = 0; c < 2; ++c) {
        dh::PropertyRecord plus = rec, minus = rec;
        (c == 0 ? plus.boundary.points[l].x : plus.boundary.points[l].y) += h;
        (c == 0 ? minus.boundary.points[l].x : minus.boundary.points[l].y) -= h;
        g[c] = (score_of(bundle, plus, t) - score_of(bundle, minus, t)) / (2 * h);
      }
      const double fd = std::hypot(g[0], g[1]);
      const double ad = s.saliency(static_cast<Index>(l), static_cast<Index>(t));
      EXPECT_LT(std::abs(ad - fd) / std::max(fd, 1e-8), 1e-4) << "point " << l << " target " << t;
    }
  }
  for (const auto& p : bundle.model.parameters()) EXPECT_FALSE(p.tensor.has_grad()) << p.name;
}

TEST(PointSaliency, SpatialPathCutGivesZero) {
  const Fixture f = small_fixture(20);
  auto bundle = make_bundle(f, "all");
  param(bundle, "spatial.point.weight").setZero();
  const auto s = ex::point_saliency(bundle, f.data.records[0]);
  EXPECT_EQ(s.saliency.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(kind_of([&] { ex::point_saliency(make_bundle(f, "tab+text"), f.data.records[0]); }),
            ErrorKind::InvalidConfig);
}

// --- Outputs ---------------------------------------------------------------

TEST(ExplainOutputs, ByteIdenticalAcrossRuns) {
  const Fixture f = small_fixture(60);
  auto run = [&] {
    const auto bundle = make_bundle(f, "all");
    const auto rows = ptrs(f.data.records);
    const std::string hash = ex::checkpoint_hash(bundle);
    const auto bg = ex::select_background(rows, 8, 2);
    std::string out;
    out += render_csv([&](std::ostream& o) {
      ex::write_shapley_csv(o, ex::shapley_tabular(bundle, std::span(rows).subspan(0, 4), bg),
                            {"shapley", 2, hash, 4, {{"background", "8"}}});
    });
    out += render_csv([&](std::ostream& o) {
      ex::write_occlusion_csv(o, ex::text_field_occlusion(bundle, rows, f.raw.masks), {"occlusion", 2, hash, 60, {}});
    });
    out += render_csv([&](std::ostream& o) {
      std::vector<ex::SpatialPermutationResult> res;
      for (std::size_t k = 0; k < 3; ++k) res.push_back(ex::spatial_permutation(bundle, rows, k, std::uint64_t{2}));
      ex::write_spatial_permutation_csv(o, res, {"spatial_permutation", 2, hash, 60, {}});
    });
    out += ex::boundary_permutation(bundle, rows, std::uint64_t{2}).to_json({"boundary", 2, hash, 60, {}}).dump();
    out += render_csv([&](std::ostream& o) {
      ex::write_saliency_csv(o, ex::point_saliency(bundle, *rows[0]), {"saliency", 2, hash, 1, {}});
    });
    return out;
  };
  const std::string a = run();
  EXPECT_EQ(a, run());
  EXPECT_NE(a.find("checkpoint="), std::string::npos);
  EXPECT_NE(a.find("seed=2"), std::string::npos);
}

TEST(ExplainOutputs, CheckpointHashTracksWeights) {
  const Fixture f = small_fixture(20);
  auto a = make_bundle(f, "all", 1);
  const std::string before = ex::checkpoint_hash(a);
  EXPECT_EQ(before.size(), 16u);
  EXPECT_EQ(before, ex::checkpoint_hash(make_bundle(f, "all", 1)));
  param(a, "head.regression.bias")(0, 0) += 1e-12;
  EXPECT_NE(before, ex::checkpoint_hash(a));
}
