#pragma once

// Small synthetic fixtures shared by the unit tests.

#include "epcfusion/datahub/synth.hpp"
#include "epcfusion/error.hpp"
#include "epcfusion/fusionnet/batch.hpp"
#include "epcfusion/fusionnet/config.hpp"

namespace testing_support {

namespace dh = epcfusion::datahub;
namespace fn = epcfusion::fusionnet;

struct Fixture {
  dh::SynthDataset raw;
  dh::Dataset data;
  dh::FeatureScaler features;
  dh::TargetScaler targets;
  fn::ModelConfig config;
};

inline constexpr int kSmallDim = 16;
inline constexpr int kSmallLength = 16;

inline fn::ModelConfig small_config(const dh::Schema& schema) {
  fn::ModelConfig c;
  c.d = 8;
  c.e = 4;
  c.h = kSmallDim;
  c.boundary_length = kSmallLength;
  c.numeric_mlp = {8, 6};
  c.spatial_numeric_mlp = {6, 4};
  c.gate_hidden = 8;
  c.fusion_mlp = {12, 8};
  c.vocab_sizes = schema.vocab_sizes();
  return c;
}

inline Fixture small_fixture(std::size_t n, std::uint64_t seed = 3) {
  Fixture f;
  dh::SynthOptions o;
  o.count = n;
  o.seed = seed;
  o.text_dim = kSmallDim;
  f.raw = dh::generate_synthetic(o);
  dh::LinkOptions link;
  link.boundary_length = kSmallLength;
  f.data = dh::link_synthetic(f.raw, link).dataset;
  f.features = dh::FeatureScaler::fit(f.data.records);
  f.targets = dh::TargetScaler::fit(f.data.records);
  f.config = small_config(f.data.schema);
  return f;
}

template <typename F>
epcfusion::ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const epcfusion::Error& e) {
    return e.kind();
  }
  return epcfusion::ErrorKind::Internal;
}

}  // namespace testing_support
