#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "placekd/errors.h"
#include "placekd/image_io.h"
#include "placekd/slme.h"
#include "support.h"

namespace placekd {
namespace {

LabelMap random_map(int h, int w, int classes, std::mt19937_64& rng) {
  LabelMap m(h, w);
  std::uniform_int_distribution<int> d(0, classes - 1);
  for (int& v : m.labels) v = d(rng);
  return m;
}

TEST(SlmeScheme, DefaultSixClasses) {
  const SlmeScheme s = default_scheme();
  EXPECT_EQ(s.num_classes(), 6);
  EXPECT_EQ(s.names, (std::vector<std::string>{"vegetation", "dynamic", "sky", "ground", "building", "other"}));
  EXPECT_EQ(s.weights.values, (std::vector<float>{0.5f, 0.5f, 1.f, 1.f, 2.f, 2.f}));
}

TEST(SlmeScheme, ThreeClassVariantPartitionsAllSixClasses) {
  const SlmeScheme s = three_class_scheme();
  EXPECT_EQ(s.num_classes(), 3);
  ASSERT_EQ(s.clusters.mapping.size(), 6u);
  std::set<int> used(s.clusters.mapping.begin(), s.clusters.mapping.end());
  EXPECT_EQ(used, (std::set<int>{0, 1, 2}));
  EXPECT_EQ(s.clusters.mapping[kSky], s.clusters.mapping[kGround]);
  EXPECT_NE(s.clusters.mapping[kDynamic], s.clusters.mapping[kSky]);
  EXPECT_EQ(s.clusters.mapping[kBuilding], s.clusters.mapping[kOther]);
  EXPECT_EQ(s.clusters.mapping[kBuilding], s.clusters.mapping[kVegetation]);
}

TEST(SlmeScheme, OppositeWeights) {
  const SlmeScheme s = opposite_scheme();
  EXPECT_EQ(s.weights.values, (std::vector<float>{2.f, 2.f, 1.f, 1.f, 0.5f, 0.5f}));
}

TEST(SlmeScheme, IdentityMapsIndexToItself) {
  const SlmeScheme s = identity_scheme(150);
  EXPECT_EQ(s.num_classes(), 150);
  for (int i = 0; i < 150; ++i) EXPECT_EQ(s.clusters.mapping[i], i);
}

TEST(SlmeScheme, JsonRoundTripAndNamedLookup) {
  for (const char* name : {"default", "unweighted", "opposite", "three_class", "identity150"}) {
    const SlmeScheme s = scheme_by_name(name);
    EXPECT_EQ(SlmeScheme::from_json(s.to_json()), s) << name;
  }
  EXPECT_THROW(scheme_by_name("nope"), ConfigError);
}

TEST(SlmeScheme, InvalidSchemesRejected) {
  nlohmann::json j = default_scheme().to_json();
  j["weights"][0] = 0.0;
  EXPECT_ANY_THROW(SlmeScheme::from_json(j));
  j = default_scheme().to_json();
  j["mapping"][0] = 9;
  EXPECT_ANY_THROW(SlmeScheme::from_json(j));
}

TEST(SlmeScheme, LoadFromFile) {
  testing::TempDir dir("scheme");
  std::ofstream(dir / "s.json") << opposite_scheme().to_json().dump();
  EXPECT_EQ(load_scheme((dir / "s.json").string()), opposite_scheme());
}

TEST(ClusterLabels, IdentityAndConstant) {
  std::mt19937_64 rng(1);
  const LabelMap m = random_map(9, 7, 150, rng);
  EXPECT_EQ(cluster_labels(m, identity_scheme().clusters).labels, m.labels);
  EXPECT_EQ(cluster_labels(cluster_labels(m, identity_scheme().clusters), identity_scheme().clusters).labels,
            m.labels);
  ClusterMap to4{6, {4, 4, 4, 4, 4, 4}};
  const LabelMap c = cluster_labels(random_map(5, 5, 6, rng), to4);
  for (int v : c.labels) EXPECT_EQ(v, 4);
}

TEST(ClusterLabels, MatchesPointwiseOracle) {
  std::mt19937_64 rng(2);
  ClusterMap cm{5, std::vector<int>(40)};
  std::uniform_int_distribution<int> d(0, 4);
  for (int& v : cm.mapping) v = d(rng);
  const LabelMap m = random_map(16, 16, 40, rng);
  const LabelMap c = cluster_labels(m, cm);
  ASSERT_EQ(c.height, 16);
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) EXPECT_EQ(c.at(y, x), cm.mapping[m.at(y, x)]);
  }
}

TEST(ClusterLabels, OutOfRangeNamesPixelAndValue) {
  LabelMap m(2, 2);
  m.at(1, 0) = 7;
  try {
    cluster_labels(m, default_scheme().clusters);
    FAIL();
  } catch (const EncodeError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find('7'), std::string::npos) << what;
    EXPECT_NE(what.find("(1, 0)"), std::string::npos) << what;
  }
}

TEST(Encode, HandConstructedTwoByTwo) {
  LabelMap m(2, 2);
  m.labels = {4, 2, 1, 3};
  const Tensor3<float> t = encode(m, default_scheme().weights);
  ASSERT_EQ(t.channels, 6);
  Tensor3<float> expect(6, 2, 2);
  expect.at(4, 0, 0) = 2.0f;
  expect.at(2, 0, 1) = 1.0f;
  expect.at(1, 1, 0) = 0.5f;
  expect.at(3, 1, 1) = 1.0f;
  EXPECT_EQ(t.data, expect.data);
}

TEST(Encode, UniformMapAndOneHot) {
  LabelMap m(3, 4);
  std::fill(m.labels.begin(), m.labels.end(), 5);
  const Tensor3<float> t = encode(m, default_scheme().weights);
  for (int c = 0; c < 6; ++c) {
    for (int y = 0; y < 3; ++y) {
      for (int x = 0; x < 4; ++x) EXPECT_EQ(t.at(c, y, x), c == 5 ? 2.0f : 0.0f);
    }
  }
  std::mt19937_64 rng(3);
  const LabelMap r = random_map(6, 6, 6, rng);
  const Tensor3<float> one_hot = encode(r, unweighted_scheme().weights);
  for (int y = 0; y < 6; ++y) {
    for (int x = 0; x < 6; ++x) {
      for (int c = 0; c < 6; ++c) EXPECT_EQ(one_hot.at(c, y, x), c == r.at(y, x) ? 1.0f : 0.0f);
    }
  }
}

TEST(Encode, IndexBeyondClassCountIsError) {
  LabelMap m(1, 1);
  m.labels = {6};
  EXPECT_THROW(encode(m, default_scheme().weights), EncodeError);
}

TEST(Encode, RoundTripAndChannelSumOverPresets) {
  std::mt19937_64 rng(4);
  for (const SlmeScheme& s : {three_class_scheme(), default_scheme(), identity_scheme(150)}) {
    for (int trial = 0; trial < 20; ++trial) {
      ClassWeights w = s.weights;
      std::uniform_real_distribution<float> pos(0.05f, 4.0f);
      if (trial % 2) {
        for (float& v : w.values) v = pos(rng);
      }
      const LabelMap m = random_map(11, 13, s.num_classes(), rng);
      const Tensor3<float> t = encode(m, w);
      EXPECT_EQ(decode_argmax(t).labels, m.labels);
      for (int y = 0; y < 11; ++y) {
        for (int x = 0; x < 13; ++x) {
          float sum = 0;
          for (int c = 0; c < t.channels; ++c) sum += t.at(c, y, x);
          EXPECT_EQ(sum, w.values[m.at(y, x)]);
        }
      }
    }
  }
}

TEST(Encode, EquivariantUnderPixelPermutation) {
  std::mt19937_64 rng(5);
  const LabelMap m = random_map(4, 5, 6, rng);
  std::vector<int> perm(20);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  LabelMap pm(4, 5);
  for (int i = 0; i < 20; ++i) pm.labels[i] = m.labels[perm[i]];
  const Tensor3<float> a = encode(m, default_scheme().weights);
  const Tensor3<float> b = encode(pm, default_scheme().weights);
  for (int c = 0; c < 6; ++c) {
    for (int i = 0; i < 20; ++i) EXPECT_EQ(b.channel(c)[i], a.channel(c)[perm[i]]);
  }
}

TEST(DecodeArgmax, SinglePixelAndZeroPixel) {
  Tensor3<float> t(6, 1, 1);
  t.at(5, 0, 0) = 2.0f;
  EXPECT_EQ(decode_argmax(t).labels, std::vector<int>{5});
  t.at(5, 0, 0) = 0.0f;
  EXPECT_THROW(decode_argmax(t), EncodeError);
}

TEST(DecodeArgmax, MatchesArgmaxOracleOnValidTensors) {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> cls(0, 7);
  std::uniform_real_distribution<float> mag(0.1f, 3.0f);
  Tensor3<float> t(8, 9, 9);
  std::vector<int> expect(81);
  for (int i = 0; i < 81; ++i) {
    expect[i] = cls(rng);
    t.channel(expect[i])[i] = mag(rng);
  }
  EXPECT_EQ(decode_argmax(t).labels, expect);
}

TEST(EncodeLabelMap, NearestResizeKeepsClassesPure) {
  std::mt19937_64 rng(7);
  const LabelMap m = random_map(20, 30, 6, rng);
  const Tensor3<float> t = encode_label_map(m, default_scheme(), 8, 12);
  ASSERT_EQ(t.height, 8);
  ASSERT_EQ(t.width, 12);
  const LabelMap back = decode_argmax(t);
  const LabelMap resized = resize_nearest(m, 8, 12);
  EXPECT_EQ(back.labels, resized.labels);
}

TEST(LabelMapIo, SixteenBitRoundTrip) {
  testing::TempDir dir("pgm");
  std::mt19937_64 rng(8);
  const LabelMap small = random_map(5, 6, 150, rng);
  write_label_map(dir / "a.pgm", small);
  EXPECT_EQ(read_label_map(dir / "a.pgm").labels, small.labels);
  LabelMap big = random_map(5, 6, 1000, rng);
  big.labels[0] = 999;
  write_label_map(dir / "b.pgm", big);
  EXPECT_EQ(read_label_map(dir / "b.pgm").labels, big.labels);
}

}  // namespace
}  // namespace placekd
