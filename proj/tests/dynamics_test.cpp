#include <gtest/gtest.h>

#include <random>

#include "sparsekit/dynamics.hpp"
#include "test_support.hpp"

namespace sparsekit {
namespace {

using testing::make_container;

std::vector<CensusPoint> series_of(const std::vector<double>& fractions, std::uint64_t start = 1000,
                                   std::uint64_t step = 1000) {
  std::vector<CensusPoint> out;
  for (std::size_t i = 0; i < fractions.size(); ++i) out.push_back({start + i * step, fractions[i]});
  return out;
}

TEST(ZeroCensus, ToleranceWidensTheCount) {
  const auto c = make_container({{"w", DType::f64, {3}, {0.0, 1e-10, 0.5}}});
  EXPECT_EQ(zero_census(c, match_all_filter(), 0.0).total, 1u);
  EXPECT_EQ(zero_census(c, match_all_filter(), 1e-9).total, 2u);
  EXPECT_EQ(zero_census(c, match_all_filter(), 1.0).total, 3u);
  EXPECT_THROW(zero_census(c, match_all_filter(), -1.0), Error);
}

TEST(ZeroCensus, AllZeroAndDense) {
  const auto zeros = make_container({{"w", DType::f32, {10, 10}, std::vector<double>(100, 0.0)}});
  EXPECT_EQ(zero_census(zeros, match_all_filter(), 0.0).total, 100u);
  EXPECT_EQ(zero_census(zeros, match_all_filter(), 0.0).fraction(), 1.0);

  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(1000);
  for (auto& x : v) x = normal(rng);
  const auto dense = make_container({{"w", DType::f32, {1000}, v}});
  EXPECT_EQ(zero_census(dense, match_all_filter(), 0.0).fraction(), 0.0);
}

TEST(ZeroCensus, SignedZerosBothCount) {
  const auto c = make_container({{"a", DType::f16, {4}, {0.0, -0.0, 1.0, -1.0}},
                                 {"b", DType::bf16, {2}, {-0.0, 2.0}}});
  const auto z = zero_census(c, match_all_filter(), 0.0);
  EXPECT_EQ(z.per_tensor.at("a"), 2u);
  EXPECT_EQ(z.per_tensor.at("b"), 1u);
  EXPECT_EQ(z.total, 3u);
  EXPECT_EQ(z.prunable_total, 6u);
}

TEST(ZeroCensus, MonotoneInTolerance) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto c = testing::random_container(rng, 2000);
    std::uint64_t last = 0;
    for (double tol : {0.0, 1e-6, 1e-4, 1e-3, 1e-2, 0.05, 0.1, 1.0}) {
      const auto n = zero_census(c, match_all_filter(), tol).total;
      EXPECT_GE(n, last);
      last = n;
    }
  }
}

TEST(ZeroCensus, RespectsFilter) {
  const auto c = make_container({{"embed.weight", DType::f32, {2, 2}, {0, 0, 0, 0}},
                                 {"layer.weight", DType::f32, {2, 2}, {0, 1, 1, 1}}});
  const auto z = zero_census(c, default_prunable_filter(), 0.0);
  EXPECT_EQ(z.prunable_total, 4u);
  EXPECT_EQ(z.fraction(), 0.25);
}

TEST(CensusSeries, FixtureAndErrors) {
  testing::TempDir dir;
  auto write = [&](const std::string& name, double zero_share) {
    std::vector<double> v(100, 0.5);
    for (std::size_t i = 0; i < static_cast<std::size_t>(zero_share * 100); ++i) v[i] = 0.0;
    write_container(dir.file(name), {make_payload("w", DType::f32, {10, 10}, v)});
    return dir.file(name);
  };
  CheckpointSeries s{{{1000, write("a", 0.01)}, {2000, write("b", 0.01)}, {3000, write("c", 0.30)}}};
  const auto pts = census_series(s, match_all_filter(), 0.0, ExecPolicy{4});
  ASSERT_EQ(pts.size(), 3u);
  EXPECT_EQ(pts[0].zero_fraction, 0.01);
  EXPECT_EQ(pts[2].zero_fraction, 0.30);
  EXPECT_EQ(pts[2].iteration, 3000u);
  EXPECT_EQ(detect_abrupt(pts), 3000u);

  CheckpointSeries same{{{1, s.entries[0].path}, {2, s.entries[0].path}, {3, s.entries[0].path}}};
  for (const auto& p : census_series(same, match_all_filter(), 0.0)) EXPECT_EQ(p.zero_fraction, 0.01);

  EXPECT_THROW(census_series(CheckpointSeries{}, match_all_filter(), 0.0), Error);
  EXPECT_THROW(census_series(CheckpointSeries{{{2, s.entries[0].path}, {1, s.entries[1].path}}},
                             match_all_filter(), 0.0),
               Error);

  CheckpointSeries broken{{{1, s.entries[0].path}, {2, dir.file("missing")}}};
  try {
    census_series(broken, match_all_filter(), 0.0);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("entry 1"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("missing"), std::string::npos);
  }
}

TEST(Abrupt, WorkedExample) {
  EXPECT_EQ(detect_abrupt(series_of({0.01, 0.012, 0.011, 0.30, 0.32})), 4000u);
}

TEST(Abrupt, FlatSeriesHasNone) {
  EXPECT_FALSE(detect_abrupt(series_of({0.1, 0.1, 0.1, 0.1})));
  EXPECT_FALSE(detect_abrupt(series_of({0.1, 0.12, 0.14, 0.16})));
  EXPECT_FALSE(detect_abrupt(series_of({0.5, 0.2, 0.1})));
  EXPECT_THROW(detect_abrupt(series_of({0.1})), Error);
}

TEST(Abrupt, EqualJumpsResolveToEarliest) {
  EXPECT_EQ(detect_abrupt(series_of({0.0, 0.25, 0.25, 0.5})), 2000u);
  EXPECT_EQ(detect_abrupt(series_of({0.0, 0.5, 0.5, 0.5}), 0.5), 2000u);
}

TEST(Abrupt, MinJumpIsInclusive) {
  EXPECT_EQ(detect_abrupt(series_of({0.0, 0.25}), 0.25), 2000u);
  EXPECT_FALSE(detect_abrupt(series_of({0.0, 0.25}), 0.26));
}

TEST(Abrupt, InvariantUnderAffineReindexing) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> f(8);
    for (auto& x : f) x = unit(rng);
    const auto base = series_of(f, 0, 1);
    const auto r0 = detect_abrupt(base);
    const std::uint64_t a = 1 + trial % 7, b = 500 + trial;
    auto moved = base;
    for (auto& p : moved) p.iteration = a * p.iteration + b;
    const auto r1 = detect_abrupt(moved);
    ASSERT_EQ(r0.has_value(), r1.has_value());
    if (r0) {
      EXPECT_EQ(*r1, a * *r0 + b);
    }
  }
}

TEST(Manifest, ParsesAndResolvesRelativePaths) {
  const auto s = parse_series_manifest(
      R"({"entries": [{"iteration": 10, "path": "a.safetensors"}, {"iteration": 20, "path": "/abs/b.safetensors"}]})",
      "/data/run");
  ASSERT_EQ(s.entries.size(), 2u);
  EXPECT_EQ(s.entries[0].iteration, 10u);
  EXPECT_EQ(s.entries[0].path, "/data/run/a.safetensors");
  EXPECT_EQ(s.entries[1].path, "/abs/b.safetensors");
  EXPECT_THROW(parse_series_manifest("{\"entries\": [{\"iteration\": 1}]}"), Error);
  EXPECT_THROW(parse_series_manifest("not json"), Error);
}

}  // namespace
}  // namespace sparsekit
