#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "sparsekit/mask.hpp"
#include "sparsekit/mask_io.hpp"
#include "sparsekit/pruner.hpp"
#include "test_support.hpp"

namespace sparsekit {
namespace {

using testing::make_container;
using testing::TempDir;

TensorMask mask_of(const std::vector<bool>& bits) {
  const Shape shape{bits.size()};
  return TensorMask::from_bools(shape, bits);
}

TensorMask mask_of(std::initializer_list<int> raw) {
  std::vector<bool> bits;
  for (int b : raw) bits.push_back(b != 0);
  return mask_of(bits);
}

MaskSet set_of(std::map<std::string, TensorMask> masks) {
  MaskSet s;
  s.masks = std::move(masks);
  s.provenance.method = "test";
  return s;
}

MaskSet random_set(std::mt19937_64& rng, std::uint64_t n, double keep) {
  std::bernoulli_distribution coin(keep);
  std::vector<bool> bits(n);
  for (std::size_t i = 0; i < n; ++i) bits[i] = coin(rng);
  return set_of({{"w", mask_of(bits)}});
}

TEST(TensorMask, PopcountMatchesCachedCount) {
  std::mt19937_64 rng(1);
  for (std::uint64_t n : {1u, 63u, 64u, 65u, 1000u}) {
    auto m = TensorMask::ones({n});
    EXPECT_EQ(m.nnz(), n);
    std::uniform_int_distribution<std::uint64_t> pick(0, n - 1);
    for (int k = 0; k < 50; ++k) {
      const auto i = pick(rng);
      if (k % 2) m.clear(i); else m.set(i);
      ASSERT_EQ(m.nnz(), m.popcount());
    }
  }
}

TEST(TensorMask, PackingIsLsbFirst) {
  const auto m = mask_of({true, false, false, false, false, false, false, false, false, true});
  const auto packed = m.packed();
  ASSERT_EQ(packed.size(), 2u);
  EXPECT_EQ(packed[0], std::byte{0x01});
  EXPECT_EQ(packed[1], std::byte{0x02});
}

TEST(Sparsity, FormulaCases) {
  EXPECT_EQ(sparsity(set_of({{"a", TensorMask::ones({4})}, {"b", TensorMask::ones({3})}})), 0.0);
  EXPECT_EQ(sparsity(set_of({{"a", TensorMask::zeros({4})}})), 1.0);
  // nnz 3 and 1 over 8 elements: 1 - 4/8.
  EXPECT_DOUBLE_EQ(sparsity(set_of({{"a", mask_of({1, 1, 1, 0})}, {"b", mask_of({0, 0, 1, 0})}})), 0.5);
  EXPECT_THROW(sparsity(MaskSet{}), Error);
}

TEST(Cosine, WorkedExamples) {
  const auto a = mask_of({1, 1, 0, 0});
  EXPECT_EQ(cosine_similarity(a, a), 1.0);
  EXPECT_DOUBLE_EQ(cosine_similarity(a, mask_of({1, 0, 1, 0})), 0.5);
  // Nested: intersection is the smaller mask, so cos = sqrt(1/4).
  EXPECT_DOUBLE_EQ(cosine_similarity(mask_of({1, 1, 1, 1}), mask_of({0, 0, 1, 0})), 0.5);
}

TEST(Cosine, RejectsMismatchAndAllZero) {
  EXPECT_THROW(cosine_similarity(mask_of({1, 0}), mask_of({1, 0, 1})), Error);
  EXPECT_THROW(cosine_similarity(mask_of({0, 0}), mask_of({1, 0})), Error);
  EXPECT_THROW(cosine_similarity(set_of({{"a", mask_of({1})}}), set_of({{"b", mask_of({1})}})), Error);
}

TEST(Cosine, SymmetricAndSelfUnityOnRandomSets) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    std::uniform_int_distribution<std::uint64_t> size(1, 3000);
    const auto n = size(rng);
    auto a = random_set(rng, n, 0.6);
    auto b = random_set(rng, n, 0.4);
    if (a.nnz() == 0 || b.nnz() == 0) continue;
    EXPECT_EQ(cosine_similarity(a, b), cosine_similarity(b, a));
    EXPECT_NEAR(cosine_similarity(a, a), 1.0, 1e-12);
  }
}

TEST(Cosine, PerTensorBreakdown) {
  const auto a = set_of({{"x", mask_of({1, 1, 0, 0})}, {"y", mask_of({0, 0})}});
  const auto b = set_of({{"x", mask_of({1, 0, 1, 0})}, {"y", mask_of({1, 1})}});
  const auto by = cosine_by_tensor(a, b);
  EXPECT_DOUBLE_EQ(*by.at("x"), 0.5);
  EXPECT_FALSE(by.at("y").has_value());
  // Flat similarity: |a&b| = 1, nnz 2 and 4.
  EXPECT_DOUBLE_EQ(cosine_similarity(a, b), 1.0 / std::sqrt(8.0));
}

TEST(SimilarityMatrix, IdenticalSets) {
  const auto m = set_of({{"w", mask_of({1, 0, 1})}});
  const auto mat = similarity_matrix({m, m});
  EXPECT_EQ(mat, (SimilarityMatrix{{1.0, 1.0}, {1.0, 1.0}}));
  EXPECT_THROW(similarity_matrix({m}), Error);
}

TEST(SimilarityMatrix, NestedOmpMasksFollowClosedForm) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> normal;
  std::vector<double> values(5000);
  for (auto& v : values) v = normal(rng);
  const auto c = make_container({{"w", DType::f32, {50, 100}, values}});
  const auto m10 = omp_global(c, testing::spec_all(0.1));
  const auto m20 = omp_global(c, testing::spec_all(0.2));
  const auto mat = similarity_matrix({m10, m20});
  EXPECT_EQ(mat[0][0], 1.0);
  EXPECT_EQ(mat[0][1], mat[1][0]);
  EXPECT_NEAR(mat[0][1], std::sqrt(static_cast<double>(m20.nnz()) / static_cast<double>(m10.nnz())), 1e-12);
}

TEST(SimilarityMatrix, IndependentHalfMasksOverlapByHalf) {
  std::mt19937_64 rng(21);
  std::vector<MaskSet> sets;
  for (int i = 0; i < 3; ++i) sets.push_back(random_set(rng, 10000, 0.5));
  const auto mat = similarity_matrix(sets, ExecPolicy{3});
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      if (i == j) {
        EXPECT_EQ(mat[i][j], 1.0);
        continue;
      }
      // Brute-force overlap count as the cross-check.
      std::uint64_t both = 0;
      const auto& a = sets[i].masks.at("w");
      const auto& b = sets[j].masks.at("w");
      for (std::uint64_t k = 0; k < 10000; ++k) both += a.test(k) && b.test(k);
      EXPECT_NEAR(mat[i][j], both / std::sqrt(double(a.nnz()) * double(b.nnz())), 1e-12);
      EXPECT_NEAR(mat[i][j], 0.5, 0.02);
    }
  }
}

TEST(Nested, Containment) {
  const auto low = set_of({{"w", mask_of({1, 1, 1, 0})}});
  const auto high = set_of({{"w", mask_of({0, 1, 1, 0})}});
  EXPECT_TRUE(is_nested(low, low));
  EXPECT_TRUE(is_nested(high, low));
  EXPECT_FALSE(is_nested(low, high));
  EXPECT_FALSE(is_nested(set_of({{"w", mask_of({1, 0, 0, 1})}}), low));
}

TEST(Nested, OmpMasksAreNestedButIndependentTaskMasksAreNot) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal;
  std::vector<double> values(4096);
  for (auto& v : values) v = normal(rng);
  const auto c = make_container({{"w", DType::bf16, {64, 64}, values}});
  EXPECT_TRUE(is_nested(omp_global(c, testing::spec_all(0.3)), omp_global(c, testing::spec_all(0.1))));

  // Stand-ins for task-specific masks: independent random masks at the two sparsities.
  const auto task_a = random_set(rng, 4096, 0.7);
  const auto task_b = random_set(rng, 4096, 0.9);
  EXPECT_FALSE(is_nested(task_a, task_b));
}

TEST(Apply, ZeroesMaskedPositions) {
  const auto c = make_container({{"w", DType::f32, {4}, {0.1, -0.5, 0.3, 0.05}}, {"b", DType::f32, {1}, {7.0}}});
  auto set = set_of({{"w", mask_of({0, 1, 1, 0})}});
  set.provenance.source_digest = container_digest(c);
  const auto out = apply(set, c);
  const auto w = out.read_values("w");
  EXPECT_EQ(w, (std::vector<double>{0.0, static_cast<float>(-0.5), static_cast<float>(0.3), 0.0}));
  EXPECT_EQ(out.read_raw("b"), c.read_raw("b"));
}

TEST(Apply, IdentityAndFullZero) {
  const auto c = make_container({{"w", DType::f16, {2, 3}, {1, -2, 3, -4, 5, -6}}, {"n", DType::f32, {3}, {1, 2, 3}}});
  auto ones = set_of({{"w", TensorMask::ones({2, 3})}});
  ones.provenance.source_digest = container_digest(c);
  EXPECT_EQ(testing::image_of(apply(ones, c)), testing::image_of(c));

  auto zeros = set_of({{"w", TensorMask::zeros({2, 3})}});
  zeros.provenance.source_digest = container_digest(c);
  const auto out = apply(zeros, c);
  for (double v : out.read_values("w")) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(out.read_values("n"), c.read_values("n"));
}

TEST(Apply, IdempotentAndDigestChecked) {
  std::mt19937_64 rng(4);
  const auto c = testing::random_container(rng, 2000);
  auto set = omp_global(c, testing::spec_all(0.4));
  const auto once = apply(set, c);
  const auto twice = apply(set, once, /*ignore_digest=*/true);
  EXPECT_EQ(testing::image_of(once), testing::image_of(twice));
  EXPECT_THROW(apply(set, once), Error);

  auto bad_shape = set;
  bad_shape.masks.begin()->second = TensorMask::ones({1, 1, 1});
  EXPECT_THROW(apply(bad_shape, c), Error);
}

TEST(MaskFile, RoundTripIsEqualAndDeterministic) {
  TempDir dir;
  std::mt19937_64 rng(8);
  const auto c = testing::random_container(rng, 3000);
  auto spec = testing::spec_all(0.37);
  spec.prunable_filter = {{"t*"}, {"x*"}, 1};
  const auto set = omp_global(c, spec);
  write_mask(dir.file("m.esmk"), set);
  const auto back = read_mask(dir.file("m.esmk"));
  EXPECT_EQ(back, set);
  write_mask(dir.file("m2.esmk"), back);
  EXPECT_EQ(read_file_bytes(dir.file("m.esmk")), read_file_bytes(dir.file("m2.esmk")));
}

TEST(MaskFile, EmptySetIsMinimalValidFile) {
  const auto bytes = serialize_mask(MaskSet{});
  EXPECT_EQ(parse_mask(bytes), MaskSet{});
}

TEST(MaskFile, RejectsCorruption) {
  const auto set = set_of({{"w", mask_of({1, 0, 1, 1, 0, 0, 0, 0, 1})}});
  const auto good = serialize_mask(set);

  auto bad_magic = good;
  bad_magic[0] = std::byte{'X'};
  EXPECT_THROW(parse_mask(bad_magic), Error);

  auto bad_version = good;
  bad_version[4] = std::byte{2};
  try {
    parse_mask(bad_version);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("version mismatch"), std::string::npos);
  }

  // Flip a kept bit off: header nnz no longer equals the popcount.
  auto bad_nnz = good;
  bad_nnz[bad_nnz.size() - 2] ^= std::byte{0x01};
  try {
    parse_mask(bad_nnz);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("disagrees with popcount"), std::string::npos);
  }

  // Padding bit beyond the 9 elements.
  auto bad_pad = good;
  bad_pad.back() |= std::byte{0x80};
  EXPECT_THROW(parse_mask(bad_pad), Error);

  auto truncated = good;
  truncated.pop_back();
  EXPECT_THROW(parse_mask(truncated), Error);
}

}  // namespace
}  // namespace sparsekit
