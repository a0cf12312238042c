#include <gtest/gtest.h>

#include <sstream>

#include "cli.hpp"
#include "test_support.hpp"

namespace sparsekit {
namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    model = dir.file("model.safetensors");
    ASSERT_EQ(run({"synth", "--out", model, "--dist", "normal", "--seed", "1", "--tensor",
                   "encoder.layer.0.attention.self.query.weight=16x16", "--tensor",
                   "encoder.layer.0.output.dense.weight=16x32:BF16", "--tensor", "embeddings.word.weight=8x16",
                   "--tensor", "encoder.layer.0.output.dense.bias=16"})
                  .code,
              0);
  }

  testing::TempDir dir;
  std::string model;
};

TEST_F(Cli, InspectMatchesLibrary) {
  const auto r = run({"inspect", "--in", model});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto doc = nlohmann::json::parse(r.out);
  const auto c = open_container(model);
  EXPECT_EQ(doc["tensors"].size(), c.metas().size());
  EXPECT_EQ(doc["total_params"].get<std::uint64_t>(), 16u * 16 + 16 * 32 + 8 * 16 + 16);
  EXPECT_EQ(doc["prunable_params"].get<std::uint64_t>(), 16u * 16 + 16 * 32);
  const auto csv = run({"inspect", "--in", model, "--format", "csv"});
  EXPECT_EQ(csv.out.substr(0, csv.out.find('\n')), "tensor,dtype,shape,numel,prunable");
}

TEST_F(Cli, PruneWritesTheLibraryMask) {
  const auto mask = dir.file("m.mask");
  const auto r = run({"prune", "--in", model, "--out", mask, "--sparsity", "0.5"});
  ASSERT_EQ(r.code, 0) << r.err;
  PruneSpec spec;
  spec.target_sparsity = 0.5;
  const auto expected = omp(open_container(model), spec);
  EXPECT_EQ(read_mask(mask), expected);
  EXPECT_EQ(read_file_bytes(mask), serialize_mask(expected));
  EXPECT_EQ(nlohmann::json::parse(r.out)["pruned"].get<std::uint64_t>(), expected.numel() - expected.nnz());
}

TEST_F(Cli, NmPruneAndApply) {
  const auto mask = dir.file("nm.mask");
  ASSERT_EQ(run({"nm-prune", "--in", model, "--out", mask, "--nm", "2:4"}).code, 0);
  const auto set = read_mask(mask);
  EXPECT_EQ(set.provenance.method, "nm-2:4");
  EXPECT_EQ(sparsity(set), 0.5);

  const auto pruned = dir.file("pruned.safetensors");
  const auto r = run({"apply", "--in", model, "--mask", mask, "--out", pruned});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto c = open_container(pruned);
  const auto expected = apply(set, open_container(model));
  EXPECT_EQ(testing::image_of(c), testing::image_of(expected));
  const auto census = zero_census(c, default_prunable_filter(), 0.0);
  EXPECT_EQ(census.fraction(), 0.5);

  // A mask of one checkpoint applied to another is refused unless forced.
  const auto other = dir.file("other.safetensors");
  ASSERT_EQ(run({"synth", "--out", other, "--seed", "2", "--tensor",
                 "encoder.layer.0.attention.self.query.weight=16x16", "--tensor",
                 "encoder.layer.0.output.dense.weight=16x32:BF16"})
                .code,
            0);
  EXPECT_EQ(run({"apply", "--in", other, "--mask", mask, "--out", dir.file("x")}).code, 2);
  EXPECT_EQ(run({"apply", "--in", other, "--mask", mask, "--out", dir.file("x"), "--force"}).code, 0);
}

TEST_F(Cli, SimilarityOutputs) {
  const auto a = dir.file("a.mask"), b = dir.file("b.mask");
  ASSERT_EQ(run({"prune", "--in", model, "--out", a, "--sparsity", "0.5"}).code, 0);
  ASSERT_EQ(run({"prune", "--in", model, "--out", b, "--sparsity", "0.75"}).code, 0);
  EXPECT_EQ(run({"similarity", a, a}).out, "1.0\n");
  const auto ab = run({"similarity", a, b});
  ASSERT_EQ(ab.code, 0) << ab.err;
  EXPECT_EQ(ab.out, format_double(cosine_similarity(read_mask(a), read_mask(b))) + "\n");
  EXPECT_NEAR(std::stod(ab.out), std::sqrt(0.25 / 0.5), 1e-12);

  const auto matrix = nlohmann::json::parse(run({"similarity", a, b, a, "--format", "json"}).out);
  EXPECT_EQ(matrix["matrix"][0][2].get<double>(), 1.0);
  const auto per = run({"similarity", a, b, "--per-tensor"});
  EXPECT_EQ(per.out.substr(0, per.out.find('\n')), "tensor,cosine");
  EXPECT_EQ(run({"similarity", a, b, a, "--per-tensor"}).code, 1);
}

TEST_F(Cli, Essential) {
  const auto curve = dir.file("curve.csv");
  write_text_file(curve, "# dense=0.90\nsparsity,metric\n0.1,0.90\n0.2,0.895\n0.3,0.893\n0.4,0.88\n0.5,0.85\n");
  EXPECT_EQ(run({"essential", "--curve", curve}).out, "0.3\n");
  EXPECT_EQ(run({"essential", "--curve", curve, "--eps", "0.5"}).out, "none\n");
  const auto drops = run({"essential", "--curve", curve, "--drop"});
  EXPECT_EQ(drops.out.substr(0, drops.out.find('\n')), "sparsity,drop");
  EXPECT_EQ(run({"essential", "--curve", curve, "--mode", "bogus"}).code, 1);
}

TEST_F(Cli, SynthSpikeAndCensus) {
  const auto spike = dir.file("spike.safetensors");
  const std::vector<std::string> args{"synth", "--out", spike, "--dist", "spike:0.3", "--seed", "7",
                                      "--tensor", "layer.weight=100x100"};
  ASSERT_EQ(run(args).code, 0);
  const auto r = run({"census", "--in", spike});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NEAR(nlohmann::json::parse(r.out)["zero_fraction"].get<double>(), 0.30, 0.01);

  const auto again = dir.file("again.safetensors");
  auto args2 = args;
  args2[2] = again;
  ASSERT_EQ(run(args2).code, 0);
  EXPECT_EQ(read_file_bytes(spike), read_file_bytes(again));

  EXPECT_EQ(nlohmann::json::parse(run({"census", "--in", model}).out)["zero_fraction"].get<double>(), 0.0);
}

TEST_F(Cli, CensusSeries) {
  for (int i = 0; i < 3; ++i) {
    const std::string p = i < 2 ? "spike:0.01" : "spike:0.3";
    ASSERT_EQ(run({"synth", "--out", dir.file("ck" + std::to_string(i)), "--dist", p, "--seed", "9", "--tensor",
                   "layer.weight=100x100"})
                  .code,
              0);
  }
  write_text_file(dir.file("series.json"),
                  R"({"entries": [{"iteration": 1000, "path": "ck0"}, {"iteration": 2000, "path": "ck1"},
                                  {"iteration": 3000, "path": "ck2"}]})");
  const auto r = run({"census", "--manifest", dir.file("series.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.substr(0, r.out.find('\n')), "iteration,zero_fraction");
  EXPECT_NE(r.out.find("# abrupt_iteration=3000\n"), std::string::npos);
}

TEST_F(Cli, Reports) {
  const auto mask = dir.file("m.mask");
  ASSERT_EQ(run({"prune", "--in", model, "--out", mask, "--sparsity", "0.5"}).code, 0);
  const auto comp = run({"report", "--kind", "components", "--mask", mask});
  ASSERT_EQ(comp.code, 0) << comp.err;
  EXPECT_EQ(comp.out, component_csv(component_report(read_mask(mask), default_component_rules())));

  const auto rules = dir.file("r.rules");
  write_text_file(rules, "everything *\n");
  const auto one = run({"report", "--kind", "components", "--mask", mask, "--rules", rules, "--format", "json"});
  EXPECT_EQ(nlohmann::json::parse(one.out)["components"][0]["sparsity"].get<double>(), 0.5);

  const auto hist = run({"report", "--kind", "histogram", "--in", model, "--bins", "8"});
  ASSERT_EQ(hist.code, 0) << hist.err;
  EXPECT_EQ(hist.out, histogram_csv(weight_histogram(open_container(model), default_prunable_filter(), 8)));
  EXPECT_EQ(run({"report", "--kind", "histogram", "--mask", mask}).code, 1);
}

TEST_F(Cli, ThreadCountDoesNotChangeOutputs) {
  const auto m1 = dir.file("t1.mask"), m8 = dir.file("t8.mask");
  ASSERT_EQ(run({"--threads", "1", "prune", "--in", model, "--out", m1, "--sparsity", "0.6"}).code, 0);
  ASSERT_EQ(run({"--threads", "8", "prune", "--in", model, "--out", m8, "--sparsity", "0.6"}).code, 0);
  EXPECT_EQ(read_file_bytes(m1), read_file_bytes(m8));
  EXPECT_EQ(run({"--threads", "1", "report", "--kind", "histogram", "--in", model}).out,
            run({"--threads", "8", "report", "--kind", "histogram", "--in", model}).out);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"frobnicate"}).code, 1);
  EXPECT_EQ(run({"prune", "--in", model, "--out", dir.file("x"), "--sparsity", "1.5"}).code, 1);
  EXPECT_EQ(run({"prune", "--in", model, "--out", dir.file("x"), "--sparsity", "0.5", "--include", "[bad"}).code,
            1);
  EXPECT_EQ(run({"nm-prune", "--in", model, "--out", dir.file("x"), "--nm", "5:4"}).code, 1);
  EXPECT_EQ(run({"prune", "--in", dir.file("missing"), "--out", dir.file("x"), "--sparsity", "0.5"}).code, 2);
  write_text_file(dir.file("junk"), "not a container");
  EXPECT_EQ(run({"inspect", "--in", dir.file("junk")}).code, 2);
  EXPECT_EQ(run({"prune", "--in", model, "--out", dir.file("x"), "--sparsity", "0.5", "--include", "nothing*"}).code,
            2);
  EXPECT_FALSE(std::filesystem::exists(dir.file("x")));
  EXPECT_EQ(run({"census"}).code, 1);
  EXPECT_EQ(run({"--help"}).code, 0);
}

}  // namespace
}  // namespace sparsekit
