#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "gmn/cli.hpp"
#include "gmn/data.hpp"
#include "model_support.hpp"

using namespace gmn;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("gmn_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "gmn");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(int(argv.size()), argv.data());
}

// A toy cache standing in for the ingested Omniglot splits.
fs::path toy_root() {
  const fs::path root = scratch("data");
  GlyphDataset train = gmn::testing::toy_dataset(8, 6, 1), test = gmn::testing::toy_dataset(6, 6, 2);
  train.name = test.name = "omniglot";
  test.split = Split::test;
  write_cache(root / "omniglot_train.gmnc", train);
  write_cache(root / "omniglot_test.gmnc", test);
  return root;
}

std::vector<std::string> tiny_train(const fs::path& root, const fs::path& out) {
  return {"train", "--preset", "tiny", "--steps", "2", "--batch", "2", "--checkpoint-interval", "2",
          "--log-interval", "1", "--data-root", root.string(), "--out", out.string()};
}

}  // namespace

TEST_CASE("usage, config and data errors map to their exit codes") {
  const fs::path root = toy_root(), out = scratch("errors");
  CHECK(run({}) == kExitUsage);
  CHECK(run({"train", "--no-such-flag"}) == kExitUsage);
  CHECK(run({"eval-nll", "--out", out.string()}) == kExitUsage);

  std::ofstream(out / "bad.json") << R"({"preset": "tiny", "learning_rat": 0.1})";
  CHECK(run({"train", "--config", (out / "bad.json").string(), "--data-root", root.string(), "--out",
             (out / "r").string()}) == kExitConfig);
  CHECK(run({"train", "--preset", "huge", "--data-root", root.string(), "--out", (out / "r").string()}) ==
        kExitConfig);

  CHECK(run({"train", "--preset", "tiny", "--data-root", (out / "empty").string(), "--out", (out / "r").string()}) ==
        kExitData);
  CHECK(run({"eval-nll", "--checkpoint", (out / "none.gmnk").string(), "--data-root", root.string(), "--out",
             (out / "e").string()}) == kExitCheckpoint);
}

TEST_CASE("config files resolve over the preset and reject unknown keys") {
  const TrainConfig c = resolve_train_config(json{{"batch_episodes", 3}, {"seed", 9}}, "tiny");
  CHECK(c.model == GMNConfig::tiny());
  CHECK(c.batch_episodes == 3);
  CHECK(c.seed == 9);
  CHECK_THROWS_AS(resolve_train_config(json{{"batch", 3}}, "tiny"), ConfigError);
}

TEST_CASE("deterministic training twice gives identical metrics and checkpoints") {
  const fs::path root = toy_root(), a = scratch("train_a"), b = scratch("train_b");
  REQUIRE(run(tiny_train(root, a)) == kExitOk);
  REQUIRE(run(tiny_train(root, b)) == kExitOk);
  CHECK(slurp(a / "metrics.jsonl") == slurp(b / "metrics.jsonl"));
  CHECK(slurp(a / checkpoint_name(2)) == slurp(b / checkpoint_name(2)));

  const json m = json::parse(slurp(a / "run_manifest.json"));
  CHECK(m.at("command") == "train");
  CHECK(m.at("checkpoint").at("git_blob_sha1") == git_blob_hash(a / checkpoint_name(2)));
  CHECK(m.at("config").at("batch_episodes") == 2);
}

TEST_CASE("evaluation subcommands write their artifacts") {
  const fs::path root = toy_root(), run_dir = scratch("eval_train"), out = scratch("eval_out");
  REQUIRE(run(tiny_train(root, run_dir)) == kExitOk);
  const std::string ck = (run_dir / checkpoint_name(2)).string();
  const std::vector<std::string> common{"--checkpoint", ck, "--data-root", root.string(), "--out", out.string()};
  auto with = [&](std::vector<std::string> args) {
    args.insert(args.end(), common.begin(), common.end());
    return run(args);
  };

  REQUIRE(with({"eval-nll", "--episodes", "3", "--is-samples", "4", "--ctest", "2"}) == kExitOk);
  const std::string csv = slurp(out / "nll_test.csv");
  CHECK(csv.rfind("statistic,t=0,", 0) == 0);
  CHECK(csv.find("\nmean_nll,") != std::string::npos);
  CHECK(csv.find("\nse,") != std::string::npos);
  CHECK(csv.find("\ncount,3,") != std::string::npos);
  CHECK(json::parse(slurp(out / "nll_test.json")).at("episodes") == 3);

  REQUIRE(with({"classify", "--ways", "3", "--trials", "4", "--is-samples", "2"}) == kExitOk);
  const json cls = json::parse(slurp(out / "classify.json"));
  CHECK(cls.at("trials") == 4);
  CHECK(cls.at("accuracy").get<double>() >= 0.0);

  REQUIRE(with({"sample", "--grid", "--samples-per-row", "2"}) == kExitOk);
  const GrayImage grid = read_png_gray(out / "samples_grid.png");
  const int rows = GMNConfig::tiny().episode_length;
  CHECK(grid.width == 3 * 28 + 2 * 2 + 2);
  CHECK(grid.height == rows * 28 + (rows - 1) * 2);

  REQUIRE(with({"diagnostics", "--episodes", "2"}) == kExitOk);
  CHECK(fs::exists(out / "prior_entropy.csv"));
  CHECK(fs::exists(out / "elbo_terms.csv"));

  const json m = json::parse(slurp(out / "run_manifest.json"));
  CHECK(m.at("command") == "diagnostics");
  CHECK(m.at("checkpoint").at("git_blob_sha1") == git_blob_hash(ck));
}
