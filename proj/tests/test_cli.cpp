#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "longtail/cli.hpp"

using namespace longtail;

namespace {

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

// run the CLI in-process with stdout/stderr captured
CliResult run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  std::streambuf* old_out = std::cout.rdbuf(out.rdbuf());
  std::streambuf* old_err = std::cerr.rdbuf(err.rdbuf());
  CliResult r;
  r.code = run_cli(args);
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string cli_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "longtail_cli_tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("cli exit codes separate usage errors from data errors") {
  CHECK(run({"--help"}).code == 0);
  CHECK(run({"datagen", "--help"}).code == 0);

  const CliResult bogus_flag = run({"datagen", "--bogus"});
  CHECK(bogus_flag.code == 1);
  CHECK(bogus_flag.err.find("Usage") != std::string::npos);
  CHECK(run({"no-such-command"}).code == 1);
  CHECK(run({}).code == 1);

  const CliResult missing = run({"pretrain"});
  CHECK(missing.code == 2);
  CHECK(missing.err.find("error:") != std::string::npos);
  CHECK(missing.err.find("--data") != std::string::npos);

  CHECK(run({"pretrain", "--data", "/nonexistent/dataset.txt"}).code == 2);
  CHECK(run({"datagen", "--set", "bogus.key=1", "--out", cli_dir("bogus")}).code == 2);
  CHECK(run({"datagen", "--set", "no-equals-sign", "--out", cli_dir("noeq")}).code == 2);
}

TEST_CASE("datagen is reproducible per seed") {
  const std::string a = cli_dir("gen_a");
  const std::string b = cli_dir("gen_b");
  const std::string c = cli_dir("gen_c");
  const std::vector<std::string> common{
      "--set", "gen.classes=6",  "--set", "gen.groups=2",
      "--set", "gen.dim=6",      "--set", "gen.n_total=150"};
  auto args = [&](const std::string& out, const std::string& seed) {
    std::vector<std::string> v{"datagen", "--out", out, "--seed", seed};
    v.insert(v.end(), common.begin(), common.end());
    return v;
  };
  REQUIRE(run(args(a, "9")).code == 0);
  REQUIRE(run(args(b, "9")).code == 0);
  REQUIRE(run(args(c, "10")).code == 0);
  CHECK(slurp(a + "/dataset.txt") == slurp(b + "/dataset.txt"));
  CHECK(slurp(a + "/truth.txt") == slurp(b + "/truth.txt"));
  CHECK(slurp(a + "/dataset.txt") != slurp(c + "/dataset.txt"));

  const Dataset ds = load_dataset(a + "/dataset.txt");
  CHECK(ds.num_classes == 6);
  CHECK(ds.dim == 6);
}

TEST_CASE("config files are overridden by --set") {
  const std::string out = cli_dir("cfg");
  const std::string cfg_path = out + "/gen.cfg";
  std::ofstream(cfg_path) << "gen.classes = 5\n"
                          << "gen.dim = 5\n"
                          << "# comment line\n"
                          << "gen.n_total = 120\n"
                          << "gen.groups = 2\n";
  REQUIRE(run({"datagen", "--config", cfg_path, "--set", "gen.classes=7", "--out", out})
              .code == 0);
  const Dataset ds = load_dataset(out + "/dataset.txt");
  CHECK(ds.num_classes == 7);  // --set wins over the file
  CHECK(ds.dim == 5);          // untouched keys come from the file

  const std::string report = slurp(out + "/datagen_report.txt");
  CHECK(report.find("config.gen.classes = 7") != std::string::npos);
}

TEST_CASE("the full pipeline runs end to end") {
  const std::string out = cli_dir("pipeline");
  REQUIRE(run({"datagen", "--out", out, "--seed", "5",
               "--set", "gen.classes=6", "--set", "gen.groups=2",
               "--set", "gen.dim=6", "--set", "gen.n_total=180",
               "--set", "gen.background_ratio=1"})
              .code == 0);
  const std::string data = out + "/dataset.txt";

  REQUIRE(run({"pretrain", "--data", data, "--out", out,
               "--set", "train.epochs=3", "--set", "train.hidden=8",
               "--set", "train.batch_size=16"})
              .code == 0);
  const MlpModel base = load_mlp(out + "/base_mlp.txt");
  CHECK(base.class_set == std::vector<int>{1, 2, 3, 4, 5, 6});

  REQUIRE(run({"cluster", "--data", data, "--base", out + "/base_mlp.txt",
               "--method", "visual", "--groups", "1,2", "--out", out})
              .code == 0);
  const HierarchyTree tree = load_taxonomy(out + "/taxonomy.txt", base.class_set);
  CHECK(tree.depth() == 2);

  REQUIRE(run({"train-hier", "--data", data, "--base", out + "/base_mlp.txt",
               "--taxonomy", out + "/taxonomy.txt", "--strategy", "0,1,2",
               "--thresholds", "0", "--out", out,
               "--set", "train.epochs=3", "--set", "train.hidden=8",
               "--set", "train.batch_size=16", "--set", "svm.iterations=150"})
              .code == 0);
  const CascadeEnsemble trained = load_ensemble(out + "/ensemble");
  CHECK(trained.strategy == std::vector<int>{0, 1, 2});
  CHECK(trained.thresholds == std::vector<double>{0.0});

  REQUIRE(run({"calibrate", "--data", data, "--ensemble", out + "/ensemble",
               "--recall", "0.9", "--out", out})
              .code == 0);
  const CascadeEnsemble calibrated = load_ensemble(out + "/ensemble");
  CHECK(calibrated.thresholds != trained.thresholds);
  CHECK(slurp(out + "/calibrate_report.txt").find("recall_target") != std::string::npos);

  const CliResult infer = run({"infer", "--data", data, "--ensemble", out + "/ensemble",
                               "--split", "test", "--out", out});
  REQUIRE(infer.code == 0);
  const Dataset ds = load_dataset(data);
  const std::size_t test_count = split_indices(ds, Split::test).size();
  const ScoreFile sf = load_scores(out + "/scores.txt");
  CHECK(sf.ids.size() == test_count);
  CHECK(sf.class_ids == std::vector<int>{1, 2, 3, 4, 5, 6});

  const CliResult ev = run({"eval", "--data", data, "--scores", out + "/scores.txt",
                            "--out", out});
  REQUIRE(ev.code == 0);
  REQUIRE(ev.out.rfind("map ", 0) == 0);
  const double map = std::stod(ev.out.substr(4));
  CHECK(map >= 0.0);
  CHECK(map <= 1.0);
  const std::string report = slurp(out + "/eval_report.txt");
  CHECK(report.find("map = ") != std::string::npos);
  CHECK(report.find("ap.1 = ") != std::string::npos);

  SECTION("evaluating scores for unknown sample ids fails cleanly") {
    const std::string bad = out + "/bad_scores.txt";
    std::ofstream(bad) << "# classes 1 2 3 4 5 6\nzzz 1 2 3 4 5 6\n";
    const CliResult r = run({"eval", "--data", data, "--scores", bad, "--out", out});
    CHECK(r.code == 2);
    CHECK(r.err.find("zzz") != std::string::npos);
  }
  SECTION("inference with an unknown split name fails cleanly") {
    CHECK(run({"infer", "--data", data, "--ensemble", out + "/ensemble",
               "--split", "weird", "--out", out})
              .code == 2);
  }
}

TEST_CASE("the level-sweep experiment emits one csv row per hierarchy depth") {
  const std::string out = cli_dir("sweep");
  const CliResult r = run({"experiment", "--family", "level-sweep", "--out", out,
                           "--set", "experiment.seeds=3",
                           "--set", "gen.classes=16", "--set", "gen.groups=4",
                           "--set", "gen.dim=6", "--set", "gen.n_total=320",
                           "--set", "gen.background_ratio=1",
                           "--set", "train.epochs=3", "--set", "train.hidden=8",
                           "--set", "train.batch_size=16",
                           "--set", "svm.iterations=120"});
  REQUIRE(r.code == 0);

  const std::string csv = slurp(out + "/experiment_level-sweep.csv");
  std::vector<std::string> lines;
  std::istringstream ss(csv);
  for (std::string line; std::getline(ss, line);) lines.push_back(line);
  REQUIRE(lines.size() == 5);  // header + L=1..4
  CHECK(lines[0].rfind("levels,seeds_ok,", 0) == 0);
  CHECK(lines[0].find("map_mean") != std::string::npos);
  CHECK(lines[1].rfind("1,1,", 0) == 0);
  CHECK(lines[2].rfind("\"1,4\",1,", 0) == 0);  // list cells are csv-quoted
  CHECK(lines[3].rfind("\"1,4,8\",1,", 0) == 0);
  CHECK(lines[4].rfind("\"1,4,8,16\",1,", 0) == 0);

  const std::string report = slurp(out + "/experiment_report.txt");
  CHECK(report.find("family = level-sweep") != std::string::npos);
  CHECK(report.find("grid_points = 4") != std::string::npos);

  SECTION("unknown families fail cleanly") {
    CHECK(run({"experiment", "--family", "nope", "--out", out}).code == 2);
  }
}
