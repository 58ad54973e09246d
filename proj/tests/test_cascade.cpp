#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <limits>

#include "longtail/cascade.hpp"
#include "longtail/rng.hpp"

using namespace longtail;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string tmp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "longtail_cascade_tests" / name;
  std::filesystem::create_directories(dir);
  return dir.string();
}

HierarchyTree tree_of(std::vector<int> universe,
                      std::vector<std::vector<std::vector<int>>> lvls) {
  HierarchyTree t;
  t.class_ids = std::move(universe);
  for (auto& lvl : lvls) {
    HierarchyLevel hl;
    for (auto& g : lvl) {
      HierarchyGroup hg;
      hg.classes = g;
      hl.groups.push_back(hg);
    }
    t.levels.push_back(hl);
  }
  validate_tree(t);
  return t;
}

// identity hidden layer + zero head: extracted features are just the
// (normalized) input, so hand-set SVM weights act directly on it
MlpModel identity_mlp(int dim, std::vector<int> classes) {
  MlpModel m;
  m.dims = {dim, dim, static_cast<int>(classes.size()) + 1};
  m.class_set = std::move(classes);
  m.frozen = {0, 0};
  std::vector<double> id(static_cast<std::size_t>(dim * dim), 0.0);
  for (int i = 0; i < dim; ++i) id[static_cast<std::size_t>(i * dim + i)] = 1.0;
  m.weights = {id, std::vector<double>(static_cast<std::size_t>(m.dims[2] * dim), 0.0)};
  m.biases = {std::vector<double>(static_cast<std::size_t>(dim), 0.0),
              std::vector<double>(static_cast<std::size_t>(m.dims[2]), 0.0)};
  return m;
}

// machine for class c reads coordinate c-1: score = scale * x[c-1] + bias
SvmBank axis_bank(int dim, const std::vector<int>& classes, double scale, double bias) {
  SvmBank bank;
  bank.dim = static_cast<std::size_t>(dim);
  for (int c : classes) {
    LinearSvm m;
    m.cls = c;
    m.trained = true;
    m.bias = bias;
    m.w.assign(static_cast<std::size_t>(dim), 0.0);
    m.w[static_cast<std::size_t>(c - 1)] = scale;
    bank.machines.push_back(std::move(m));
  }
  return bank;
}

CascadeNode make_node(int level, int group, std::vector<int> classes, int dim,
                      double scale, double bias) {
  CascadeNode n;
  n.tree_level = level;
  n.group = group;
  n.classes = classes;
  n.mlp = identity_mlp(dim, classes);
  n.svm = axis_bank(dim, classes, scale, bias);
  return n;
}

// 4-class two-stage cascade over one-hot-ish inputs; every score is
// hand-computable: stage 0 scores 10*x[c-1]-5, leaves 20*x[c-1]-8
CascadeEnsemble hand_ensemble(double threshold) {
  CascadeEnsemble ens;
  ens.class_ids = {1, 2, 3, 4};
  ens.tree = tree_of({1, 2, 3, 4}, {{{1, 2, 3, 4}}, {{1, 2}, {3, 4}}});
  ens.strategy = {0, 1, 2};
  ens.thresholds = {threshold};
  CascadeStage s0, s1;
  s0.tree_level = 1;
  s0.nodes.push_back(make_node(1, 1, {1, 2, 3, 4}, 4, 10.0, -5.0));
  s1.tree_level = 2;
  s1.nodes.push_back(make_node(2, 1, {1, 2}, 4, 20.0, -8.0));
  s1.nodes.push_back(make_node(2, 2, {3, 4}, 4, 20.0, -8.0));
  ens.stages = {s0, s1};
  validate_ensemble(ens);
  return ens;
}

std::vector<double> one_hot(int dim, int axis) {
  std::vector<double> x(static_cast<std::size_t>(dim), 0.0);
  x[static_cast<std::size_t>(axis)] = 1.0;
  return x;
}

}  // namespace

TEST_CASE("cascade gates open exactly on the max child-class parent score") {
  const CascadeEnsemble ens = hand_ensemble(0.0);

  SECTION("a confident class-1 sample reaches only its own leaf") {
    const CascadeSampleResult r = cascade_score(ens, one_hot(4, 0));
    CHECK(r.evals == std::vector<std::uint32_t>{1, 1});
    CHECK(r.scores[0] == 12.0);  // 20*1 - 8
    CHECK(r.scores[1] == -8.0);
    CHECK(r.scores[2] == kSentinelScore);
    CHECK(r.scores[3] == kSentinelScore);
  }
  SECTION("a boundary gate value passes the >= comparison") {
    // x spreads mass evenly: every stage-0 score is exactly 10*0.5-5 = 0
    const std::vector<double> x(4, 0.5);
    const CascadeSampleResult r = cascade_score(ens, x);
    CHECK(r.evals == std::vector<std::uint32_t>{1, 2});
    for (double s : r.scores) CHECK(s == 2.0);  // 20*0.5 - 8
  }
  SECTION("an infinite threshold rejects everything after stage zero") {
    const CascadeEnsemble closed = hand_ensemble(kInf);
    const CascadeSampleResult r = cascade_score(closed, one_hot(4, 2));
    CHECK(r.evals == std::vector<std::uint32_t>{1, 0});
    for (double s : r.scores) CHECK(s == kSentinelScore);
  }
  SECTION("open gates reproduce the direct leaf evaluation bit-for-bit") {
    const CascadeEnsemble open = hand_ensemble(-kInf);
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> x(4);
      for (auto& v : x) v = rng.normal();
      const CascadeSampleResult r = cascade_score(open, x);
      CHECK(r.evals == std::vector<std::uint32_t>{1, 2});
      for (std::size_t j = 0; j < 2; ++j) {
        const CascadeNode& leaf = open.stages[1].nodes[j];
        const auto direct = svm_scores(leaf.svm, extract_feature_vector(leaf.mlp, x));
        for (std::size_t c = 0; c < leaf.classes.size(); ++c) {
          const std::size_t col = static_cast<std::size_t>(leaf.classes[c] - 1);
          CHECK(r.scores[col] == direct[c]);
        }
      }
    }
  }
}

TEST_CASE("gate_value matches softmax and plain max semantics") {
  const std::vector<double> parent_scores{5.0, -5.0, -5.0, -5.0};
  const std::vector<int> parent_classes{1, 2, 3, 4};
  CHECK(detail::gate_value(parent_scores, parent_classes, {1, 2}, false) == 5.0);
  CHECK(detail::gate_value(parent_scores, parent_classes, {3, 4}, false) == -5.0);

  const auto p = softmax(parent_scores);
  CHECK(detail::gate_value(parent_scores, parent_classes, {1, 2}, true) ==
        Catch::Approx(p[0]).epsilon(1e-15));
  CHECK(detail::gate_value(parent_scores, parent_classes, {3, 4}, true) ==
        Catch::Approx(p[2]).epsilon(1e-15));
  REQUIRE_THROWS_WITH(detail::gate_value(parent_scores, parent_classes, {9}, false),
                      "gate: child class missing from parent");
}

TEST_CASE("softmax gating thresholds on probabilities") {
  CascadeEnsemble ens = hand_ensemble(0.5);
  ens.softmax_gate = true;
  const CascadeSampleResult r = cascade_score(ens, one_hot(4, 0));
  // parent probabilities: p1 ~ 1, p3 ~ 0; only the {1,2} leaf clears 0.5
  CHECK(r.evals == std::vector<std::uint32_t>{1, 1});
  CHECK(r.scores[0] == 12.0);
  CHECK(r.scores[2] == kSentinelScore);
}

TEST_CASE("cascade agrees with a naive recursive tree walk") {
  const std::vector<int> universe{1, 2, 3, 4, 5, 6, 7, 8};
  CascadeEnsemble ens;
  ens.class_ids = universe;
  ens.tree = tree_of(universe, {{{1, 2, 3, 4, 5, 6, 7, 8}},
                                {{1, 2, 3}, {4, 5}, {6, 7, 8}}});
  ens.strategy = {0, 1, 2};
  ens.thresholds = {0.1};

  // random but fixed weights; every machine trained so the sentinel can only
  // mean "rejected"
  Rng rng(77);
  auto random_node = [&](int level, int group, std::vector<int> classes) {
    CascadeNode n;
    n.tree_level = level;
    n.group = group;
    n.classes = classes;
    n.mlp = init_mlp(6, {8}, classes, rng.below(1u << 30));
    n.svm.dim = 8;
    for (int c : classes) {
      LinearSvm m;
      m.cls = c;
      m.trained = true;
      m.bias = rng.uniform(-0.2, 0.2);
      for (int d = 0; d < 8; ++d) m.w.push_back(rng.uniform(-1.0, 1.0));
      n.svm.machines.push_back(std::move(m));
    }
    return n;
  };
  CascadeStage s0, s1;
  s0.tree_level = 1;
  s0.nodes.push_back(random_node(1, 1, universe));
  s1.tree_level = 2;
  s1.nodes.push_back(random_node(2, 1, {1, 2, 3}));
  s1.nodes.push_back(random_node(2, 2, {4, 5}));
  s1.nodes.push_back(random_node(2, 3, {6, 7, 8}));
  ens.stages = {s0, s1};
  validate_ensemble(ens);

  Dataset ds;
  ds.num_classes = 8;
  ds.dim = 6;
  for (int i = 0; i < 200; ++i) {
    Sample s;
    s.id = "n" + std::to_string(i);
    s.label = i % 9;
    s.split = Split::test;
    for (int d = 0; d < 6; ++d) s.features.push_back(rng.normal());
    ds.samples.push_back(std::move(s));
  }

  const CascadeBatchResult batch = cascade_batch(ens, ds, all_indices(ds));
  REQUIRE(batch.scores.size() == 200);
  std::size_t expect_leaf_evals = 0;
  for (std::size_t i = 0; i < 200; ++i) {
    const auto& x = ds.samples[i].features;
    const CascadeNode& root = ens.stages[0].nodes[0];
    const auto parent_scores = svm_scores(root.svm, extract_feature_vector(root.mlp, x));
    std::vector<double> expect(8, kSentinelScore);
    for (const CascadeNode& leaf : ens.stages[1].nodes) {
      double gate = kSentinelScore;
      for (int c : leaf.classes) {
        gate = std::max(gate, parent_scores[static_cast<std::size_t>(c - 1)]);
      }
      if (!(gate >= 0.1)) continue;  // rejected subtree
      ++expect_leaf_evals;
      const auto s = svm_scores(leaf.svm, extract_feature_vector(leaf.mlp, x));
      for (std::size_t c = 0; c < leaf.classes.size(); ++c) {
        expect[static_cast<std::size_t>(leaf.classes[c] - 1)] = s[c];
      }
    }
    REQUIRE(batch.scores[i] == expect);  // bitwise, including sentinels
  }

  SECTION("cost accounting matches the walk") {
    CHECK(batch.cost.samples == 200);
    CHECK(batch.cost.num_models == std::vector<std::size_t>{1, 3});
    CHECK(batch.cost.evals[0] == 200);
    CHECK(batch.cost.evals[1] == expect_leaf_evals);
    CHECK(batch.cost.n_b(0) == 1.0 * 200);
    CHECK(batch.cost.total_evals() == 200 + expect_leaf_evals);
  }
  SECTION("raising the threshold never evaluates more nodes") {
    std::size_t prev = std::numeric_limits<std::size_t>::max();
    for (double t : {-kInf, -1.0, 0.1, 1.0, kInf}) {
      CascadeEnsemble tuned = ens;
      tuned.thresholds = {t};
      const auto r = cascade_batch(tuned, ds, all_indices(ds));
      CHECK(r.cost.evals[1] <= prev);
      prev = r.cost.evals[1];
    }
  }
  SECTION("parallel scoring equals serial scoring") {
    const CascadeBatchResult par = cascade_batch(ens, ds, all_indices(ds), 4);
    CHECK(par.scores == batch.scores);
    CHECK(par.cost.evals == batch.cost.evals);
  }
  SECTION("empty batches are rejected") {
    REQUIRE_THROWS_WITH(cascade_batch(ens, ds, {}), "cascade_batch: empty sample set");
  }
}

TEST_CASE("calibration sets the stage threshold from gate quantiles") {
  const CascadeEnsemble ens = hand_ensemble(0.0);
  Dataset ds;
  ds.num_classes = 4;
  ds.dim = 4;
  auto add_val = [&](int label, std::vector<double> x) {
    Sample s;
    s.id = "v" + std::to_string(ds.samples.size());
    s.label = label;
    s.split = Split::val;
    s.features = std::move(x);
    ds.samples.push_back(std::move(s));
  };
  // class-1 positives with gate values 5, 4, 3 (gate = 10*max(x1,x2) - 5)
  add_val(1, {1.0, 0.0, 0.0, 0.0});
  add_val(1, {0.9, std::sqrt(1.0 - 0.81), 0.0, 0.0});
  add_val(1, {0.8, 0.0, std::sqrt(1.0 - 0.64), 0.0});
  // classes 3 and 4 gate at exactly 5
  add_val(3, {0.0, 0.0, 1.0, 0.0});
  add_val(4, {0.0, 0.0, 0.0, 1.0});

  const IndexList val = all_indices(ds);

  SECTION("full recall keeps every validation positive") {
    const auto t = calibrate_thresholds(ens, ds, val, 1.0);
    REQUIRE(t.size() == 1);
    CHECK(t[0] == Catch::Approx(3.0).margin(1e-7));
    CHECK(t[0] < 3.0);  // nudged below the worst positive's gate
    CascadeEnsemble tuned = ens;
    tuned.thresholds = t;
    const auto r = cascade_batch(tuned, ds, val);
    for (std::size_t i = 0; i < val.size(); ++i) {
      const int label = ds.samples[i].label;
      CHECK(r.scores[i][static_cast<std::size_t>(label - 1)] != kSentinelScore);
    }
  }
  SECTION("partial recall takes the per-node quantile, min over nodes") {
    // need = ceil(2/3 * 3) = 2 of the class-1 gates {5,4,3} -> q = 4
    const auto t = calibrate_thresholds(ens, ds, val, 2.0 / 3.0);
    CHECK(t[0] == Catch::Approx(4.0).margin(1e-7));
    CHECK(t[0] < 4.0);
    CascadeEnsemble tuned = ens;
    tuned.thresholds = t;
    const auto r = cascade_batch(tuned, ds, val);
    CHECK(r.scores[0][0] != kSentinelScore);  // gate 5: kept
    CHECK(r.scores[1][0] != kSentinelScore);  // gate 4: boundary, still kept
    CHECK(r.scores[2][0] == kSentinelScore);  // gate 3: dropped
  }
  SECTION("the input ensemble's thresholds are not mutated") {
    CHECK(ens.thresholds[0] == 0.0);
    calibrate_thresholds(ens, ds, val, 1.0);
    CHECK(ens.thresholds[0] == 0.0);
  }
  SECTION("bad recall targets and uncovered nodes are errors") {
    REQUIRE_THROWS_WITH(calibrate_thresholds(ens, ds, val, 0.0),
                        "calibrate: recall_target must be in (0, 1]");
    REQUIRE_THROWS_AS(calibrate_thresholds(ens, ds, val, 1.5), Error);
    const IndexList only_node1{0, 1, 2};  // no class-3/4 positives
    REQUIRE_THROWS_WITH(calibrate_thresholds(ens, ds, only_node1, 1.0),
                        "calibrate: no validation positives for level 2 group 2");
  }
}

TEST_CASE("ensemble directories round-trip") {
  CascadeEnsemble ens = hand_ensemble(0.375);
  ens.seed = 99;
  const std::string dir = tmp_dir("roundtrip");
  save_ensemble(ens, dir);
  const CascadeEnsemble back = load_ensemble(dir);
  CHECK(back.class_ids == ens.class_ids);
  CHECK(back.strategy == ens.strategy);
  CHECK(back.thresholds == ens.thresholds);
  CHECK(back.softmax_gate == ens.softmax_gate);
  CHECK(back.seed == 99);
  REQUIRE(back.stages.size() == 2);
  for (std::size_t k = 0; k < 2; ++k) {
    REQUIRE(back.stages[k].nodes.size() == ens.stages[k].nodes.size());
    for (std::size_t j = 0; j < back.stages[k].nodes.size(); ++j) {
      const CascadeNode& a = ens.stages[k].nodes[j];
      const CascadeNode& b = back.stages[k].nodes[j];
      CHECK(b.classes == a.classes);
      CHECK(b.mlp.weights == a.mlp.weights);
      CHECK(b.mlp.biases == a.mlp.biases);
      for (std::size_t q = 0; q < a.svm.machines.size(); ++q) {
        CHECK(b.svm.machines[q].w == a.svm.machines[q].w);
        CHECK(b.svm.machines[q].bias == a.svm.machines[q].bias);
      }
    }
  }
  for (std::size_t level = 1; level <= 2; ++level) {
    for (std::size_t j = 0; j < ens.tree.levels[level - 1].groups.size(); ++j) {
      CHECK(back.tree.levels[level - 1].groups[j].classes ==
            ens.tree.levels[level - 1].groups[j].classes);
    }
  }

  SECTION("an infinite threshold survives the text format") {
    CascadeEnsemble open = hand_ensemble(-kInf);
    const std::string d2 = tmp_dir("open_gates");
    save_ensemble(open, d2);
    CHECK(load_ensemble(d2).thresholds[0] == -kInf);
  }
  SECTION("missing directory is an error") {
    REQUIRE_THROWS_AS(load_ensemble(tmp_dir("roundtrip") + "_nope"), Error);
  }
}

TEST_CASE("strategy and ensemble validation reject malformed inputs") {
  CHECK_NOTHROW(validate_strategy({0, 1, 2}, 2));
  CHECK_NOTHROW(validate_strategy({0, 2}, 3));
  REQUIRE_THROWS_AS(validate_strategy({1, 2}, 2), Error);
  REQUIRE_THROWS_AS(validate_strategy({0}, 2), Error);
  REQUIRE_THROWS_AS(validate_strategy({0, 2, 1}, 2), Error);
  REQUIRE_THROWS_AS(validate_strategy({0, 1, 3}, 2), Error);

  CascadeEnsemble ens = hand_ensemble(0.0);
  SECTION("threshold arity") {
    ens.thresholds = {0.0, 1.0};
    REQUIRE_THROWS_AS(validate_ensemble(ens), Error);
  }
  SECTION("stage count must match the strategy") {
    ens.stages.pop_back();
    REQUIRE_THROWS_AS(validate_ensemble(ens), Error);
  }
  SECTION("node classes must match the tree group") {
    ens.stages[1].nodes[0].classes = {1, 3};
    REQUIRE_THROWS_AS(validate_ensemble(ens), Error);
  }
}
