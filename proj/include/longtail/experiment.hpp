#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "longtail/cascade.hpp"
#include "longtail/clustering.hpp"
#include "longtail/common.hpp"
#include "longtail/config.hpp"
#include "longtail/core.hpp"
#include "longtail/datagen.hpp"
#include "longtail/eval.hpp"
#include "longtail/hier_train.hpp"
#include "longtail/models.hpp"
#include "longtail/parallel.hpp"
#include "longtail/report.hpp"
#include "longtail/sampling.hpp"

namespace longtail {

// ---------------------------------------------------------------------------
// Config-to-struct builders shared by the CLI and the experiment runner.
// ---------------------------------------------------------------------------

inline GenConfig gen_config_from(const Config& cfg) {
  GenConfig g;
  g.num_classes = static_cast<int>(cfg.get_int("gen.classes", g.num_classes));
  g.dim = static_cast<int>(cfg.get_int("gen.dim", g.dim));
  g.zipf_s = cfg.get_double("gen.zipf_s", g.zipf_s);
  g.n_total = cfg.get_int("gen.n_total", g.n_total);
  g.groups = static_cast<int>(cfg.get_int("gen.groups", g.groups));
  g.within_sigma = cfg.get_double("gen.within_sigma", g.within_sigma);
  g.between_sigma = cfg.get_double("gen.between_sigma", g.between_sigma);
  g.background_sigma = cfg.get_double("gen.background_sigma", g.background_sigma);
  g.background_ratio = cfg.get_double("gen.background_ratio", g.background_ratio);
  g.split_pretrain = cfg.get_double("gen.split_pretrain", g.split_pretrain);
  g.split_train = cfg.get_double("gen.split_train", g.split_train);
  g.split_val = cfg.get_double("gen.split_val", g.split_val);
  g.split_test = cfg.get_double("gen.split_test", g.split_test);
  return g;
}

inline BatchSource parse_batch_source(const std::string& s) {
  if (s == "shuffle") return BatchSource::shuffle;
  if (s == "class-uniform") return BatchSource::class_uniform;
  throw Error("unknown batch source '" + s + "' (shuffle | class-uniform)");
}

inline TrainConfig train_config_from(const Config& cfg) {
  TrainConfig t;
  t.learning_rate = cfg.get_double("train.lr", t.learning_rate);
  t.momentum = cfg.get_double("train.momentum", t.momentum);
  t.weight_decay = cfg.get_double("train.weight_decay", t.weight_decay);
  t.epochs = static_cast<int>(cfg.get_int("train.epochs", t.epochs));
  t.batch_size = static_cast<int>(cfg.get_int("train.batch_size", t.batch_size));
  t.batch_source = parse_batch_source(cfg.get_string("train.batch_source", "shuffle"));
  t.pos_fraction = cfg.get_double("train.pos_fraction", t.pos_fraction);
  t.init_scale = cfg.get_double("train.init_scale", t.init_scale);
  if (cfg.has("train.hidden")) {
    t.hidden_dims.clear();
    for (auto h : cfg.get_int_list("train.hidden", {})) {
      t.hidden_dims.push_back(static_cast<int>(h));
    }
  }
  return t;
}

inline SvmConfig svm_config_from(const Config& cfg) {
  SvmConfig s;
  s.lambda = cfg.get_double("svm.lambda", s.lambda);
  s.iterations = static_cast<int>(cfg.get_int("svm.iterations", s.iterations));
  return s;
}

inline HierTrainConfig hier_config_from(const Config& cfg) {
  HierTrainConfig h;
  h.train = train_config_from(cfg);
  h.svm = svm_config_from(cfg);
  if (cfg.has("hier.thresholds")) h.thresholds = cfg.get_double_list("hier.thresholds", {});
  h.default_threshold = cfg.get_double("hier.default_threshold", h.default_threshold);
  h.freeze_hidden = static_cast<int>(cfg.get_int("hier.freeze_hidden", h.freeze_hidden));
  h.softmax_gate = cfg.get_bool("hier.softmax_gate", h.softmax_gate);
  return h;
}

// ---------------------------------------------------------------------------
// Pipeline pieces: flat finetuning and SVM-based evaluation.
// ---------------------------------------------------------------------------

struct FlatRun {
  MlpModel mlp;
  SvmBank svm;
};

inline FlatRun finetune_flat(const Dataset& ds, const IndexList& train_subset,
                             const MlpModel& base, const std::vector<int>& class_set,
                             const TrainConfig& tcfg, const SvmConfig& scfg,
                             const IndexList& svm_indices,
                             const std::vector<int>& svm_classes, int freeze_hidden,
                             int threads) {
  FlatRun run;
  run.mlp = spawn_child(base, class_set, tcfg.seed, tcfg.init_scale);
  const int hidden_layers = static_cast<int>(run.mlp.num_layers()) - 1;
  if (freeze_hidden < 0 || freeze_hidden > hidden_layers) {
    throw Error("freeze_hidden out of range [0, " + std::to_string(hidden_layers) + "]");
  }
  for (int h = 0; h < hidden_layers; ++h) {
    run.mlp.frozen[static_cast<std::size_t>(h)] = h < freeze_hidden ? 1 : 0;
  }
  if (tcfg.epochs > 0) train_mlp(run.mlp, ds, train_subset, tcfg);
  const FeatureMatrix fm = extract_features(run.mlp, ds, svm_indices, true, threads);
  run.svm = train_ovr_svm(fm, svm_classes, scfg, threads);
  return run;
}

inline MapResult eval_svm_map(const Dataset& ds, const IndexList& eval_idx,
                              const MlpModel& mlp, const SvmBank& svm, int threads) {
  const FeatureMatrix fm = extract_features(mlp, ds, eval_idx, true, threads);
  std::vector<std::vector<double>> rows(fm.size());
  parallel_for(fm.size(), threads, [&](std::size_t i) {
    rows[i] = svm_scores(svm, fm.rows[i]);
  });
  return mean_ap(fm.ids, fm.labels, rows, svm.class_set());
}

inline MapResult eval_cascade_map(const Dataset& ds, const IndexList& eval_idx,
                                  const CascadeEnsemble& ens, int threads,
                                  CostStats* cost = nullptr) {
  const CascadeBatchResult br = cascade_batch(ens, ds, eval_idx, threads);
  std::vector<std::string> ids(eval_idx.size());
  std::vector<int> labels(eval_idx.size());
  for (std::size_t i = 0; i < eval_idx.size(); ++i) {
    ids[i] = ds.samples[eval_idx[i]].id;
    labels[i] = ds.samples[eval_idx[i]].label;
  }
  if (cost != nullptr) *cost = br.cost;
  return mean_ap(ids, labels, br.scores, ens.class_ids);
}

inline CascadeEnsemble with_open_gates(CascadeEnsemble ens) {
  for (auto& t : ens.thresholds) t = -std::numeric_limits<double>::infinity();
  return ens;
}

// bottom half of classes by train-split frequency (ties toward small ids)
inline std::vector<int> tail_half_classes(const Dataset& ds, const IndexList& train_idx) {
  const auto counts = class_counts(ds, train_idx);
  std::vector<std::pair<std::size_t, int>> order;
  for (int c = 1; c <= ds.num_classes; ++c) {
    const auto it = counts.find(c);
    order.push_back({it == counts.end() ? 0 : it->second, c});
  }
  std::sort(order.begin(), order.end());
  std::vector<int> tail;
  const std::size_t half = std::max<std::size_t>(1, order.size() / 2);
  for (std::size_t i = 0; i < half; ++i) tail.push_back(order[i].second);
  std::sort(tail.begin(), tail.end());
  return tail;
}

// ---------------------------------------------------------------------------
// Sweep runner: one row per grid point, metric values collected across seeds
// and reported as mean/min/max. A failing grid point is recorded and the
// sweep continues.
// ---------------------------------------------------------------------------

struct ExperimentSpec {
  std::string family;
  Config cfg;
  std::vector<std::uint64_t> seeds;
  int threads = 1;
};

struct SweepRow {
  std::vector<std::pair<std::string, std::string>> condition;
  std::vector<std::string> metric_names;
  std::map<std::string, std::vector<double>> metrics;
  std::vector<std::string> errors;

  void put(const std::string& name, double value) {
    if (!metrics.count(name)) metric_names.push_back(name);
    metrics[name].push_back(value);
  }
};

struct ExperimentResult {
  std::string family;
  std::vector<SweepRow> rows;
  std::vector<std::string> notes;
  Csv csv;
  Report report;
};

namespace detail {

struct SeedContext {
  std::uint64_t seed = 0;
  Dataset ds;
  SyntheticTruth truth;
  bool has_truth = false;
  IndexList train_idx, val_idx, test_idx;
  MlpModel base;
};

inline SeedContext make_seed_context(const Config& cfg, std::uint64_t seed,
                                     bool with_base) {
  SeedContext ctx;
  ctx.seed = seed;
  if (cfg.has("data")) {
    ctx.ds = load_dataset(cfg.get_string("data", ""));
    if (cfg.has("truth")) {
      ctx.truth = load_truth(cfg.get_string("truth", ""), ctx.ds.num_classes);
      ctx.has_truth = true;
    }
  } else {
    GenConfig g = gen_config_from(cfg);
    g.seed = seed;
    SyntheticDataset syn = generate_synthetic(g);
    ctx.ds = std::move(syn.dataset);
    ctx.truth = std::move(syn.truth);
    ctx.has_truth = true;
  }
  ctx.train_idx = split_indices(ctx.ds, Split::train);
  ctx.val_idx = split_indices(ctx.ds, Split::val);
  ctx.test_idx = split_indices(ctx.ds, Split::test);
  if (with_base) {
    TrainConfig tcfg = train_config_from(cfg);
    tcfg.seed = seed;
    ctx.base = pretrain_base(ctx.ds, tcfg);
  }
  return ctx;
}

inline std::vector<std::string> string_list(const Config& cfg, const std::string& key,
                                            const std::vector<std::string>& dflt,
                                            char sep = ',') {
  if (!cfg.has(key)) return dflt;
  std::vector<std::string> out;
  for (auto& tok : split_on(cfg.get_string(key, ""), sep)) {
    const std::string t = trim(tok);
    if (!t.empty()) out.push_back(t);
  }
  if (out.empty()) throw Error("config " + key + ": empty list");
  return out;
}

inline std::vector<int> parse_int_csv(const std::string& s, const std::string& what) {
  std::vector<int> out;
  for (auto& tok : split_on(s, ',')) {
    out.push_back(static_cast<int>(parse_int(trim(tok), what)));
  }
  if (out.empty()) throw Error(what + ": empty list");
  return out;
}

// planted-group recovery: does some tree level equal the truth partition?
inline bool recovers_truth(const HierarchyTree& tree, const SyntheticTruth& truth) {
  std::map<int, std::vector<int>> planted;
  for (std::size_t c = 1; c < truth.class_group.size(); ++c) {  // slot 0 is background
    planted[truth.class_group[c]].push_back(static_cast<int>(c));
  }
  std::set<std::vector<int>> want;
  for (auto& [g, classes] : planted) {
    auto cs = classes;
    std::sort(cs.begin(), cs.end());
    want.insert(cs);
  }
  for (const auto& level : tree.levels) {
    if (level.groups.size() != want.size()) continue;
    std::set<std::vector<int>> got;
    for (const auto& g : level.groups) got.insert(g.classes);
    if (got == want) return true;
  }
  return false;
}

inline SimilarityMatrix method_similarity(const std::string& method, const SeedContext& ctx,
                                          const Config& cfg, int threads) {
  const std::vector<int> classes = all_classes(ctx.ds);
  if (method == "visual") {
    const IndexList pos = positive_indices(ctx.ds, ctx.train_idx);
    const FeatureMatrix fm = extract_features(ctx.base, ctx.ds, pos, true, threads);
    return visual_similarity(fm, classes);
  }
  if (method == "confusion") {
    return confusion_similarity(confusion_counts(ctx.base, ctx.ds, ctx.val_idx));
  }
  if (method == "accuracy") {
    const auto cc = confusion_counts(ctx.base, ctx.ds, ctx.val_idx);
    const auto acc = per_class_accuracy(cc);
    std::map<int, double> vals;
    for (std::size_t i = 0; i < cc.class_ids.size(); ++i) vals[cc.class_ids[i]] = acc[i];
    return scalar_similarity(classes, vals);
  }
  if (method == "count") {
    const auto counts = class_counts(ctx.ds, ctx.train_idx);
    std::map<int, double> vals;
    for (int c : classes) {
      const auto it = counts.find(c);
      vals[c] = it == counts.end() ? 0.0 : static_cast<double>(it->second);
    }
    return scalar_similarity(classes, vals);
  }
  if (method == "scalar-file") {
    return scalar_similarity(classes,
                             load_class_scalars(cfg.get_string("cluster.scalar_file", "")));
  }
  throw Error("unknown clustering method '" + method + "'");
}

inline HierarchyTree method_tree(const std::string& method, const SeedContext& ctx,
                                 const Config& cfg, const std::vector<int>& level_sizes,
                                 int threads) {
  if (method == "random") {
    return build_hierarchy_random(all_classes(ctx.ds), level_sizes, ctx.seed);
  }
  if (method == "taxonomy-file") {
    return load_taxonomy(cfg.get_string("cluster.taxonomy_file", ""), all_classes(ctx.ds));
  }
  return build_hierarchy_similarity(method_similarity(method, ctx, cfg, threads),
                                    level_sizes);
}

inline std::vector<int> default_level_sizes(const Config& cfg) {
  if (cfg.has("experiment.groups")) {
    std::vector<int> out;
    for (auto v : cfg.get_int_list("experiment.groups", {})) {
      out.push_back(static_cast<int>(v));
    }
    return out;
  }
  return {1, static_cast<int>(cfg.get_int("gen.groups", 3))};
}

inline std::vector<int> full_strategy(std::size_t depth) {
  std::vector<int> s(depth + 1);
  std::iota(s.begin(), s.end(), 0);
  return s;
}

}  // namespace detail

inline ExperimentResult run_experiment(const ExperimentSpec& spec) {
  const Config& cfg = spec.cfg;
  const int threads = spec.threads;
  if (spec.seeds.empty()) throw Error("experiment: no seeds");
  ExperimentResult res;
  res.family = spec.family;

  // grid setup happens once so every seed sees identical rows
  struct Point {
    std::vector<std::pair<std::string, std::string>> cond;
  };
  std::vector<Point> points;
  const TrainConfig base_tcfg = train_config_from(cfg);
  const SvmConfig scfg = svm_config_from(cfg);
  const std::vector<int> level_sizes = detail::default_level_sizes(cfg);

  std::vector<std::string> schemes, sources, criteria, methods, level_grid, strategies,
      roles;
  std::vector<double> ratios;
  std::vector<int> freeze_grid;
  std::vector<long long> subset_sizes;
  double recall = cfg.get_double("experiment.recall", 0.99);

  if (spec.family == "sampling-sweep") {
    schemes = detail::string_list(cfg, "experiment.schemes",
                                  {"rand-pos", "rand-all", "pseudo-uniform"});
    ratios = cfg.get_double_list("experiment.ratios", {0.5, 0.25, 0.125, 0.0625, 0.03125});
    for (const auto& s : schemes) {
      for (double r : ratios) {
        points.push_back({{{"scheme", s}, {"r", format_metric(r)}}});
      }
    }
  } else if (spec.family == "batching") {
    sources = detail::string_list(cfg, "experiment.batch_sources",
                                  {"shuffle", "class-uniform"});
    for (const auto& s : sources) points.push_back({{{"batch_source", s}}});
  } else if (spec.family == "freeze-sweep") {
    if (cfg.has("experiment.freeze")) {
      for (auto v : cfg.get_int_list("experiment.freeze", {})) {
        freeze_grid.push_back(static_cast<int>(v));
      }
    } else {
      for (int k = 0; k <= static_cast<int>(base_tcfg.hidden_dims.size()); ++k) {
        freeze_grid.push_back(k);
      }
    }
    for (int k : freeze_grid) {
      points.push_back({{{"frozen_hidden", std::to_string(k)}}});
    }
  } else if (spec.family == "class-subset") {
    criteria = detail::string_list(cfg, "experiment.criteria", {"count-top", "count-bottom"});
    const int c = static_cast<int>(cfg.get_int("gen.classes", 12));
    subset_sizes = cfg.get_int_list(
        "experiment.subset_sizes",
        {std::max<long long>(1, c / 3), std::max<long long>(1, (2 * c) / 3), c});
    for (const auto& crit : criteria) {
      for (auto k : subset_sizes) {
        points.push_back({{{"criterion", crit}, {"k", std::to_string(k)}}});
      }
    }
  } else if (spec.family == "clustering-methods") {
    methods = detail::string_list(cfg, "experiment.methods",
                                  {"visual", "confusion", "accuracy", "count", "random"});
    for (const auto& m : methods) points.push_back({{{"method", m}}});
  } else if (spec.family == "level-sweep") {
    // default grid: L = 1..4 as nested prefixes of {1, 4, 8, 16}, clipped to C
    std::vector<std::string> dflt;
    const int c = static_cast<int>(cfg.get_int("gen.classes", 12));
    std::string nested;
    int prev = 0;
    for (int size : {1, 4, 8, 16}) {
      const int j = std::min(size, c);
      if (j <= prev) break;
      nested += (nested.empty() ? "" : ",") + std::to_string(j);
      dflt.push_back(nested);
      prev = j;
    }
    level_grid = detail::string_list(cfg, "experiment.levels", dflt, '|');
    for (const auto& g : level_grid) points.push_back({{{"levels", g}}});
  } else if (spec.family == "strategy-sweep") {
    strategies = detail::string_list(cfg, "experiment.strategies", {"0,1", "0,2", "0,1,2"},
                                     '|');
    for (const auto& s : strategies) points.push_back({{{"strategy", s}}});
  } else if (spec.family == "split-role") {
    roles = detail::string_list(cfg, "experiment.roles",
                                {"pretrain+train", "train+train", "none+train"});
    for (const auto& r : roles) points.push_back({{{"role", r}}});
  } else {
    throw Error("unknown experiment family '" + spec.family + "'");
  }

  res.rows.resize(points.size());
  for (std::size_t p = 0; p < points.size(); ++p) res.rows[p].condition = points[p].cond;

  const bool needs_base = spec.family != "split-role";
  for (std::uint64_t seed : spec.seeds) {
    detail::SeedContext ctx;
    try {
      ctx = detail::make_seed_context(cfg, seed, needs_base);
    } catch (const Error& e) {
      const std::string msg = "seed " + std::to_string(seed) + ": " + e.what();
      for (auto& row : res.rows) row.errors.push_back(msg);
      continue;
    }
    const std::vector<int> classes = all_classes(ctx.ds);
    const std::vector<int> tail = tail_half_classes(ctx.ds, ctx.train_idx);

    for (std::size_t p = 0; p < points.size(); ++p) {
      SweepRow& row = res.rows[p];
      TrainConfig tcfg = base_tcfg;
      tcfg.seed = seed_mix(seed, 0x677269, p);
      try {
        if (spec.family == "sampling-sweep") {
          const std::string& scheme = row.condition[0].second;
          const double r = ratios[p % ratios.size()];
          SampleSubset sub;
          if (scheme == "rand-pos") {
            sub = rand_pos(ctx.ds, ctx.train_idx, r, tcfg.seed);
          } else if (scheme == "rand-all") {
            sub = rand_all(ctx.ds, ctx.train_idx, r, tcfg.seed);
          } else if (scheme == "pseudo-uniform") {
            const auto counts = class_counts(ctx.ds, ctx.train_idx);
            const long long nmax = nmax_for_ratio(counts, r);
            sub = pseudo_uniform(ctx.ds, ctx.train_idx, nmax, tcfg.seed);
          } else {
            throw Error("unknown sampling scheme '" + scheme + "'");
          }
          const FlatRun run = finetune_flat(ctx.ds, sub.kept, ctx.base, classes, tcfg,
                                            scfg, sub.kept, classes, 0, threads);
          const MapResult m = eval_svm_map(ctx.ds, ctx.test_idx, run.mlp, run.svm, threads);
          row.put("map", m.map);
          row.put("tail_map", mean_ap_over(m, tail));
          row.put("realized_r", sub.realized_ratio);
        } else if (spec.family == "batching") {
          tcfg.batch_source = parse_batch_source(row.condition[0].second);
          const FlatRun run = finetune_flat(ctx.ds, ctx.train_idx, ctx.base, classes, tcfg,
                                            scfg, ctx.train_idx, classes, 0, threads);
          const MapResult m = eval_svm_map(ctx.ds, ctx.test_idx, run.mlp, run.svm, threads);
          row.put("map", m.map);
          row.put("tail_map", mean_ap_over(m, tail));
        } else if (spec.family == "freeze-sweep") {
          const int k = freeze_grid[p];
          const FlatRun run = finetune_flat(ctx.ds, ctx.train_idx, ctx.base, classes, tcfg,
                                            scfg, ctx.train_idx, classes, k, threads);
          const MapResult m = eval_svm_map(ctx.ds, ctx.test_idx, run.mlp, run.svm, threads);
          row.put("map", m.map);
        } else if (spec.family == "class-subset") {
          const std::string& crit = row.condition[0].second;
          const auto k = static_cast<std::size_t>(
              parse_int(row.condition[1].second, "subset size"));
          if (k < 1 || k > classes.size()) throw Error("subset size out of range");
          std::vector<std::pair<double, int>> order;
          if (crit == "count-top" || crit == "count-bottom") {
            const auto counts = class_counts(ctx.ds, ctx.train_idx);
            for (int c : classes) {
              const auto it = counts.find(c);
              order.push_back(
                  {it == counts.end() ? 0.0 : static_cast<double>(it->second), c});
            }
          } else if (crit == "acc-top" || crit == "acc-bottom") {
            const auto cc = confusion_counts(ctx.base, ctx.ds, ctx.train_idx);
            const auto acc = per_class_accuracy(cc);
            for (std::size_t i = 0; i < cc.class_ids.size(); ++i) {
              order.push_back({acc[i], cc.class_ids[i]});
            }
          } else {
            throw Error("unknown subset criterion '" + crit + "'");
          }
          std::sort(order.begin(), order.end());
          std::vector<int> sel;
          if (crit.size() > 4 && crit.substr(crit.size() - 4) == "-top") {
            for (std::size_t i = order.size() - k; i < order.size(); ++i) {
              sel.push_back(order[i].second);
            }
          } else {
            for (std::size_t i = 0; i < k; ++i) sel.push_back(order[i].second);
          }
          std::sort(sel.begin(), sel.end());
          IndexList subset;
          for (auto i : ctx.train_idx) {
            const int label = ctx.ds.samples[i].label;
            if (label == 0 || std::binary_search(sel.begin(), sel.end(), label)) {
              subset.push_back(i);
            }
          }
          const FlatRun run = finetune_flat(ctx.ds, subset, ctx.base, sel, tcfg, scfg,
                                            ctx.train_idx, classes, 0, threads);
          const MapResult m = eval_svm_map(ctx.ds, ctx.test_idx, run.mlp, run.svm, threads);
          row.put("map", m.map);
        } else if (spec.family == "clustering-methods") {
          const std::string& method = row.condition[0].second;
          const HierarchyTree tree =
              detail::method_tree(method, ctx, cfg, level_sizes, threads);
          HierTrainConfig hcfg = hier_config_from(cfg);
          hcfg.threads = threads;
          hcfg.seed = seed;
          const HierTrainResult hr =
              train_hierarchy(ctx.ds, tree, detail::full_strategy(tree.depth()), ctx.base,
                              hcfg);
          const MapResult m = eval_cascade_map(ctx.ds, ctx.test_idx,
                                               with_open_gates(hr.ensemble), threads);
          row.put("map", m.map);
          if (ctx.has_truth) {
            row.put("recovered", detail::recovers_truth(tree, ctx.truth) ? 1.0 : 0.0);
          }
        } else if (spec.family == "level-sweep") {
          const std::vector<int> sizes =
              detail::parse_int_csv(row.condition[0].second, "level sizes");
          HierarchyTree tree;
          if (sizes.size() == 1 && sizes[0] == 1) {
            tree.class_ids = classes;
            HierarchyLevel lvl;
            HierarchyGroup g;
            g.classes = classes;
            lvl.groups.push_back(g);
            tree.levels.push_back(lvl);
          } else {
            tree = detail::method_tree("visual", ctx, cfg, sizes, threads);
          }
          HierTrainConfig hcfg = hier_config_from(cfg);
          hcfg.threads = threads;
          hcfg.seed = seed;
          HierTrainResult hr = train_hierarchy(
              ctx.ds, tree, detail::full_strategy(tree.depth()), ctx.base, hcfg);
          hr.ensemble.thresholds =
              calibrate_thresholds(hr.ensemble, ctx.ds, ctx.val_idx, recall, threads);
          CostStats cost;
          const MapResult m =
              eval_cascade_map(ctx.ds, ctx.test_idx, hr.ensemble, threads, &cost);
          row.put("map", m.map);
          row.put("total_evals", static_cast<double>(cost.total_evals()));
          row.put("nb_last", cost.n_b(cost.evals.size() - 1));
        } else if (spec.family == "strategy-sweep") {
          const std::vector<int> strat =
              detail::parse_int_csv(row.condition[0].second, "strategy");
          const HierarchyTree tree =
              detail::method_tree("visual", ctx, cfg, level_sizes, threads);
          HierTrainConfig hcfg = hier_config_from(cfg);
          hcfg.threads = threads;
          hcfg.seed = seed;
          const HierTrainResult hr = train_hierarchy(ctx.ds, tree, strat, ctx.base, hcfg);
          const MapResult m = eval_cascade_map(ctx.ds, ctx.test_idx,
                                               with_open_gates(hr.ensemble), threads);
          row.put("map", m.map);
        } else if (spec.family == "split-role") {
          const std::string& role = row.condition[0].second;
          TrainConfig pcfg = base_tcfg;
          pcfg.seed = seed;
          MlpModel base;
          if (role == "pretrain+train") {
            base = pretrain_base(ctx.ds, pcfg);
          } else if (role == "train+train") {
            base = init_mlp(static_cast<int>(ctx.ds.dim), pcfg.hidden_dims, classes,
                            pcfg.seed, pcfg.init_scale);
            train_mlp(base, ctx.ds, ctx.train_idx, pcfg);
          } else if (role == "none+train") {
            base = init_mlp(static_cast<int>(ctx.ds.dim), pcfg.hidden_dims, classes,
                            pcfg.seed, pcfg.init_scale);
          } else {
            throw Error("unknown split role '" + role + "'");
          }
          const FlatRun run = finetune_flat(ctx.ds, ctx.train_idx, base, classes, tcfg,
                                            scfg, ctx.train_idx, classes, 0, threads);
          const MapResult m = eval_svm_map(ctx.ds, ctx.test_idx, run.mlp, run.svm, threads);
          row.put("map", m.map);
        }
      } catch (const Error& e) {
        row.errors.push_back("seed " + std::to_string(seed) + ": " + e.what());
      }
    }
  }

  // assemble CSV + report
  std::vector<std::string> header;
  for (const auto& [k, v] : res.rows.front().condition) header.push_back(k);
  header.push_back("seeds_ok");
  std::vector<std::string> metric_names;
  for (const auto& row : res.rows) {
    for (const auto& name : row.metric_names) {
      if (std::find(metric_names.begin(), metric_names.end(), name) == metric_names.end()) {
        metric_names.push_back(name);
      }
    }
  }
  for (const auto& name : metric_names) {
    header.push_back(name + "_mean");
    header.push_back(name + "_min");
    header.push_back(name + "_max");
  }
  res.csv.header = header;
  for (const auto& row : res.rows) {
    std::vector<std::string> cells;
    for (const auto& [k, v] : row.condition) cells.push_back(v);
    const std::size_t n_ok =
        row.metrics.empty() ? 0 : row.metrics.at(row.metric_names.front()).size();
    cells.push_back(std::to_string(n_ok));
    for (const auto& name : metric_names) {
      const auto it = row.metrics.find(name);
      if (it == row.metrics.end() || it->second.empty()) {
        cells.push_back("");
        cells.push_back("");
        cells.push_back("");
        continue;
      }
      double sum = 0.0, lo = it->second.front(), hi = it->second.front();
      for (double v : it->second) {
        sum += v;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      cells.push_back(format_metric(sum / static_cast<double>(it->second.size())));
      cells.push_back(format_metric(lo));
      cells.push_back(format_metric(hi));
    }
    res.csv.rows.push_back(cells);
  }

  res.report.add("family", spec.family);
  {
    std::string s;
    for (std::size_t i = 0; i < spec.seeds.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(spec.seeds[i]);
    }
    res.report.add("seeds", s);
  }
  res.report.add("grid_points", res.rows.size());
  for (std::size_t p = 0; p < res.rows.size(); ++p) {
    std::string label = "row." + std::to_string(p);
    std::string cond;
    for (const auto& [k, v] : res.rows[p].condition) {
      if (!cond.empty()) cond += " ";
      cond += k + "=" + v;
    }
    res.report.add(label + ".condition", cond);
    for (const auto& name : res.rows[p].metric_names) {
      const auto& vals = res.rows[p].metrics.at(name);
      double sum = 0.0;
      for (double v : vals) sum += v;
      res.report.add(label + "." + name + "_mean",
                     vals.empty() ? 0.0 : sum / static_cast<double>(vals.size()));
    }
    for (const auto& err : res.rows[p].errors) {
      res.notes.push_back("row " + std::to_string(p) + " (" + cond + "): " + err);
    }
  }
  for (std::size_t i = 0; i < res.notes.size(); ++i) {
    res.report.add("note." + std::to_string(i), res.notes[i]);
  }
  res.report.add_config_snapshot(cfg);
  return res;
}

}  // namespace longtail
