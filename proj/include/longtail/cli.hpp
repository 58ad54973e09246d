#pragma once

#include <filesystem>
#include <iostream>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <CLI11.hpp>

#include "longtail/experiment.hpp"

namespace longtail {

namespace keysets {

inline const std::set<std::string>& common() {
  static const std::set<std::string> k = {"seed", "threads", "deterministic"};
  return k;
}

inline const std::set<std::string>& gen() {
  static const std::set<std::string> k = {
      "gen.classes",          "gen.dim",         "gen.zipf_s",
      "gen.n_total",          "gen.groups",      "gen.within_sigma",
      "gen.between_sigma",    "gen.background_sigma", "gen.background_ratio",
      "gen.split_pretrain",   "gen.split_train", "gen.split_val",
      "gen.split_test"};
  return k;
}

inline const std::set<std::string>& train() {
  static const std::set<std::string> k = {
      "train.lr",          "train.momentum",     "train.weight_decay",
      "train.epochs",      "train.batch_size",   "train.batch_source",
      "train.pos_fraction", "train.init_scale",  "train.hidden"};
  return k;
}

inline const std::set<std::string>& svm() {
  static const std::set<std::string> k = {"svm.lambda", "svm.iterations"};
  return k;
}

inline const std::set<std::string>& hier() {
  static const std::set<std::string> k = {"hier.strategy", "hier.thresholds",
                                          "hier.default_threshold",
                                          "hier.freeze_hidden", "hier.softmax_gate"};
  return k;
}

inline const std::set<std::string>& cluster() {
  static const std::set<std::string> k = {"cluster.method", "cluster.groups",
                                          "cluster.scalar_file",
                                          "cluster.taxonomy_file"};
  return k;
}

inline const std::set<std::string>& experiment() {
  static const std::set<std::string> k = {
      "experiment.family",       "experiment.schemes",   "experiment.ratios",
      "experiment.batch_sources", "experiment.freeze",    "experiment.criteria",
      "experiment.subset_sizes", "experiment.methods",   "experiment.groups",
      "experiment.levels",       "experiment.strategies", "experiment.roles",
      "experiment.recall",       "experiment.seeds",     "experiment.num_seeds"};
  return k;
}

// One vocabulary for every subcommand so a single config file can drive the
// whole pipeline; typos outside it still fail loudly.
inline const std::set<std::string>& all_known() {
  static const std::set<std::string> k = [] {
    std::set<std::string> out;
    for (const auto* s : {&common(), &gen(), &train(), &svm(), &hier(), &cluster(),
                          &experiment()}) {
      out.insert(s->begin(), s->end());
    }
    for (const char* extra : {"data", "truth", "base", "taxonomy", "ensemble", "scores",
                              "split", "calibrate.recall"}) {
      out.insert(extra);
    }
    return out;
  }();
  return k;
}

}  // namespace keysets

namespace detail {

inline std::string require_key(const Config& cfg, const std::string& key,
                               const std::string& flag) {
  if (!cfg.has(key)) throw Error("missing required input '" + key + "' (" + flag + ")");
  return cfg.get_string(key, "");
}

inline IndexList split_for(const Dataset& ds, const std::string& name) {
  if (name == "all") return all_indices(ds);
  if (name == "pretrain") return split_indices(ds, Split::pretrain);
  if (name == "train") return split_indices(ds, Split::train);
  if (name == "val") return split_indices(ds, Split::val);
  if (name == "test") return split_indices(ds, Split::test);
  throw Error("unknown split '" + name + "' (pretrain | train | val | test | all)");
}

inline std::uint64_t cfg_seed(const Config& cfg) {
  const long long s = cfg.get_int("seed", 1);
  if (s < 0) throw Error("seed must be non-negative");
  return static_cast<std::uint64_t>(s);
}

inline int cfg_threads(const Config& cfg) {
  if (cfg.get_bool("deterministic", false)) return 1;
  const long long t = cfg.get_int("threads", 1);
  if (t < 1) throw Error("threads must be >= 1");
  return static_cast<int>(t);
}

inline std::filesystem::path out_path(const std::string& out, const std::string& name) {
  return std::filesystem::path(out) / name;
}

}  // namespace detail

inline int cmd_datagen(const Config& cfg, const std::string& out) {
  cfg.require_known(keysets::all_known());
  GenConfig g = gen_config_from(cfg);
  g.seed = detail::cfg_seed(cfg);
  const SyntheticDataset syn = generate_synthetic(g);
  const Dataset& ds = syn.dataset;
  save_dataset(ds, detail::out_path(out, "dataset.txt").string());
  save_truth(syn.truth, detail::out_path(out, "truth.txt").string());

  Report rep;
  rep.add("samples", ds.size());
  rep.add("classes", ds.num_classes);
  rep.add("dim", ds.dim);
  const LongTailProfile prof = profile(ds);
  rep.add("positives", prof.total_positives);
  rep.add("head_mass_10pct",
          prof.head_mass(std::max<std::size_t>(1, prof.sorted_counts.size() / 10)));
  for (const char* name : {"pretrain", "train", "val", "test"}) {
    rep.add(std::string("split.") + name,
            detail::split_for(ds, name).size());
  }
  rep.add_config_snapshot(cfg);
  rep.write(detail::out_path(out, "datagen_report.txt").string());
  std::cout << "wrote " << detail::out_path(out, "dataset.txt").string() << " ("
            << ds.size() << " samples)\n";
  return 0;
}

inline int cmd_pretrain(const Config& cfg, const std::string& out) {
  cfg.require_known(keysets::all_known());
  const Dataset ds = load_dataset(detail::require_key(cfg, "data", "--data"));
  TrainConfig t = train_config_from(cfg);
  t.seed = detail::cfg_seed(cfg);
  const MlpModel base = pretrain_base(ds, t);
  save_mlp(base, detail::out_path(out, "base_mlp.txt").string());

  Report rep;
  rep.add("pretrain_samples", split_indices(ds, Split::pretrain).size());
  rep.add("epochs", t.epochs);
  {
    std::string dims;
    for (std::size_t i = 0; i < base.dims.size(); ++i) {
      if (i) dims += ",";
      dims += std::to_string(base.dims[i]);
    }
    rep.add("dims", dims);
  }
  rep.add_config_snapshot(cfg);
  rep.write(detail::out_path(out, "pretrain_report.txt").string());
  std::cout << "wrote " << detail::out_path(out, "base_mlp.txt").string() << "\n";
  return 0;
}

inline int cmd_cluster(const Config& cfg, const std::string& out) {
  cfg.require_known(keysets::all_known());
  const std::string method = detail::require_key(cfg, "cluster.method", "--method");
  const int threads = detail::cfg_threads(cfg);

  detail::SeedContext ctx;
  ctx.seed = detail::cfg_seed(cfg);
  ctx.ds = load_dataset(detail::require_key(cfg, "data", "--data"));
  ctx.train_idx = split_indices(ctx.ds, Split::train);
  ctx.val_idx = split_indices(ctx.ds, Split::val);
  ctx.test_idx = split_indices(ctx.ds, Split::test);
  if (method == "visual" || method == "confusion" || method == "accuracy") {
    ctx.base = load_mlp(detail::require_key(cfg, "base", "--base"));
  }

  std::vector<int> level_sizes;
  if (method != "taxonomy-file") {
    if (!cfg.has("cluster.groups")) {
      throw Error("missing required input 'cluster.groups' (--groups)");
    }
    for (auto v : cfg.get_int_list("cluster.groups", {})) {
      level_sizes.push_back(static_cast<int>(v));
    }
  }
  const HierarchyTree tree = detail::method_tree(method, ctx, cfg, level_sizes, threads);
  save_taxonomy(tree, detail::out_path(out, "taxonomy.txt").string());

  Report rep;
  rep.add("method", method);
  rep.add("levels", tree.depth());
  for (std::size_t l = 0; l < tree.levels.size(); ++l) {
    rep.add("level." + std::to_string(l + 1) + ".groups", tree.levels[l].groups.size());
  }
  rep.add_config_snapshot(cfg);
  rep.write(detail::out_path(out, "cluster_report.txt").string());
  std::cout << "wrote " << detail::out_path(out, "taxonomy.txt").string() << "\n";
  return 0;
}

inline int cmd_train_hier(const Config& cfg, const std::string& out) {
  cfg.require_known(keysets::all_known());
  const Dataset ds = load_dataset(detail::require_key(cfg, "data", "--data"));
  const MlpModel base = load_mlp(detail::require_key(cfg, "base", "--base"));
  const HierarchyTree tree =
      load_taxonomy(detail::require_key(cfg, "taxonomy", "--taxonomy"), all_classes(ds));

  std::vector<int> strategy;
  if (cfg.has("hier.strategy")) {
    strategy = detail::parse_int_csv(cfg.get_string("hier.strategy", ""), "strategy");
  } else {
    strategy = detail::full_strategy(tree.depth());
  }
  HierTrainConfig h = hier_config_from(cfg);
  h.threads = detail::cfg_threads(cfg);
  h.seed = detail::cfg_seed(cfg);
  h.train.seed = h.seed;
  const HierTrainResult res = train_hierarchy(ds, tree, strategy, base, h);
  save_ensemble(res.ensemble, detail::out_path(out, "ensemble").string());

  Report rep;
  {
    std::string s;
    for (std::size_t i = 0; i < strategy.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(strategy[i]);
    }
    rep.add("strategy", s);
  }
  for (std::size_t i = 0; i < res.ensemble.thresholds.size(); ++i) {
    rep.add("threshold." + std::to_string(i + 1), res.ensemble.thresholds[i]);
  }
  for (const auto& stage : res.states) {
    for (const auto& st : stage) {
      const std::string key =
          "node." + std::to_string(st.tree_level) + "." + std::to_string(st.group);
      rep.add(key + ".positives", st.positives.size());
      rep.add(key + ".negatives", st.negatives.size());
      rep.add(key + ".mined", st.mined);
      rep.add(key + ".floored", st.floored);
      rep.add(key + ".epochs", st.epochs);
      rep.add(key + ".final_loss", st.final_loss);
    }
  }
  for (std::size_t i = 0; i < res.warnings.size(); ++i) {
    rep.add("warning." + std::to_string(i), res.warnings[i]);
  }
  rep.add_config_snapshot(cfg);
  rep.write(detail::out_path(out, "train_hier_report.txt").string());
  std::cout << "wrote " << detail::out_path(out, "ensemble").string() << "\n";
  return 0;
}

inline int cmd_calibrate(const Config& cfg, const std::string& out) {
  cfg.require_known(keysets::all_known());
  const Dataset ds = load_dataset(detail::require_key(cfg, "data", "--data"));
  CascadeEnsemble ens = load_ensemble(detail::require_key(cfg, "ensemble", "--ensemble"));
  const double recall = cfg.get_double("calibrate.recall", 0.99);
  const IndexList val_idx = split_indices(ds, Split::val);
  const std::vector<double> before = ens.thresholds;
  ens.thresholds =
      calibrate_thresholds(ens, ds, val_idx, recall, detail::cfg_threads(cfg));
  save_ensemble(ens, detail::out_path(out, "ensemble").string());

  Report rep;
  rep.add("recall_target", recall);
  for (std::size_t i = 0; i < ens.thresholds.size(); ++i) {
    rep.add("threshold." + std::to_string(i + 1) + ".before", before[i]);
    rep.add("threshold." + std::to_string(i + 1) + ".after", ens.thresholds[i]);
  }
  rep.add_config_snapshot(cfg);
  rep.write(detail::out_path(out, "calibrate_report.txt").string());
  std::cout << "wrote " << detail::out_path(out, "ensemble").string() << "\n";
  return 0;
}

inline int cmd_infer(const Config& cfg, const std::string& out) {
  cfg.require_known(keysets::all_known());
  const Dataset ds = load_dataset(detail::require_key(cfg, "data", "--data"));
  const CascadeEnsemble ens =
      load_ensemble(detail::require_key(cfg, "ensemble", "--ensemble"));
  const std::string split = cfg.get_string("split", "test");
  const IndexList idx = detail::split_for(ds, split);
  const CascadeBatchResult br = cascade_batch(ens, ds, idx, detail::cfg_threads(cfg));

  std::vector<std::string> ids(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) ids[i] = ds.samples[idx[i]].id;
  save_scores(detail::out_path(out, "scores.txt").string(), ens.class_ids, ids, br.scores);

  Report rep;
  rep.add("split", split);
  rep.add("samples", br.cost.samples);
  for (std::size_t k = 0; k < br.cost.evals.size(); ++k) {
    const std::string key = "stage." + std::to_string(k);
    rep.add(key + ".tree_level", br.cost.tree_levels[k]);
    rep.add(key + ".models", br.cost.num_models[k]);
    rep.add(key + ".evals", br.cost.evals[k]);
    rep.add(key + ".n_b", br.cost.n_b(k));
  }
  rep.add("total_evals", br.cost.total_evals());
  rep.add_config_snapshot(cfg);
  rep.write(detail::out_path(out, "infer_report.txt").string());
  std::cout << "wrote " << detail::out_path(out, "scores.txt").string() << " ("
            << idx.size() << " rows)\n";
  return 0;
}

inline int cmd_eval(const Config& cfg, const std::string& out) {
  cfg.require_known(keysets::all_known());
  const Dataset ds = load_dataset(detail::require_key(cfg, "data", "--data"));
  const ScoreFile sf = load_scores(detail::require_key(cfg, "scores", "--scores"));

  std::unordered_map<std::string, int> label_by_id;
  for (const auto& s : ds.samples) label_by_id[s.id] = s.label;
  std::vector<int> labels(sf.ids.size());
  for (std::size_t i = 0; i < sf.ids.size(); ++i) {
    const auto it = label_by_id.find(sf.ids[i]);
    if (it == label_by_id.end()) {
      throw Error("score file id '" + sf.ids[i] + "' not present in the dataset");
    }
    labels[i] = it->second;
  }
  const MapResult m = mean_ap(sf.ids, labels, sf.rows, sf.class_ids);

  Report rep;
  rep.add("samples", sf.ids.size());
  for (std::size_t i = 0; i < m.class_ids.size(); ++i) {
    rep.add("ap." + std::to_string(m.class_ids[i]), m.per_class[i]);
  }
  rep.add("map", m.map);
  rep.add_config_snapshot(cfg);
  rep.write(detail::out_path(out, "eval_report.txt").string());
  std::cout << "map " << format_metric(m.map) << "\n";
  return 0;
}

inline int cmd_experiment(const Config& cfg, const std::string& out) {
  cfg.require_known(keysets::all_known());
  ExperimentSpec spec;
  spec.family = detail::require_key(cfg, "experiment.family", "--family");
  spec.cfg = cfg;
  spec.threads = detail::cfg_threads(cfg);
  if (cfg.has("experiment.seeds")) {
    for (auto s : cfg.get_int_list("experiment.seeds", {})) {
      if (s < 0) throw Error("experiment.seeds must be non-negative");
      spec.seeds.push_back(static_cast<std::uint64_t>(s));
    }
  } else {
    const std::uint64_t base = detail::cfg_seed(cfg);
    const long long n = cfg.get_int("experiment.num_seeds", 5);
    if (n < 1) throw Error("experiment.num_seeds must be >= 1");
    for (long long i = 0; i < n; ++i) spec.seeds.push_back(base + static_cast<std::uint64_t>(i));
  }

  const ExperimentResult res = run_experiment(spec);
  const std::string csv_path =
      detail::out_path(out, "experiment_" + spec.family + ".csv").string();
  res.csv.write(csv_path);
  res.report.write(detail::out_path(out, "experiment_report.txt").string());
  std::cout << "wrote " << csv_path << " (" << res.rows.size() << " rows)\n";
  for (const auto& note : res.notes) std::cerr << "note: " << note << "\n";
  return 0;
}

// Parses argv (without the program name) and runs one subcommand.
// Exit codes: 0 success, 1 usage error, 2 data/config error.
inline int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"long-tail feature learning and cascaded hierarchical classification"};
  app.require_subcommand(1);

  struct {
    std::string config_path, out = ".";
    std::vector<std::string> sets;
    long long seed = 1;
    long long threads = 1;
    bool deterministic = false;
    std::string data, truth, base, taxonomy, ensemble, scores;
    std::string method, groups, scalar_file, taxonomy_file;
    std::string strategy, thresholds, split, family;
    double recall = 0.99;
  } st;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", st.config_path, "flat key=value config file");
    sub->add_option("--set", st.sets, "override a config entry (key=value, repeatable)");
    sub->add_option("--seed", st.seed, "random seed");
    sub->add_option("--threads", st.threads, "worker threads");
    sub->add_flag("--deterministic", st.deterministic,
                  "single-threaded, bit-reproducible");
    sub->add_option("--out", st.out, "output directory (default .)");
  };

  CLI::App* c_datagen = app.add_subcommand("datagen", "generate a synthetic dataset");
  CLI::App* c_pretrain = app.add_subcommand("pretrain", "train the shared base model");
  CLI::App* c_cluster = app.add_subcommand("cluster", "build a class hierarchy");
  CLI::App* c_train_hier =
      app.add_subcommand("train-hier", "train the cascaded hierarchical ensemble");
  CLI::App* c_calibrate =
      app.add_subcommand("calibrate", "set gate thresholds from validation recall");
  CLI::App* c_infer = app.add_subcommand("infer", "score a split with the cascade");
  CLI::App* c_eval = app.add_subcommand("eval", "per-class AP and mAP from a score file");
  CLI::App* c_experiment = app.add_subcommand("experiment", "run a sweep family");
  for (CLI::App* sub : {c_datagen, c_pretrain, c_cluster, c_train_hier, c_calibrate,
                        c_infer, c_eval, c_experiment}) {
    add_common(sub);
  }

  c_pretrain->add_option("--data", st.data, "dataset file");
  c_cluster->add_option("--data", st.data, "dataset file");
  c_cluster->add_option("--base", st.base, "base model file");
  c_cluster->add_option("--method", st.method,
                        "visual | confusion | accuracy | count | scalar-file | random | "
                        "taxonomy-file");
  c_cluster->add_option("--groups", st.groups, "level sizes, e.g. 1,4");
  c_cluster->add_option("--scalar-file", st.scalar_file, "per-class scalar file");
  c_cluster->add_option("--taxonomy-file", st.taxonomy_file, "existing taxonomy file");
  c_train_hier->add_option("--data", st.data, "dataset file");
  c_train_hier->add_option("--base", st.base, "base model file");
  c_train_hier->add_option("--taxonomy", st.taxonomy, "taxonomy file");
  c_train_hier->add_option("--strategy", st.strategy, "levels to train, e.g. 0,1,2");
  c_train_hier->add_option("--thresholds", st.thresholds, "gate thresholds, e.g. 0,0");
  c_calibrate->add_option("--data", st.data, "dataset file");
  c_calibrate->add_option("--ensemble", st.ensemble, "ensemble directory");
  c_calibrate->add_option("--recall", st.recall, "per-group validation recall target");
  c_infer->add_option("--data", st.data, "dataset file");
  c_infer->add_option("--ensemble", st.ensemble, "ensemble directory");
  c_infer->add_option("--split", st.split, "pretrain | train | val | test | all");
  c_eval->add_option("--data", st.data, "dataset file");
  c_eval->add_option("--scores", st.scores, "score file from infer");
  c_experiment->add_option("--family", st.family,
                           "sampling-sweep | batching | freeze-sweep | class-subset | "
                           "clustering-methods | level-sweep | strategy-sweep | split-role");
  c_experiment->add_option("--data", st.data, "dataset file (default: per-seed synthetic)");
  c_experiment->add_option("--truth", st.truth, "group truth sidecar");

  std::vector<std::string> full;
  full.reserve(args.size() + 1);
  full.push_back("longtail");
  full.insert(full.end(), args.begin(), args.end());
  std::vector<char*> argv;
  argv.reserve(full.size());
  for (auto& s : full) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << std::flush;
    return 1;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    Config cfg;
    if (sub->count("--config")) cfg = Config::from_file(st.config_path);
    for (const auto& kv : st.sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw Error("--set expects key=value, got: " + kv);
      cfg.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }
    auto fold = [&](const std::string& flag, const std::string& key,
                    const std::string& value) {
      const CLI::Option* opt = sub->get_option_no_throw(flag);
      if (opt != nullptr && opt->count() > 0) cfg.set(key, value);
    };
    fold("--seed", "seed", std::to_string(st.seed));
    fold("--threads", "threads", std::to_string(st.threads));
    fold("--deterministic", "deterministic", "1");
    fold("--data", "data", st.data);
    fold("--truth", "truth", st.truth);
    fold("--base", "base", st.base);
    fold("--taxonomy", "taxonomy", st.taxonomy);
    fold("--ensemble", "ensemble", st.ensemble);
    fold("--scores", "scores", st.scores);
    fold("--method", "cluster.method", st.method);
    fold("--groups", "cluster.groups", st.groups);
    fold("--scalar-file", "cluster.scalar_file", st.scalar_file);
    fold("--taxonomy-file", "cluster.taxonomy_file", st.taxonomy_file);
    fold("--strategy", "hier.strategy", st.strategy);
    fold("--thresholds", "hier.thresholds", st.thresholds);
    fold("--recall", "calibrate.recall", format_double(st.recall));
    fold("--split", "split", st.split);
    fold("--family", "experiment.family", st.family);

    std::filesystem::create_directories(st.out);
    const std::string name = sub->get_name();
    if (name == "datagen") return cmd_datagen(cfg, st.out);
    if (name == "pretrain") return cmd_pretrain(cfg, st.out);
    if (name == "cluster") return cmd_cluster(cfg, st.out);
    if (name == "train-hier") return cmd_train_hier(cfg, st.out);
    if (name == "calibrate") return cmd_calibrate(cfg, st.out);
    if (name == "infer") return cmd_infer(cfg, st.out);
    if (name == "eval") return cmd_eval(cfg, st.out);
    if (name == "experiment") return cmd_experiment(cfg, st.out);
    throw Error("unknown subcommand '" + name + "'");
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace longtail
