#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "longtail/clustering.hpp"
#include "longtail/common.hpp"
#include "longtail/core.hpp"
#include "longtail/models.hpp"
#include "longtail/parallel.hpp"

namespace longtail {

// ---------------------------------------------------------------------------
// Threshold-gated inference over the trained hierarchy. The ensemble holds
// one (MLP, SVM bank) pair per trained tree node, organized into stages: one
// stage per trained level, in path order. Stage 0 is evaluated for every
// sample; a deeper node runs only when its parent ran and the parent's scores
// clear the gate max_{c in node} score_c >= T_l, where T_l is the threshold
// of the tree level just above the node. Final per-class scores come from the
// deepest stage; classes whose node never ran score the sentinel.
// ---------------------------------------------------------------------------

struct CascadeNode {
  int tree_level = 0;  // 1-based tree level
  int group = 0;       // 1-based group index within the level
  std::vector<int> classes;
  MlpModel mlp;
  SvmBank svm;
};

struct CascadeStage {
  int tree_level = 0;
  std::vector<CascadeNode> nodes;
};

struct CascadeEnsemble {
  std::vector<int> class_ids;      // sorted universe
  HierarchyTree tree;              // full taxonomy, trained levels or not
  std::vector<int> strategy;       // [0, l1, l2, ...]; 0 is the pretrained base
  std::vector<double> thresholds;  // thresholds[l-1] = T_l for tree level l, size depth-1
  bool softmax_gate = false;
  std::uint64_t seed = 0;
  std::vector<CascadeStage> stages;  // one per strategy level > 0, ascending

  // threshold gating entry into stage k (>= 1): T_{level(k) - 1}
  double stage_threshold(std::size_t k) const {
    return thresholds[static_cast<std::size_t>(stages[k].tree_level) - 2];
  }
};

inline void validate_strategy(const std::vector<int>& strategy, std::size_t depth) {
  if (strategy.size() < 2 || strategy[0] != 0) {
    throw Error("strategy: must start at 0 and visit at least one level");
  }
  for (std::size_t i = 1; i < strategy.size(); ++i) {
    if (strategy[i] <= strategy[i - 1]) {
      throw Error("strategy: levels must be strictly increasing");
    }
    if (strategy[i] < 1 || static_cast<std::size_t>(strategy[i]) > depth) {
      throw Error("strategy: level " + std::to_string(strategy[i]) +
                  " not present in the tree");
    }
  }
}

inline void validate_ensemble(const CascadeEnsemble& ens) {
  validate_tree(ens.tree);
  if (ens.class_ids != ens.tree.class_ids) {
    throw Error("ensemble: class universe does not match the tree");
  }
  validate_strategy(ens.strategy, ens.tree.depth());
  if (ens.thresholds.size() + 1 != ens.tree.depth()) {
    throw Error("ensemble: need one threshold per tree level 1..L-1");
  }
  if (ens.stages.size() + 1 != ens.strategy.size()) {
    throw Error("ensemble: stage count does not match the strategy");
  }
  int input_dim = -1;
  for (std::size_t k = 0; k < ens.stages.size(); ++k) {
    const auto& stage = ens.stages[k];
    if (stage.tree_level != ens.strategy[k + 1]) {
      throw Error("ensemble: stage levels out of order");
    }
    const auto& level = ens.tree.levels[static_cast<std::size_t>(stage.tree_level) - 1];
    if (stage.nodes.size() != level.groups.size()) {
      throw Error("ensemble: node count mismatch at level " +
                  std::to_string(stage.tree_level));
    }
    for (std::size_t j = 0; j < stage.nodes.size(); ++j) {
      const auto& node = stage.nodes[j];
      if (node.tree_level != stage.tree_level || node.group != static_cast<int>(j) + 1) {
        throw Error("ensemble: node indices inconsistent");
      }
      if (node.classes != level.groups[j].classes) {
        throw Error("ensemble: node class set does not match the tree group");
      }
      if (node.mlp.class_set != node.classes) {
        throw Error("ensemble: node model class set mismatch");
      }
      if (node.svm.class_set() != node.classes) {
        throw Error("ensemble: node svm class set mismatch");
      }
      if (node.svm.dim != static_cast<std::size_t>(node.mlp.feature_dim())) {
        throw Error("ensemble: svm dimension does not match model features");
      }
      if (input_dim < 0) input_dim = node.mlp.input_dim();
      if (node.mlp.input_dim() != input_dim) {
        throw Error("ensemble: node input dimensions differ");
      }
    }
  }
}

// parent of stage-k node j = the unique stage-(k-1) node containing its classes
inline std::vector<std::vector<std::size_t>> stage_parents(const CascadeEnsemble& ens) {
  std::vector<std::vector<std::size_t>> parents(ens.stages.size());
  for (std::size_t k = 1; k < ens.stages.size(); ++k) {
    const auto& prev = ens.stages[k - 1];
    parents[k].resize(ens.stages[k].nodes.size());
    for (std::size_t j = 0; j < ens.stages[k].nodes.size(); ++j) {
      const int probe = ens.stages[k].nodes[j].classes.front();
      bool found = false;
      for (std::size_t p = 0; p < prev.nodes.size(); ++p) {
        if (std::binary_search(prev.nodes[p].classes.begin(), prev.nodes[p].classes.end(),
                               probe)) {
          parents[k][j] = p;
          found = true;
          break;
        }
      }
      if (!found) throw Error("ensemble: stage node has no parent");
    }
  }
  return parents;
}

namespace detail {

// max over the child's classes of the parent's per-class score (optionally
// squashed through a softmax over the parent's score vector)
inline double gate_value(const std::vector<double>& parent_scores,
                         const std::vector<int>& parent_classes,
                         const std::vector<int>& child_classes, bool softmax_gate) {
  std::vector<double> vals;
  if (softmax_gate) vals = softmax(parent_scores);
  const std::vector<double>& s = softmax_gate ? vals : parent_scores;
  double best = kSentinelScore;
  for (int c : child_classes) {
    const auto it = std::lower_bound(parent_classes.begin(), parent_classes.end(), c);
    if (it == parent_classes.end() || *it != c) {
      throw Error("gate: child class missing from parent");
    }
    best = std::max(best, s[static_cast<std::size_t>(it - parent_classes.begin())]);
  }
  return best;
}

}  // namespace detail

struct CascadeSampleResult {
  std::vector<double> scores;        // universe order; sentinel when rejected
  std::vector<std::uint32_t> evals;  // nodes evaluated per stage
};

class CascadeScorer {
 public:
  explicit CascadeScorer(const CascadeEnsemble& ens)
      : ens_(&ens), parents_(stage_parents(ens)) {
    for (std::size_t k = 0; k < ens.stages.size(); ++k) {
      class_cols_.emplace_back();
      for (const auto& node : ens.stages[k].nodes) {
        std::vector<std::size_t> cols;
        for (int c : node.classes) {
          const auto it = std::lower_bound(ens.class_ids.begin(), ens.class_ids.end(), c);
          cols.push_back(static_cast<std::size_t>(it - ens.class_ids.begin()));
        }
        class_cols_[k].push_back(std::move(cols));
      }
    }
  }

  CascadeSampleResult score(const std::vector<double>& x) const {
    const auto& stages = ens_->stages;
    CascadeSampleResult res;
    res.scores.assign(ens_->class_ids.size(), kSentinelScore);
    res.evals.assign(stages.size(), 0);
    std::vector<std::vector<std::vector<double>>> node_scores(stages.size());
    std::vector<std::vector<std::uint8_t>> ran(stages.size());
    for (std::size_t k = 0; k < stages.size(); ++k) {
      node_scores[k].resize(stages[k].nodes.size());
      ran[k].assign(stages[k].nodes.size(), 0);
      for (std::size_t j = 0; j < stages[k].nodes.size(); ++j) {
        if (k > 0) {
          const std::size_t p = parents_[k][j];
          if (!ran[k - 1][p]) continue;
          const double gate = detail::gate_value(node_scores[k - 1][p],
                                                 stages[k - 1].nodes[p].classes,
                                                 stages[k].nodes[j].classes,
                                                 ens_->softmax_gate);
          if (!(gate >= ens_->stage_threshold(k))) continue;
        }
        const auto& node = stages[k].nodes[j];
        node_scores[k][j] = svm_scores(node.svm, extract_feature_vector(node.mlp, x));
        ran[k][j] = 1;
        ++res.evals[k];
      }
    }
    const std::size_t last = stages.size() - 1;
    for (std::size_t j = 0; j < stages[last].nodes.size(); ++j) {
      if (!ran[last][j]) continue;
      for (std::size_t c = 0; c < class_cols_[last][j].size(); ++c) {
        res.scores[class_cols_[last][j][c]] = node_scores[last][j][c];
      }
    }
    return res;
  }

  const std::vector<std::vector<std::size_t>>& parents() const { return parents_; }

 private:
  const CascadeEnsemble* ens_;
  std::vector<std::vector<std::size_t>> parents_;
  std::vector<std::vector<std::vector<std::size_t>>> class_cols_;
};

inline CascadeSampleResult cascade_score(const CascadeEnsemble& ens,
                                         const std::vector<double>& x) {
  return CascadeScorer(ens).score(x);
}

struct CostStats {
  std::vector<int> tree_levels;        // per stage
  std::vector<std::size_t> num_models;  // N_m = J at that level
  std::vector<std::size_t> evals;       // total node evaluations at that stage
  std::size_t samples = 0;

  double n_b(std::size_t k) const {
    return static_cast<double>(evals[k]) / static_cast<double>(num_models[k]);
  }
  std::size_t total_evals() const {
    std::size_t t = 0;
    for (auto e : evals) t += e;
    return t;
  }
};

struct CascadeBatchResult {
  std::vector<std::vector<double>> scores;  // row per sample, universe order
  CostStats cost;
};

inline CascadeBatchResult cascade_batch(const CascadeEnsemble& ens, const Dataset& ds,
                                        const IndexList& indices, int threads = 1) {
  if (indices.empty()) throw Error("cascade_batch: empty sample set");
  CascadeScorer scorer(ens);
  CascadeBatchResult out;
  out.scores.resize(indices.size());
  std::vector<std::vector<std::uint32_t>> evals(indices.size());
  parallel_for(indices.size(), threads, [&](std::size_t i) {
    auto r = scorer.score(ds.samples[indices[i]].features);
    out.scores[i] = std::move(r.scores);
    evals[i] = std::move(r.evals);
  });
  out.cost.samples = indices.size();
  out.cost.tree_levels.reserve(ens.stages.size());
  for (const auto& stage : ens.stages) {
    out.cost.tree_levels.push_back(stage.tree_level);
    out.cost.num_models.push_back(stage.nodes.size());
    out.cost.evals.push_back(0);
  }
  for (const auto& row : evals) {  // fixed order: parallel == serial totals
    for (std::size_t k = 0; k < row.size(); ++k) out.cost.evals[k] += row[k];
  }
  return out;
}

// Per gated stage: every node's gate value distribution over its own
// validation positives (ancestors held open) determines the largest threshold
// keeping recall_target of them; the stage threshold is the min over nodes,
// nudged just below so boundary scores still pass the >= gate.
inline std::vector<double> calibrate_thresholds(const CascadeEnsemble& ens,
                                                const Dataset& ds,
                                                const IndexList& val_indices,
                                                double recall_target, int threads = 1) {
  if (!(recall_target > 0.0 && recall_target <= 1.0)) {
    throw Error("calibrate: recall_target must be in (0, 1]");
  }
  std::vector<double> thresholds = ens.thresholds;
  if (ens.stages.size() < 2) return thresholds;  // nothing gated

  const auto parents = stage_parents(ens);
  // gate values per (stage, node): parent scores computed unconditionally
  std::vector<std::vector<std::vector<double>>> gates(ens.stages.size());
  for (std::size_t k = 1; k < ens.stages.size(); ++k) {
    gates[k].resize(ens.stages[k].nodes.size());
  }
  std::vector<IndexList> pos_of_node;  // flattened per (k, j)
  struct Slot {
    std::size_t k, j;
  };
  std::vector<Slot> slots;
  for (std::size_t k = 1; k < ens.stages.size(); ++k) {
    for (std::size_t j = 0; j < ens.stages[k].nodes.size(); ++j) {
      const auto& node = ens.stages[k].nodes[j];
      IndexList pos;
      for (auto idx : val_indices) {
        const int label = ds.samples[idx].label;
        if (label > 0 &&
            std::binary_search(node.classes.begin(), node.classes.end(), label)) {
          pos.push_back(idx);
        }
      }
      if (pos.empty()) {
        throw Error("calibrate: no validation positives for level " +
                    std::to_string(node.tree_level) + " group " +
                    std::to_string(node.group));
      }
      slots.push_back({k, j});
      pos_of_node.push_back(std::move(pos));
      gates[k][j].resize(pos_of_node.back().size());
    }
  }
  parallel_for(slots.size(), threads, [&](std::size_t s) {
    const auto [k, j] = slots[s];
    const auto& node = ens.stages[k].nodes[j];
    const auto& parent = ens.stages[k - 1].nodes[parents[k][j]];
    for (std::size_t i = 0; i < pos_of_node[s].size(); ++i) {
      const auto& x = ds.samples[pos_of_node[s][i]].features;
      const auto ps = svm_scores(parent.svm, extract_feature_vector(parent.mlp, x));
      gates[k][j][i] =
          detail::gate_value(ps, parent.classes, node.classes, ens.softmax_gate);
    }
  });
  for (std::size_t k = 1; k < ens.stages.size(); ++k) {
    double level_t = 0.0;
    bool first = true;
    for (std::size_t j = 0; j < ens.stages[k].nodes.size(); ++j) {
      auto vals = gates[k][j];
      std::sort(vals.begin(), vals.end(), std::greater<double>());
      const std::size_t need = static_cast<std::size_t>(
          std::ceil(recall_target * static_cast<double>(vals.size())));
      const double q = vals[std::max<std::size_t>(need, 1) - 1];
      if (first || q < level_t) {
        level_t = q;
        first = false;
      }
    }
    const double delta = 1e-9 * std::max(1.0, std::abs(level_t));
    thresholds[static_cast<std::size_t>(ens.stages[k].tree_level) - 2] = level_t - delta;
  }
  return thresholds;
}

// ---------------------------------------------------------------------------
// Ensemble directory: manifest plus one MLP1 and one SVM1 file per node.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string node_mlp_file(int level, int group) {
  return "mlp_" + std::to_string(level) + "_" + std::to_string(group) + ".txt";
}
inline std::string node_svm_file(int level, int group) {
  return "svm_" + std::to_string(level) + "_" + std::to_string(group) + ".txt";
}

}  // namespace detail

inline void save_ensemble(const CascadeEnsemble& ens, const std::string& dir) {
  validate_ensemble(ens);
  std::filesystem::create_directories(dir);
  const std::filesystem::path root(dir);
  std::ofstream out(root / "cascade.txt");
  if (!out) throw Error("cannot write ensemble manifest in " + dir);
  out << "CASCADE1\n";
  out << "classes";
  for (int c : ens.class_ids) out << ' ' << c;
  out << "\nstrategy";
  for (int l : ens.strategy) out << ' ' << l;
  out << "\nthresholds";
  for (double t : ens.thresholds) out << ' ' << format_double(t);
  out << "\nsoftmax_gate " << (ens.softmax_gate ? 1 : 0) << "\n";
  out << "seed " << ens.seed << "\n";
  for (std::size_t l = 0; l < ens.tree.levels.size(); ++l) {
    for (std::size_t j = 0; j < ens.tree.levels[l].groups.size(); ++j) {
      out << "group " << (l + 1) << ' ' << (j + 1) << ':';
      for (int c : ens.tree.levels[l].groups[j].classes) out << ' ' << c;
      out << "\n";
    }
  }
  if (!out) throw Error("write failed: ensemble manifest");
  for (const auto& stage : ens.stages) {
    for (const auto& node : stage.nodes) {
      save_mlp(node.mlp, (root / detail::node_mlp_file(node.tree_level, node.group)).string());
      save_svm(node.svm, (root / detail::node_svm_file(node.tree_level, node.group)).string());
    }
  }
}

inline CascadeEnsemble load_ensemble(const std::string& dir) {
  const std::filesystem::path root(dir);
  std::ifstream in(root / "cascade.txt");
  if (!in) throw Error("cannot open ensemble manifest in " + dir);
  std::string line;
  if (!std::getline(in, line) || trim(line) != "CASCADE1") {
    throw Error("not a CASCADE1 manifest: " + dir);
  }
  CascadeEnsemble ens;
  std::map<std::size_t, std::map<std::size_t, std::vector<int>>> groups;
  std::size_t lineno = 1;
  bool saw_classes = false, saw_strategy = false, saw_thresholds = false;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    auto toks = split_ws(line);
    const std::string& key = toks[0];
    if (key == "classes") {
      for (std::size_t i = 1; i < toks.size(); ++i) {
        ens.class_ids.push_back(static_cast<int>(parse_int(toks[i], "manifest class")));
      }
      saw_classes = true;
    } else if (key == "strategy") {
      for (std::size_t i = 1; i < toks.size(); ++i) {
        ens.strategy.push_back(static_cast<int>(parse_int(toks[i], "manifest strategy")));
      }
      saw_strategy = true;
    } else if (key == "thresholds") {
      for (std::size_t i = 1; i < toks.size(); ++i) {
        ens.thresholds.push_back(parse_double(toks[i], "manifest threshold"));
      }
      saw_thresholds = true;
    } else if (key == "softmax_gate") {
      if (toks.size() != 2) throw Error("manifest: bad softmax_gate line");
      ens.softmax_gate = parse_int(toks[1], "softmax_gate") != 0;
    } else if (key == "seed") {
      if (toks.size() != 2) throw Error("manifest: bad seed line");
      ens.seed = static_cast<std::uint64_t>(parse_int(toks[1], "seed"));
    } else if (key == "group") {
      const auto colon = line.find(':');
      if (colon == std::string::npos) {
        throw Error("manifest: group line missing ':', line " + std::to_string(lineno));
      }
      auto head = split_ws(line.substr(5, colon - 5));
      if (head.size() != 2) {
        throw Error("manifest: bad group header, line " + std::to_string(lineno));
      }
      const auto l = static_cast<std::size_t>(parse_int(head[0], "group level"));
      const auto j = static_cast<std::size_t>(parse_int(head[1], "group index"));
      std::vector<int> classes;
      for (const auto& tok : split_ws(line.substr(colon + 1))) {
        classes.push_back(static_cast<int>(parse_int(tok, "group class")));
      }
      groups[l][j] = std::move(classes);
    } else {
      throw Error("manifest: unknown key '" + key + "', line " + std::to_string(lineno));
    }
  }
  if (!saw_classes || !saw_strategy || !saw_thresholds || groups.empty()) {
    throw Error("manifest: missing classes/strategy/thresholds/groups");
  }
  std::sort(ens.class_ids.begin(), ens.class_ids.end());
  ens.tree.class_ids = ens.class_ids;
  std::size_t expect_level = 1;
  for (const auto& [l, gs] : groups) {
    if (l != expect_level++) throw Error("manifest: group levels not contiguous");
    HierarchyLevel lvl;
    std::size_t expect_group = 1;
    for (const auto& [j, classes] : gs) {
      if (j != expect_group++) throw Error("manifest: group indices not contiguous");
      HierarchyGroup g;
      g.classes = classes;
      std::sort(g.classes.begin(), g.classes.end());
      lvl.groups.push_back(std::move(g));
    }
    std::sort(lvl.groups.begin(), lvl.groups.end(),
              [](const HierarchyGroup& a, const HierarchyGroup& b) {
                return a.classes.front() < b.classes.front();
              });
    ens.tree.levels.push_back(std::move(lvl));
  }
  for (std::size_t s = 1; s < ens.strategy.size(); ++s) {
    CascadeStage stage;
    stage.tree_level = ens.strategy[s];
    const auto& level = ens.tree.levels[static_cast<std::size_t>(stage.tree_level) - 1];
    for (std::size_t j = 0; j < level.groups.size(); ++j) {
      CascadeNode node;
      node.tree_level = stage.tree_level;
      node.group = static_cast<int>(j) + 1;
      node.classes = level.groups[j].classes;
      node.mlp = load_mlp((root / detail::node_mlp_file(node.tree_level, node.group)).string());
      node.svm = load_svm((root / detail::node_svm_file(node.tree_level, node.group)).string());
      stage.nodes.push_back(std::move(node));
    }
    ens.stages.push_back(std::move(stage));
  }
  validate_ensemble(ens);
  return ens;
}

}  // namespace longtail
