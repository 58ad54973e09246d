#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "longtail/cascade.hpp"
#include "longtail/clustering.hpp"
#include "longtail/common.hpp"
#include "longtail/core.hpp"
#include "longtail/models.hpp"
#include "longtail/parallel.hpp"

namespace longtail {

inline std::vector<int> all_classes(const Dataset& ds) {
  std::vector<int> cs(static_cast<std::size_t>(ds.num_classes));
  std::iota(cs.begin(), cs.end(), 1);
  return cs;
}

inline MlpModel pretrain_base(const Dataset& ds, const TrainConfig& cfg) {
  const IndexList idx = split_indices(ds, Split::pretrain);
  if (idx.empty()) throw Error("pretrain: empty pretrain split");
  MlpModel m = init_mlp(static_cast<int>(ds.dim), cfg.hidden_dims, all_classes(ds),
                        cfg.seed, cfg.init_scale);
  if (cfg.epochs > 0) train_mlp(m, ds, idx, cfg);
  return m;
}

// parent's gate score for each candidate: max over the child's classes of the
// parent SVM scores on the parent's features
inline std::vector<double> parent_gate_scores(const MlpModel& parent_mlp,
                                              const SvmBank& parent_svm,
                                              const Dataset& ds,
                                              const IndexList& candidates,
                                              const std::vector<int>& child_group,
                                              int threads = 1) {
  std::vector<double> out(candidates.size());
  const auto parent_classes = parent_svm.class_set();
  parallel_for(candidates.size(), threads, [&](std::size_t i) {
    const auto s = svm_scores(
        parent_svm, extract_feature_vector(parent_mlp, ds.samples[candidates[i]].features));
    out[i] = detail::gate_value(s, parent_classes, child_group, false);
  });
  return out;
}

// pure filter: keep candidates scored strictly above T
inline IndexList mine_filter(const IndexList& candidates, const std::vector<double>& scores,
                             double threshold) {
  if (candidates.size() != scores.size()) {
    throw Error("mine_negatives: candidate/score size mismatch");
  }
  IndexList kept;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (scores[i] > threshold) kept.push_back(candidates[i]);
  }
  return kept;
}

inline IndexList mine_negatives(const MlpModel& parent_mlp, const SvmBank& parent_svm,
                                const Dataset& ds, const IndexList& candidates,
                                const std::vector<int>& child_group, double threshold,
                                int threads = 1) {
  return mine_filter(candidates,
                     parent_gate_scores(parent_mlp, parent_svm, ds, candidates,
                                        child_group, threads),
                     threshold);
}

// top-k candidates by score, ties toward the earlier candidate
inline IndexList hardest_negatives(const IndexList& candidates,
                                   const std::vector<double>& scores, std::size_t k) {
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  IndexList out;
  for (std::size_t i = 0; i < order.size() && i < k; ++i) {
    out.push_back(candidates[order[i]]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct HierTrainConfig {
  TrainConfig train;               // level-1 schedule; per-node budgets derive from it
  SvmConfig svm;
  std::vector<double> thresholds;  // mining/gate T_l per tree level 1..L-1; empty = default
  double default_threshold = 0.0;
  int freeze_hidden = 0;           // leading hidden layers pinned in spawned children
  bool softmax_gate = false;
  int threads = 1;
  std::uint64_t seed = 1;
};

struct NodeTrainState {
  int tree_level = 0;
  int group = 0;  // 1-based
  std::vector<int> classes;
  IndexList positives;
  IndexList negatives;
  double mine_threshold = 0.0;
  bool mined = false;    // false for level 1 (all background kept)
  bool floored = false;  // empty mining result replaced by the 100 hardest
  std::size_t parent_node = 0;  // index into the previous stage, 0 for stage 0
  int epochs = 0;
  double final_loss = 0.0;
};

struct HierTrainResult {
  CascadeEnsemble ensemble;
  std::vector<std::vector<NodeTrainState>> states;  // per stage, per node
  std::vector<std::string> warnings;
};

constexpr std::size_t kMinedNegativeFloor = 100;
constexpr int kMinNodeEpochs = 5;

namespace detail {

inline void assert_node_state(const NodeTrainState& st, const Dataset& ds,
                              const IndexList& parent_negatives,
                              const std::vector<double>& mine_scores) {
  for (auto i : st.positives) {
    if (!std::binary_search(st.classes.begin(), st.classes.end(), ds.samples[i].label)) {
      throw Error("hier invariant: positive outside the node class set");
    }
  }
  for (auto i : st.negatives) {
    if (!std::binary_search(parent_negatives.begin(), parent_negatives.end(), i)) {
      throw Error("hier invariant: negative not drawn from the parent's negatives");
    }
  }
  if (st.mined && !st.floored) {
    for (std::size_t i = 0, j = 0; i < parent_negatives.size(); ++i) {
      if (j < st.negatives.size() && st.negatives[j] == parent_negatives[i]) {
        if (!(mine_scores[i] > st.mine_threshold)) {
          throw Error("hier invariant: kept negative at or below the mining threshold");
        }
        ++j;
      }
    }
  }
}

}  // namespace detail

// Algorithm: walk the strategy levels in order; each node spawns from its
// nearest trained ancestor (the base for the first stage), trains on its
// group's positives plus negatives mined from the ancestor's negatives, then
// fits its one-vs-rest SVM bank on features of the full train split.
inline HierTrainResult train_hierarchy(const Dataset& ds, const HierarchyTree& tree,
                                       const std::vector<int>& strategy,
                                       const MlpModel& base, const HierTrainConfig& cfg) {
  validate_tree(tree);
  validate_strategy(strategy, tree.depth());
  cfg.train.validate();
  cfg.svm.validate();
  for (int c : tree.class_ids) {
    if (base.target_index(c) == 0) {
      throw Error("train-hier: base model does not cover class " + std::to_string(c));
    }
  }
  std::vector<double> thresholds = cfg.thresholds;
  if (thresholds.empty()) {
    thresholds.assign(tree.depth() - 1, cfg.default_threshold);
  } else if (thresholds.size() + 1 != tree.depth()) {
    throw Error("train-hier: need one threshold per tree level 1..L-1");
  }
  const int hidden_layers = static_cast<int>(base.num_layers()) - 1;
  if (cfg.freeze_hidden < 0 || cfg.freeze_hidden > hidden_layers) {
    throw Error("train-hier: freeze_hidden out of range [0, " +
                std::to_string(hidden_layers) + "]");
  }

  const IndexList train_idx = split_indices(ds, Split::train);
  if (train_idx.empty()) throw Error("train-hier: empty train split");
  const IndexList train_bg = negative_indices(ds, train_idx);
  const std::size_t total_pos = train_idx.size() - train_bg.size();
  if (total_pos == 0) throw Error("train-hier: no positives in the train split");

  // the base SVM bank only matters when the first trained level is gated/mined
  SvmBank base_svm;
  if (strategy[1] > 1) {
    const FeatureMatrix fm = extract_features(base, ds, train_idx, true, cfg.threads);
    base_svm = train_ovr_svm(fm, base.class_set, cfg.svm, cfg.threads);
  }

  HierTrainResult res;
  res.ensemble.class_ids = tree.class_ids;
  res.ensemble.tree = tree;
  res.ensemble.strategy = strategy;
  res.ensemble.thresholds = thresholds;
  res.ensemble.softmax_gate = cfg.softmax_gate;
  res.ensemble.seed = cfg.seed;

  for (std::size_t s = 1; s < strategy.size(); ++s) {
    const int level = strategy[s];
    const auto& groups = tree.levels[static_cast<std::size_t>(level) - 1].groups;
    CascadeStage stage;
    stage.tree_level = level;
    std::vector<NodeTrainState> stage_states;
    for (std::size_t j = 0; j < groups.size(); ++j) {
      NodeTrainState st;
      st.tree_level = level;
      st.group = static_cast<int>(j) + 1;
      st.classes = groups[j].classes;
      for (auto i : train_idx) {
        if (ds.samples[i].label > 0 &&
            std::binary_search(st.classes.begin(), st.classes.end(), ds.samples[i].label)) {
          st.positives.push_back(i);
        }
      }
      if (st.positives.empty()) {
        throw Error("train-hier: level " + std::to_string(level) + " group " +
                    std::to_string(j + 1) + " has no training positives");
      }

      const MlpModel* parent_mlp = &base;
      const SvmBank* parent_svm = &base_svm;
      const IndexList* parent_neg = &train_bg;
      if (s > 1) {
        const auto& prev_nodes = res.ensemble.stages.back().nodes;
        bool found = false;
        for (std::size_t p = 0; p < prev_nodes.size(); ++p) {
          if (std::binary_search(prev_nodes[p].classes.begin(),
                                 prev_nodes[p].classes.end(), st.classes.front())) {
            st.parent_node = p;
            found = true;
            break;
          }
        }
        if (!found) throw Error("train-hier: node has no trained ancestor");
        parent_mlp = &prev_nodes[st.parent_node].mlp;
        parent_svm = &prev_nodes[st.parent_node].svm;
        parent_neg = &res.states.back()[st.parent_node].negatives;
      }

      std::vector<double> mine_scores;
      if (level == 1) {
        st.negatives = *parent_neg;  // root level trains against all background
      } else {
        st.mined = true;
        st.mine_threshold = thresholds[static_cast<std::size_t>(level) - 2];
        mine_scores = parent_gate_scores(*parent_mlp, *parent_svm, ds, *parent_neg,
                                         st.classes, cfg.threads);
        st.negatives = mine_filter(*parent_neg, mine_scores, st.mine_threshold);
        if (st.negatives.empty()) {
          st.floored = true;
          st.negatives = hardest_negatives(*parent_neg, mine_scores, kMinedNegativeFloor);
          res.warnings.push_back("level " + std::to_string(level) + " group " +
                                 std::to_string(j + 1) +
                                 ": mining threshold rejected every negative; kept the " +
                                 std::to_string(st.negatives.size()) + " hardest");
        }
      }
      detail::assert_node_state(st, ds, *parent_neg, mine_scores);

      IndexList subset = st.positives;
      subset.insert(subset.end(), st.negatives.begin(), st.negatives.end());
      std::sort(subset.begin(), subset.end());

      const std::uint64_t node_seed =
          seed_mix(cfg.seed, static_cast<std::uint64_t>(level),
                   static_cast<std::uint64_t>(j + 1));
      CascadeNode node;
      node.tree_level = level;
      node.group = static_cast<int>(j) + 1;
      node.classes = st.classes;
      node.mlp = spawn_child(*parent_mlp, st.classes, node_seed, cfg.train.init_scale);
      for (int h = 0; h < hidden_layers; ++h) {
        node.mlp.frozen[static_cast<std::size_t>(h)] = h < cfg.freeze_hidden ? 1 : 0;
      }

      TrainConfig node_cfg = cfg.train;
      node_cfg.seed = node_seed;
      node_cfg.epochs = std::max(
          kMinNodeEpochs,
          static_cast<int>(round_half_up(static_cast<double>(cfg.train.epochs) *
                                         static_cast<double>(st.positives.size()) /
                                         static_cast<double>(total_pos))));
      st.epochs = node_cfg.epochs;
      const TrainResult tr = train_mlp(node.mlp, ds, subset, node_cfg);
      st.final_loss = tr.final_loss;

      const FeatureMatrix fm = extract_features(node.mlp, ds, train_idx, true, cfg.threads);
      node.svm = train_ovr_svm(fm, st.classes, cfg.svm, cfg.threads);

      stage.nodes.push_back(std::move(node));
      stage_states.push_back(std::move(st));
    }
    res.ensemble.stages.push_back(std::move(stage));
    res.states.push_back(std::move(stage_states));
  }

  validate_ensemble(res.ensemble);
  return res;
}

}  // namespace longtail
