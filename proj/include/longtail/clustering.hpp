#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "longtail/common.hpp"
#include "longtail/core.hpp"
#include "longtail/models.hpp"
#include "longtail/rng.hpp"

namespace longtail {

// ---------------------------------------------------------------------------
// Class-class similarity. Symmetric, indexed by position in a sorted class
// list. The clustering step converts similarities to distances internally.
// ---------------------------------------------------------------------------

struct SimilarityMatrix {
  std::vector<int> class_ids;  // sorted ascending
  std::vector<double> values;  // row-major, size C*C

  std::size_t size() const { return class_ids.size(); }
  double at(std::size_t i, std::size_t j) const { return values[i * size() + j]; }
  void set(std::size_t i, std::size_t j, double v) {
    values[i * size() + j] = v;
    values[j * size() + i] = v;
  }
};

inline SimilarityMatrix make_similarity(std::vector<int> class_ids) {
  if (class_ids.empty()) throw Error("similarity: empty class set");
  std::sort(class_ids.begin(), class_ids.end());
  if (std::adjacent_find(class_ids.begin(), class_ids.end()) != class_ids.end()) {
    throw Error("similarity: duplicate class id");
  }
  SimilarityMatrix sm;
  sm.class_ids = std::move(class_ids);
  sm.values.assign(sm.class_ids.size() * sm.class_ids.size(), 0.0);
  return sm;
}

// Mean inner product over all cross pairs of two classes' feature vectors.
// With per-class means m_a, m_b this collapses to <m_a, m_b>, which is what
// we compute; rows are expected to be L2-normalized already.
inline SimilarityMatrix visual_similarity(const FeatureMatrix& fm,
                                          const std::vector<int>& class_set) {
  SimilarityMatrix sm = make_similarity(class_set);
  const std::size_t c = sm.size();
  std::vector<std::vector<double>> means(c, std::vector<double>(fm.dim, 0.0));
  std::vector<std::size_t> counts(c, 0);
  std::map<int, std::size_t> pos;
  for (std::size_t k = 0; k < c; ++k) pos[sm.class_ids[k]] = k;
  for (std::size_t i = 0; i < fm.size(); ++i) {
    auto it = pos.find(fm.labels[i]);
    if (it == pos.end()) continue;
    auto& mv = means[it->second];
    for (std::size_t j = 0; j < fm.dim; ++j) mv[j] += fm.rows[i][j];
    ++counts[it->second];
  }
  for (std::size_t k = 0; k < c; ++k) {
    if (counts[k] == 0) {
      throw Error("visual similarity: no feature rows for class " +
                  std::to_string(sm.class_ids[k]));
    }
    for (auto& v : means[k]) v /= static_cast<double>(counts[k]);
  }
  for (std::size_t a = 0; a < c; ++a) {
    for (std::size_t b = a; b < c; ++b) {
      double dot = 0.0;
      for (std::size_t j = 0; j < fm.dim; ++j) dot += means[a][j] * means[b][j];
      sm.set(a, b, dot);
    }
  }
  return sm;
}

// Row-normalized confusion counts; the output matrix is symmetrized as
// (M + M^T)/2 with a zeroed diagonal so "a is mistaken for b" and the reverse
// count the same.
struct ConfusionCounts {
  std::vector<int> class_ids;
  std::vector<std::size_t> counts;      // row-major, [true][pred]
  std::vector<std::size_t> row_totals;  // samples per true class (any prediction)

  std::size_t size() const { return class_ids.size(); }
};

inline ConfusionCounts confusion_counts(const MlpModel& m, const Dataset& ds,
                                        const IndexList& indices) {
  ConfusionCounts cc;
  cc.class_ids = m.class_set;
  const std::size_t c = cc.class_ids.size();
  cc.counts.assign(c * c, 0);
  cc.row_totals.assign(c, 0);
  for (auto idx : indices) {
    const Sample& s = ds.samples[idx];
    const int row = m.target_index(s.label) - 1;
    if (row < 0) continue;  // background or out-of-set samples have no row
    ++cc.row_totals[static_cast<std::size_t>(row)];
    const auto logits = mlp_forward(m, s.features);
    const std::size_t pred = static_cast<std::size_t>(
        std::max_element(logits.begin(), logits.end()) - logits.begin());
    if (pred >= 1) {
      cc.counts[static_cast<std::size_t>(row) * c + (pred - 1)] += 1;
    }
  }
  return cc;
}

inline SimilarityMatrix confusion_similarity(const ConfusionCounts& cc) {
  SimilarityMatrix sm = make_similarity(cc.class_ids);
  const std::size_t c = sm.size();
  std::vector<double> m(c * c, 0.0);
  for (std::size_t i = 0; i < c; ++i) {
    if (cc.row_totals[i] == 0) continue;  // unseen class confuses with nothing
    for (std::size_t j = 0; j < c; ++j) {
      m[i * c + j] = static_cast<double>(cc.counts[i * c + j]) /
                     static_cast<double>(cc.row_totals[i]);
    }
  }
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = i; j < c; ++j) {
      sm.set(i, j, i == j ? 0.0 : 0.5 * (m[i * c + j] + m[j * c + i]));
    }
  }
  return sm;
}

inline std::vector<double> per_class_accuracy(const ConfusionCounts& cc) {
  std::vector<double> acc(cc.size(), 0.0);
  for (std::size_t i = 0; i < cc.size(); ++i) {
    if (cc.row_totals[i] > 0) {
      acc[i] = static_cast<double>(cc.counts[i * cc.size() + i]) /
               static_cast<double>(cc.row_totals[i]);
    }
  }
  return acc;
}

// Similarity from any per-class scalar (accuracy, training count, file value):
// closer scalars mean more similar, Sim(a,b) = -|v_a - v_b|.
inline SimilarityMatrix scalar_similarity(const std::vector<int>& class_set,
                                          const std::map<int, double>& values) {
  SimilarityMatrix sm = make_similarity(class_set);
  std::vector<double> v(sm.size());
  for (std::size_t k = 0; k < sm.size(); ++k) {
    auto it = values.find(sm.class_ids[k]);
    if (it == values.end()) {
      throw Error("scalar similarity: missing value for class " +
                  std::to_string(sm.class_ids[k]));
    }
    v[k] = it->second;
  }
  for (std::size_t a = 0; a < sm.size(); ++a) {
    for (std::size_t b = a; b < sm.size(); ++b) {
      sm.set(a, b, -std::abs(v[a] - v[b]));
    }
  }
  return sm;
}

// "class value" lines, one per class
inline std::map<int, double> load_class_scalars(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open scalar file: " + path);
  std::map<int, double> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    auto toks = split_ws(line);
    if (toks.size() != 2) {
      throw Error("scalar file: expected 'class value', line " + std::to_string(lineno));
    }
    const int cls = static_cast<int>(parse_int(toks[0], "class id"));
    if (out.count(cls)) {
      throw Error("scalar file: duplicate class " + std::to_string(cls));
    }
    out[cls] = parse_double(toks[1], "scalar value");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Hierarchy over the class set. Level 0 (the root: one group with every
// class) stays implicit; levels[0] is the first split. Groups are sorted by
// smallest member and deeper levels refine shallower ones.
// ---------------------------------------------------------------------------

struct HierarchyGroup {
  std::vector<int> classes;  // sorted ascending
};

struct HierarchyLevel {
  std::vector<HierarchyGroup> groups;
};

struct HierarchyTree {
  std::vector<int> class_ids;          // sorted universe
  std::vector<HierarchyLevel> levels;  // levels[l] has index l+1 in files/paths

  std::size_t depth() const { return levels.size(); }
  // group position of cls at 1-based level, -1 when absent
  int group_index(std::size_t level, int cls) const {
    const auto& gs = levels[level - 1].groups;
    for (std::size_t j = 0; j < gs.size(); ++j) {
      if (std::binary_search(gs[j].classes.begin(), gs[j].classes.end(), cls)) {
        return static_cast<int>(j);
      }
    }
    return -1;
  }
};

inline void validate_tree(const HierarchyTree& t) {
  if (t.class_ids.empty()) throw Error("hierarchy: empty class universe");
  if (!std::is_sorted(t.class_ids.begin(), t.class_ids.end()) ||
      std::adjacent_find(t.class_ids.begin(), t.class_ids.end()) != t.class_ids.end()) {
    throw Error("hierarchy: class universe must be sorted and unique");
  }
  if (t.levels.empty()) throw Error("hierarchy: at least one level required");
  for (std::size_t l = 0; l < t.levels.size(); ++l) {
    const auto& gs = t.levels[l].groups;
    if (gs.empty()) throw Error("hierarchy: empty level " + std::to_string(l + 1));
    std::vector<int> seen;
    int prev_min = -1;
    for (const auto& g : gs) {
      if (g.classes.empty()) {
        throw Error("hierarchy: empty group at level " + std::to_string(l + 1));
      }
      if (!std::is_sorted(g.classes.begin(), g.classes.end()) ||
          std::adjacent_find(g.classes.begin(), g.classes.end()) != g.classes.end()) {
        throw Error("hierarchy: group classes must be sorted and unique");
      }
      if (g.classes.front() <= prev_min) {
        throw Error("hierarchy: groups must be ordered by smallest class");
      }
      prev_min = g.classes.front();
      seen.insert(seen.end(), g.classes.begin(), g.classes.end());
    }
    std::sort(seen.begin(), seen.end());
    if (seen != t.class_ids) {
      throw Error("hierarchy: level " + std::to_string(l + 1) +
                  " is not a partition of the class set");
    }
  }
  // every deeper group must live inside a single parent group
  for (std::size_t l = 1; l < t.levels.size(); ++l) {
    for (const auto& g : t.levels[l].groups) {
      const int parent = t.group_index(l, g.classes.front());
      for (int cls : g.classes) {
        if (t.group_index(l, cls) != parent) {
          throw Error("hierarchy: level " + std::to_string(l + 2) +
                      " group crosses level " + std::to_string(l + 1) + " boundaries");
        }
      }
    }
  }
}

namespace detail {

inline HierarchyLevel snapshot_level(const std::vector<std::vector<int>>& groups) {
  HierarchyLevel lvl;
  for (const auto& g : groups) {
    HierarchyGroup hg;
    hg.classes = g;
    std::sort(hg.classes.begin(), hg.classes.end());
    lvl.groups.push_back(std::move(hg));
  }
  std::sort(lvl.groups.begin(), lvl.groups.end(),
            [](const HierarchyGroup& a, const HierarchyGroup& b) {
              return a.classes.front() < b.classes.front();
            });
  return lvl;
}

inline void check_level_sizes(const std::vector<int>& level_sizes, std::size_t c) {
  if (level_sizes.empty()) throw Error("hierarchy: no level sizes given");
  int prev = 0;
  for (int j : level_sizes) {
    if (j < 1 || static_cast<std::size_t>(j) > c) {
      throw Error("hierarchy: level size " + std::to_string(j) + " out of range [1, " +
                  std::to_string(c) + "]");
    }
    if (j < prev) throw Error("hierarchy: level sizes must be non-decreasing (coarse to fine)");
    prev = j;
  }
}

}  // namespace detail

// Average-linkage agglomerative clustering on distance 1 - normalized(sim),
// where normalization maps off-diagonal similarities affinely onto [0, 1].
// Cross-group distances are maintained as exact pair sums and divided by the
// pair count only for comparisons, so the result depends on the class ids and
// similarity values alone, not on input ordering. Ties break toward the
// lexicographically smallest (min class id) group pair. All requested levels
// are cuts of one merge sequence, which makes them nest.
inline HierarchyTree build_hierarchy_similarity(const SimilarityMatrix& sim,
                                                const std::vector<int>& level_sizes) {
  const std::size_t c = sim.size();
  detail::check_level_sizes(level_sizes, c);

  double lo = 0.0, hi = 0.0;
  bool first = true;
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      if (i == j) continue;
      const double v = sim.at(i, j);
      if (first || v < lo) lo = v;
      if (first || v > hi) hi = v;
      first = false;
    }
  }
  auto dist = [&](std::size_t i, std::size_t j) {
    if (c == 1) return 0.0;
    if (hi <= lo) return 0.5;  // flat similarity: every merge is a tie
    return 1.0 - (sim.at(i, j) - lo) / (hi - lo);
  };

  struct Group {
    std::vector<int> classes;
    std::vector<std::size_t> members;  // positions in sim
    bool active = true;
    int min_id = 0;
  };
  std::vector<Group> groups(c);
  for (std::size_t i = 0; i < c; ++i) {
    groups[i].classes = {sim.class_ids[i]};
    groups[i].members = {i};
    groups[i].min_id = sim.class_ids[i];
  }
  // pair sums between groups, grown as merges append new slots
  std::vector<std::vector<double>> psum(c, std::vector<double>(c, 0.0));
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < c; ++j) psum[i][j] = i == j ? 0.0 : dist(i, j);
  }

  std::set<int> wanted(level_sizes.begin(), level_sizes.end());
  std::map<int, HierarchyLevel> cuts;
  std::size_t active_count = c;
  auto snapshot_if_wanted = [&]() {
    if (!wanted.count(static_cast<int>(active_count))) return;
    std::vector<std::vector<int>> gs;
    for (const auto& g : groups) {
      if (g.active) gs.push_back(g.classes);
    }
    cuts[static_cast<int>(active_count)] = detail::snapshot_level(gs);
  };
  snapshot_if_wanted();

  const int target = *wanted.begin();
  while (static_cast<int>(active_count) > target) {
    std::size_t best_a = 0, best_b = 0;
    double best_avg = 0.0;
    bool have = false;
    for (std::size_t a = 0; a < groups.size(); ++a) {
      if (!groups[a].active) continue;
      for (std::size_t b = a + 1; b < groups.size(); ++b) {
        if (!groups[b].active) continue;
        const double avg = psum[a][b] / (static_cast<double>(groups[a].classes.size()) *
                                         static_cast<double>(groups[b].classes.size()));
        std::size_t lo_g = a, hi_g = b;
        if (groups[hi_g].min_id < groups[lo_g].min_id) std::swap(lo_g, hi_g);
        const bool better =
            !have || avg < best_avg ||
            (avg == best_avg &&
             (groups[lo_g].min_id < std::min(groups[best_a].min_id, groups[best_b].min_id) ||
              (groups[lo_g].min_id == std::min(groups[best_a].min_id, groups[best_b].min_id) &&
               groups[hi_g].min_id < std::max(groups[best_a].min_id, groups[best_b].min_id))));
        if (better) {
          have = true;
          best_avg = avg;
          best_a = lo_g;
          best_b = hi_g;
        }
      }
    }
    if (!have) throw Error("hierarchy: merge selection failed");
    Group merged;
    merged.classes = groups[best_a].classes;
    merged.classes.insert(merged.classes.end(), groups[best_b].classes.begin(),
                          groups[best_b].classes.end());
    std::sort(merged.classes.begin(), merged.classes.end());
    merged.members = groups[best_a].members;
    merged.members.insert(merged.members.end(), groups[best_b].members.begin(),
                          groups[best_b].members.end());
    merged.min_id = merged.classes.front();
    groups[best_a].active = false;
    groups[best_b].active = false;
    const std::size_t slot = groups.size();
    for (auto& row : psum) row.push_back(0.0);
    psum.emplace_back(slot + 1, 0.0);
    for (std::size_t g = 0; g < slot; ++g) {
      if (!groups[g].active) continue;
      const double s = psum[g][best_a] + psum[g][best_b];
      psum[g][slot] = s;
      psum[slot][g] = s;
    }
    groups.push_back(std::move(merged));
    --active_count;
    snapshot_if_wanted();
  }

  HierarchyTree t;
  t.class_ids = sim.class_ids;
  for (int j : level_sizes) t.levels.push_back(cuts.at(j));
  validate_tree(t);
  return t;
}

// Random baseline: start from one group and repeatedly split the largest
// group (ties toward the smallest class id) into two random halves until the
// level size is reached; later levels keep refining, so nesting holds.
inline HierarchyTree build_hierarchy_random(const std::vector<int>& class_ids,
                                            const std::vector<int>& level_sizes,
                                            std::uint64_t seed) {
  std::vector<int> ids = class_ids;
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) throw Error("hierarchy: empty class universe");
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    throw Error("hierarchy: duplicate class id");
  }
  detail::check_level_sizes(level_sizes, ids.size());

  Rng rng(seed_mix(seed, 0x726e64));
  std::vector<std::vector<int>> groups = {ids};
  HierarchyTree t;
  t.class_ids = ids;
  for (int j : level_sizes) {
    while (static_cast<int>(groups.size()) < j) {
      std::size_t largest = 0;
      for (std::size_t g = 1; g < groups.size(); ++g) {
        if (groups[g].size() > groups[largest].size() ||
            (groups[g].size() == groups[largest].size() &&
             groups[g].front() < groups[largest].front())) {
          largest = g;
        }
      }
      if (groups[largest].size() < 2) throw Error("hierarchy: cannot split singleton group");
      std::vector<int> members = groups[largest];
      rng.shuffle(members);
      const std::size_t keep = (members.size() + 1) / 2;
      std::vector<int> a(members.begin(), members.begin() + static_cast<std::ptrdiff_t>(keep));
      std::vector<int> b(members.begin() + static_cast<std::ptrdiff_t>(keep), members.end());
      std::sort(a.begin(), a.end());
      std::sort(b.begin(), b.end());
      groups[largest] = std::move(a);
      groups.push_back(std::move(b));
    }
    t.levels.push_back(detail::snapshot_level(groups));
  }
  validate_tree(t);
  return t;
}

// ---- taxonomy files: "level group: class class ...", both indices 1-based ----

inline void save_taxonomy(const HierarchyTree& t, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write taxonomy file: " + path);
  for (std::size_t l = 0; l < t.levels.size(); ++l) {
    for (std::size_t j = 0; j < t.levels[l].groups.size(); ++j) {
      out << (l + 1) << ' ' << (j + 1) << ':';
      for (int cls : t.levels[l].groups[j].classes) out << ' ' << cls;
      out << "\n";
    }
  }
  if (!out) throw Error("write failed: " + path);
}

inline HierarchyTree load_taxonomy(const std::string& path,
                                   const std::vector<int>& class_universe) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open taxonomy file: " + path);
  std::map<std::size_t, std::map<std::size_t, std::vector<int>>> parsed;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) {
      throw Error("taxonomy: missing ':', line " + std::to_string(lineno));
    }
    auto head = split_ws(line.substr(0, colon));
    if (head.size() != 2) {
      throw Error("taxonomy: expected 'level group:', line " + std::to_string(lineno));
    }
    const long long l = parse_int(head[0], "taxonomy level");
    const long long j = parse_int(head[1], "taxonomy group");
    if (l < 1 || j < 1) {
      throw Error("taxonomy: indices are 1-based, line " + std::to_string(lineno));
    }
    auto tail = split_ws(line.substr(colon + 1));
    if (tail.empty()) {
      throw Error("taxonomy: empty group, line " + std::to_string(lineno));
    }
    std::vector<int> classes;
    for (const auto& tok : tail) {
      classes.push_back(static_cast<int>(parse_int(tok, "taxonomy class")));
    }
    auto& slot = parsed[static_cast<std::size_t>(l)][static_cast<std::size_t>(j)];
    if (!slot.empty()) {
      throw Error("taxonomy: duplicate group, line " + std::to_string(lineno));
    }
    slot = std::move(classes);
  }
  if (parsed.empty()) throw Error("taxonomy: no groups in " + path);

  HierarchyTree t;
  t.class_ids = class_universe;
  std::sort(t.class_ids.begin(), t.class_ids.end());
  std::size_t expect_level = 1;
  for (const auto& [l, groups] : parsed) {
    if (l != expect_level) {
      throw Error("taxonomy: levels must be contiguous from 1, missing level " +
                  std::to_string(expect_level));
    }
    ++expect_level;
    HierarchyLevel lvl;
    std::size_t expect_group = 1;
    for (const auto& [j, classes] : groups) {
      if (j != expect_group) {
        throw Error("taxonomy: groups must be contiguous from 1 at level " +
                    std::to_string(l));
      }
      ++expect_group;
      HierarchyGroup g;
      g.classes = classes;
      std::sort(g.classes.begin(), g.classes.end());
      if (std::adjacent_find(g.classes.begin(), g.classes.end()) != g.classes.end()) {
        throw Error("taxonomy: duplicate class within a group at level " + std::to_string(l));
      }
      lvl.groups.push_back(std::move(g));
    }
    std::sort(lvl.groups.begin(), lvl.groups.end(),
              [](const HierarchyGroup& a, const HierarchyGroup& b) {
                return a.classes.front() < b.classes.front();
              });
    t.levels.push_back(std::move(lvl));
  }
  validate_tree(t);
  return t;
}

}  // namespace longtail
