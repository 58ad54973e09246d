#pragma once

#include <algorithm>
#include <fstream>
#include <string>
#include <vector>

#include "longtail/common.hpp"
#include "longtail/core.hpp"

namespace longtail {

// Ranking average precision: sort by score descending (ties broken by sample
// id ascending, which keeps the metric deterministic), then average the
// precision at each positive's rank. Sentinel scores simply rank last.

struct RankedSample {
  std::string id;
  double score = 0.0;
  bool positive = false;
};

inline double average_precision(std::vector<RankedSample> items) {
  std::size_t total_pos = 0;
  for (const auto& it : items) total_pos += it.positive ? 1 : 0;
  if (total_pos == 0) throw Error("average_precision: no positives");
  std::sort(items.begin(), items.end(), [](const RankedSample& a, const RankedSample& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t rank = 0; rank < items.size(); ++rank) {
    if (items[rank].positive) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
    }
  }
  return sum / static_cast<double>(total_pos);
}

struct MapResult {
  std::vector<int> class_ids;
  std::vector<double> per_class;
  double map = 0.0;
};

// Score matrix rows align with `ids`/`labels`; columns with `class_ids`.
// Every class must have at least one positive in the evaluated set.
inline MapResult mean_ap(const std::vector<std::string>& ids, const std::vector<int>& labels,
                         const std::vector<std::vector<double>>& scores,
                         const std::vector<int>& class_ids) {
  if (ids.size() != labels.size() || ids.size() != scores.size()) {
    throw Error("mean_ap: ids/labels/scores size mismatch");
  }
  if (ids.empty()) throw Error("mean_ap: no samples");
  if (class_ids.empty()) throw Error("mean_ap: no classes");
  MapResult res;
  res.class_ids = class_ids;
  double total = 0.0;
  for (std::size_t k = 0; k < class_ids.size(); ++k) {
    std::vector<RankedSample> items(ids.size());
    std::size_t pos = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      items[i].id = ids[i];
      items[i].score = scores[i][k];
      items[i].positive = labels[i] == class_ids[k];
      pos += items[i].positive ? 1 : 0;
    }
    if (pos == 0) {
      throw Error("mean_ap: class " + std::to_string(class_ids[k]) +
                  " has no positives in the evaluated split");
    }
    res.per_class.push_back(average_precision(std::move(items)));
    total += res.per_class.back();
  }
  res.map = total / static_cast<double>(class_ids.size());
  return res;
}

// mean AP over a chosen subset of the already-computed per-class values
inline double mean_ap_over(const MapResult& res, const std::vector<int>& chosen) {
  if (chosen.empty()) throw Error("mean_ap_over: empty class subset");
  double total = 0.0;
  for (int c : chosen) {
    const auto it = std::lower_bound(res.class_ids.begin(), res.class_ids.end(), c);
    if (it == res.class_ids.end() || *it != c) {
      throw Error("mean_ap_over: class " + std::to_string(c) + " not evaluated");
    }
    total += res.per_class[static_cast<std::size_t>(it - res.class_ids.begin())];
  }
  return total / static_cast<double>(chosen.size());
}

// ---------------------------------------------------------------------------
// Score files: optional "# classes ..." header naming the columns, then one
// line per sample "<id> <y_1> ... <y_C>". Sentinel scores serialize as the
// token "-inf".
// ---------------------------------------------------------------------------

struct ScoreFile {
  std::vector<int> class_ids;
  std::vector<std::string> ids;
  std::vector<std::vector<double>> rows;
};

inline std::string format_score(double v) {
  return v == kSentinelScore ? "-inf" : format_double(v);
}

inline void save_scores(const std::string& path, const std::vector<int>& class_ids,
                        const std::vector<std::string>& ids,
                        const std::vector<std::vector<double>>& rows) {
  if (ids.size() != rows.size()) throw Error("save_scores: id/row count mismatch");
  std::ofstream out(path);
  if (!out) throw Error("cannot write score file: " + path);
  out << "# classes";
  for (int c : class_ids) out << ' ' << c;
  out << "\n";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (rows[i].size() != class_ids.size()) {
      throw Error("save_scores: row width mismatch");
    }
    out << ids[i];
    for (double v : rows[i]) out << ' ' << format_score(v);
    out << "\n";
  }
  if (!out) throw Error("write failed: " + path);
}

inline ScoreFile load_scores(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open score file: " + path);
  ScoreFile sf;
  std::string line;
  std::size_t lineno = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    if (line[0] == '#') {
      auto toks = split_ws(line.substr(1));
      if (!toks.empty() && toks[0] == "classes" && !saw_header) {
        for (std::size_t i = 1; i < toks.size(); ++i) {
          sf.class_ids.push_back(static_cast<int>(parse_int(toks[i], "score header class")));
        }
        saw_header = true;
      }
      continue;
    }
    auto toks = split_ws(line);
    if (toks.size() < 2) {
      throw Error("score file: expected id and scores, line " + std::to_string(lineno));
    }
    sf.ids.push_back(toks[0]);
    std::vector<double> row;
    row.reserve(toks.size() - 1);
    for (std::size_t i = 1; i < toks.size(); ++i) {
      row.push_back(toks[i] == "-inf" ? kSentinelScore
                                      : parse_double(toks[i], "score value"));
    }
    if (!sf.rows.empty() && row.size() != sf.rows.front().size()) {
      throw Error("score file: ragged rows, line " + std::to_string(lineno));
    }
    sf.rows.push_back(std::move(row));
  }
  if (sf.rows.empty()) throw Error("score file: no samples in " + path);
  if (!saw_header) {
    for (std::size_t c = 1; c <= sf.rows.front().size(); ++c) {
      sf.class_ids.push_back(static_cast<int>(c));
    }
  }
  if (sf.class_ids.size() != sf.rows.front().size()) {
    throw Error("score file: header width does not match rows");
  }
  return sf;
}

}  // namespace longtail
