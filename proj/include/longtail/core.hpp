#pragma once

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <unordered_set>
#include <vector>

#include "longtail/common.hpp"

namespace longtail {

// Labeled feature vectors with per-sample split tags. Class 0 is background;
// positive classes are 1..num_classes. Datasets are immutable after load and
// safe for concurrent reads.

enum class Split { pretrain, train, val, test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::pretrain: return "pretrain";
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s, const std::string& context) {
  if (s == "pretrain") return Split::pretrain;
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw Error("bad split '" + s + "', " + context);
}

struct Sample {
  std::string id;
  Split split = Split::train;
  int label = 0;  // 0 = background
  std::vector<double> features;
};

struct Dataset {
  std::vector<Sample> samples;
  int num_classes = 0;  // C, excluding background
  int dim = 0;

  std::size_t size() const { return samples.size(); }
  const Sample& operator[](std::size_t i) const { return samples[i]; }
};

// Sample count distribution over positive classes.
struct LongTailProfile {
  std::map<int, std::size_t> per_class_count;  // class id -> count, classes 1..C
  std::vector<std::size_t> sorted_counts;      // decreasing
  std::size_t total_positives = 0;

  // fraction of positives held by the k most populous classes
  double head_mass(std::size_t k) const {
    if (total_positives == 0) return 0.0;
    if (k > sorted_counts.size()) k = sorted_counts.size();
    std::size_t sum = 0;
    for (std::size_t i = 0; i < k; ++i) sum += sorted_counts[i];
    return static_cast<double>(sum) / static_cast<double>(total_positives);
  }
};

// ---- validation ----

inline void validate_dataset(const Dataset& ds) {
  std::unordered_set<std::string> seen;
  seen.reserve(ds.samples.size());
  for (const auto& s : ds.samples) {
    if (static_cast<int>(s.features.size()) != ds.dim) {
      throw Error("dimension mismatch for sample " + s.id);
    }
    if (s.label < 0 || s.label > ds.num_classes) {
      throw Error("label out of range for sample " + s.id);
    }
    if (!seen.insert(s.id).second) throw Error("duplicate id " + s.id);
  }
}

// ---- LTFV1 file format ----
// line 1:  "LTFV1 <num_samples> <dim> <num_classes>"
// then one line per sample:  "<id> <split> <label> <f1> ... <fd>"

inline Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset file: " + path);

  std::string line;
  if (!std::getline(in, line)) throw Error("malformed header, line 1");
  auto head = split_ws(line);
  if (head.size() != 4 || head[0] != "LTFV1") throw Error("malformed header, line 1");
  const long long n = parse_int(head[1], "header, line 1");
  const long long dim = parse_int(head[2], "header, line 1");
  const long long num_classes = parse_int(head[3], "header, line 1");
  if (n < 0 || dim < 1 || num_classes < 0) throw Error("malformed header, line 1");

  Dataset ds;
  ds.dim = static_cast<int>(dim);
  ds.num_classes = static_cast<int>(num_classes);
  ds.samples.reserve(static_cast<std::size_t>(n));

  std::unordered_set<std::string> seen;
  seen.reserve(static_cast<std::size_t>(n));

  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    auto tok = split_ws(line);
    if (tok.empty()) continue;  // blank lines tolerated
    const std::string where = "line " + std::to_string(lineno);
    if (tok.size() < 3) throw Error("malformed row, " + where);
    Sample s;
    s.id = tok[0];
    s.split = parse_split(tok[1], where);
    long long label = parse_int(tok[2], where);
    if (label < 0 || label > num_classes) throw Error("label out of range, " + where);
    s.label = static_cast<int>(label);
    if (static_cast<long long>(tok.size()) - 3 != dim) {
      throw Error("dimension mismatch, " + where);
    }
    s.features.reserve(static_cast<std::size_t>(dim));
    for (std::size_t i = 3; i < tok.size(); ++i) {
      s.features.push_back(parse_double(tok[i], where));
    }
    if (!seen.insert(s.id).second) throw Error("duplicate id, " + where);
    ds.samples.push_back(std::move(s));
  }
  if (static_cast<long long>(ds.samples.size()) != n) {
    throw Error("sample count mismatch: header says " + std::to_string(n) + ", file has " +
                std::to_string(ds.samples.size()));
  }
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write dataset file: " + path);
  out << "LTFV1 " << ds.samples.size() << " " << ds.dim << " " << ds.num_classes << "\n";
  for (const auto& s : ds.samples) {
    out << s.id << " " << split_name(s.split) << " " << s.label;
    for (double f : s.features) out << " " << format_double(f);
    out << "\n";
  }
}

// ---- profiling ----

inline LongTailProfile profile(const Dataset& ds) {
  LongTailProfile p;
  for (int c = 1; c <= ds.num_classes; ++c) p.per_class_count[c] = 0;
  for (const auto& s : ds.samples) {
    if (s.label > 0) {
      ++p.per_class_count[s.label];
      ++p.total_positives;
    }
  }
  p.sorted_counts.reserve(p.per_class_count.size());
  for (const auto& [cls, cnt] : p.per_class_count) p.sorted_counts.push_back(cnt);
  std::sort(p.sorted_counts.begin(), p.sorted_counts.end(), std::greater<std::size_t>());
  return p;
}

// ---- index selections ----

inline IndexList all_indices(const Dataset& ds) {
  IndexList idx(ds.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return idx;
}

inline IndexList split_indices(const Dataset& ds, Split split) {
  IndexList idx;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.samples[i].split == split) idx.push_back(i);
  }
  return idx;
}

inline IndexList positive_indices(const Dataset& ds, const IndexList& base) {
  IndexList idx;
  for (auto i : base) {
    if (ds.samples[i].label > 0) idx.push_back(i);
  }
  return idx;
}

inline IndexList negative_indices(const Dataset& ds, const IndexList& base) {
  IndexList idx;
  for (auto i : base) {
    if (ds.samples[i].label == 0) idx.push_back(i);
  }
  return idx;
}

inline std::map<int, std::size_t> class_counts(const Dataset& ds, const IndexList& idx) {
  std::map<int, std::size_t> counts;
  for (auto i : idx) {
    if (ds.samples[i].label > 0) ++counts[ds.samples[i].label];
  }
  return counts;
}

}  // namespace longtail
