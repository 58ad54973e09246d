#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "longtail/common.hpp"
#include "longtail/core.hpp"
#include "longtail/rng.hpp"

namespace longtail {

// Subset schemes for long-tailed training data. rand_pos and rand_all sample
// globally and preserve the tail shape; pseudo_uniform caps per-class counts
// at N_max, flattening the head while leaving small classes untouched.

enum class SubsetScheme { rand_pos, rand_all, pseudo_uniform };

inline const char* scheme_name(SubsetScheme s) {
  switch (s) {
    case SubsetScheme::rand_pos: return "rand-pos";
    case SubsetScheme::rand_all: return "rand-all";
    case SubsetScheme::pseudo_uniform: return "pseudo-uniform";
  }
  return "?";
}

struct SampleSubset {
  const Dataset* base = nullptr;
  IndexList kept;  // ascending dataset indices, restricted to the source selection
  SubsetScheme scheme = SubsetScheme::rand_pos;
  double ratio = 1.0;       // r for rand_pos / rand_all
  long long n_max = 0;      // cap for pseudo_uniform
  double realized_ratio = 1.0;
  std::uint64_t seed = 0;
};

namespace detail {

inline IndexList pick_uniform(const IndexList& pool, std::size_t k, Rng& rng) {
  auto chosen = rng.sample_without_replacement(pool, k);
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

}  // namespace detail

// Keeps round(r*N+) positives drawn uniformly over all positives (global, not
// per class) and every negative.
inline SampleSubset rand_pos(const Dataset& ds, const IndexList& source, double r,
                             std::uint64_t seed) {
  if (r <= 0.0 || r > 1.0) throw Error("rand_pos: r must be in (0, 1]");
  const IndexList pos = positive_indices(ds, source);
  const IndexList neg = negative_indices(ds, source);
  if (pos.empty()) throw Error("rand_pos: no positive samples");

  Rng rng(seed_mix(seed, 0x706f73));
  const std::size_t keep = static_cast<std::size_t>(round_half_up(r * static_cast<double>(pos.size())));
  IndexList kept = detail::pick_uniform(pos, keep, rng);
  kept.insert(kept.end(), neg.begin(), neg.end());
  std::sort(kept.begin(), kept.end());

  SampleSubset out;
  out.base = &ds;
  out.kept = std::move(kept);
  out.scheme = SubsetScheme::rand_pos;
  out.ratio = r;
  out.realized_ratio = pos.empty() ? 0.0 : static_cast<double>(keep) / static_cast<double>(pos.size());
  out.seed = seed;
  return out;
}

// Positives and negatives subsampled independently at the same ratio.
inline SampleSubset rand_all(const Dataset& ds, const IndexList& source, double r,
                             std::uint64_t seed) {
  if (r <= 0.0 || r > 1.0) throw Error("rand_all: r must be in (0, 1]");
  const IndexList pos = positive_indices(ds, source);
  const IndexList neg = negative_indices(ds, source);
  if (pos.empty()) throw Error("rand_all: no positive samples");

  Rng pos_rng(seed_mix(seed, 0x706f73));
  Rng neg_rng(seed_mix(seed, 0x6e6567));
  const std::size_t keep_pos = static_cast<std::size_t>(round_half_up(r * static_cast<double>(pos.size())));
  const std::size_t keep_neg = static_cast<std::size_t>(round_half_up(r * static_cast<double>(neg.size())));
  IndexList kept = detail::pick_uniform(pos, keep_pos, pos_rng);
  IndexList kept_neg = detail::pick_uniform(neg, keep_neg, neg_rng);
  kept.insert(kept.end(), kept_neg.begin(), kept_neg.end());
  std::sort(kept.begin(), kept.end());

  SampleSubset out;
  out.base = &ds;
  out.kept = std::move(kept);
  out.scheme = SubsetScheme::rand_all;
  out.ratio = r;
  out.realized_ratio = static_cast<double>(keep_pos) / static_cast<double>(pos.size());
  out.seed = seed;
  return out;
}

// Classes above n_max are randomly sampled down to n_max; classes at or below
// the cap keep their exact id sets. Negatives untouched.
inline SampleSubset pseudo_uniform(const Dataset& ds, const IndexList& source,
                                   long long n_max, std::uint64_t seed) {
  if (n_max < 1) throw Error("pseudo_uniform: N_max must be >= 1");
  const IndexList neg = negative_indices(ds, source);

  std::map<int, IndexList> by_class;
  std::size_t total_pos = 0;
  for (auto i : source) {
    if (ds.samples[i].label > 0) {
      by_class[ds.samples[i].label].push_back(i);
      ++total_pos;
    }
  }
  if (total_pos == 0) throw Error("pseudo_uniform: no positive samples");

  IndexList kept;
  std::size_t kept_pos = 0;
  for (auto& [cls, idx] : by_class) {
    if (static_cast<long long>(idx.size()) <= n_max) {
      kept.insert(kept.end(), idx.begin(), idx.end());
      kept_pos += idx.size();
    } else {
      Rng rng(seed_mix(seed, 0x636170, static_cast<std::uint64_t>(cls)));
      auto capped = detail::pick_uniform(idx, static_cast<std::size_t>(n_max), rng);
      kept_pos += capped.size();
      kept.insert(kept.end(), capped.begin(), capped.end());
    }
  }
  kept.insert(kept.end(), neg.begin(), neg.end());
  std::sort(kept.begin(), kept.end());

  SampleSubset out;
  out.base = &ds;
  out.kept = std::move(kept);
  out.scheme = SubsetScheme::pseudo_uniform;
  out.n_max = n_max;
  out.realized_ratio = static_cast<double>(kept_pos) / static_cast<double>(total_pos);
  out.seed = seed;
  return out;
}

// Smallest N_max whose capped positive total reaches ratio r of all positives.
inline long long nmax_for_ratio(const std::map<int, std::size_t>& per_class_counts, double r) {
  if (per_class_counts.empty()) throw Error("nmax_for_ratio: no classes");
  long long total = 0;
  long long max_count = 0;
  for (const auto& [cls, cnt] : per_class_counts) {
    total += static_cast<long long>(cnt);
    max_count = std::max(max_count, static_cast<long long>(cnt));
  }
  if (total == 0) throw Error("nmax_for_ratio: no positives");
  auto capped_total = [&](long long cap) {
    long long sum = 0;
    for (const auto& [cls, cnt] : per_class_counts) {
      sum += std::min(static_cast<long long>(cnt), cap);
    }
    return sum;
  };
  const double min_ratio =
      static_cast<double>(capped_total(1)) / static_cast<double>(total);
  if (r > 1.0 || r < min_ratio) {
    throw Error("nmax_for_ratio: r out of achievable range [" +
                format_metric(min_ratio) + ", 1]");
  }
  long long lo = 1, hi = max_count;
  while (lo < hi) {
    const long long mid = lo + (hi - lo) / 2;
    if (static_cast<double>(capped_total(mid)) / static_cast<double>(total) >= r) {
      hi = mid;
    } else {
      lo = mid + 1;
    }
  }
  return lo;
}

// ---- subset id files: one kept id per line ----

inline void save_subset(const SampleSubset& subset, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write subset file: " + path);
  for (auto i : subset.kept) out << subset.base->samples[i].id << "\n";
}

inline IndexList load_subset(const Dataset& ds, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open subset file: " + path);
  std::unordered_map<std::string, std::size_t> index_of;
  index_of.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) index_of[ds.samples[i].id] = i;
  IndexList kept;
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    auto it = index_of.find(line);
    if (it == index_of.end()) throw Error("subset id not in dataset: " + line);
    kept.push_back(it->second);
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

// ---- class-uniform mini-batches ----

// Deterministic batch stream: round(pos_fraction*batch_size) positive slots
// whose classes are spread as evenly as possible (per-batch class counts
// differ by at most one), remainder background. Draws are with replacement
// across batches.
class UniformBatcher {
 public:
  UniformBatcher(const Dataset& ds, const IndexList& source, int batch_size,
                 double pos_fraction, std::uint64_t seed,
                 const std::vector<int>* class_set = nullptr)
      : ds_(&ds), batch_size_(batch_size), rng_(seed_mix(seed, 0x7562)) {
    if (batch_size < 2) throw Error("uniform_batches: batch_size must be >= 2");
    if (pos_fraction <= 0.0 || pos_fraction >= 1.0) {
      throw Error("uniform_batches: pos_fraction must be in (0, 1)");
    }
    for (auto i : source) {
      const int label = ds.samples[i].label;
      if (label == 0) {
        background_.push_back(i);
      } else {
        by_class_[label].push_back(i);
      }
    }
    if (class_set != nullptr) {
      for (int c : *class_set) {
        if (!by_class_.count(c)) {
          throw Error("uniform_batches: class " + std::to_string(c) + " has zero samples");
        }
      }
    }
    if (by_class_.empty()) throw Error("uniform_batches: no positive samples");
    if (background_.empty()) throw Error("uniform_batches: no background samples");
    for (const auto& [cls, idx] : by_class_) classes_.push_back(cls);
    n_pos_slots_ = static_cast<int>(round_half_up(pos_fraction * batch_size));
    if (n_pos_slots_ < 1) n_pos_slots_ = 1;
    if (n_pos_slots_ >= batch_size) n_pos_slots_ = batch_size - 1;
  }

  IndexList next_batch() {
    IndexList batch;
    batch.reserve(static_cast<std::size_t>(batch_size_));
    // every class gets floor(P/K); a uniformly chosen subset gets one extra
    const int k = static_cast<int>(classes_.size());
    const int base = n_pos_slots_ / k;
    const int extra = n_pos_slots_ % k;
    std::vector<int> chosen = classes_;
    rng_.shuffle(chosen);
    for (int ci = 0; ci < k; ++ci) {
      const int reps = base + (ci < extra ? 1 : 0);
      const auto& pool = by_class_.at(chosen[static_cast<std::size_t>(ci)]);
      for (int rcount = 0; rcount < reps; ++rcount) {
        batch.push_back(pool[static_cast<std::size_t>(rng_.below(pool.size()))]);
      }
    }
    for (int i = n_pos_slots_; i < batch_size_; ++i) {
      batch.push_back(background_[static_cast<std::size_t>(rng_.below(background_.size()))]);
    }
    return batch;
  }

  int positives_per_batch() const { return n_pos_slots_; }
  const std::vector<int>& classes() const { return classes_; }

 private:
  const Dataset* ds_;
  int batch_size_;
  int n_pos_slots_ = 0;
  std::map<int, IndexList> by_class_;
  IndexList background_;
  std::vector<int> classes_;
  Rng rng_;
};

}  // namespace longtail
