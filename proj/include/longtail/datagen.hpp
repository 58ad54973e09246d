#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "longtail/common.hpp"
#include "longtail/core.hpp"
#include "longtail/rng.hpp"

namespace longtail {

// Synthetic long-tailed datasets with a planted two-level Gaussian hierarchy:
// group means -> class means -> samples. The planted class->group map is
// written to a sidecar so clustering can be validated against ground truth.

struct GenConfig {
  int num_classes = 12;       // C
  int dim = 16;               // d
  double zipf_s = 1.0;        // 0 = uniform
  long long n_total = 1500;   // positive sample budget
  int groups = 3;             // planted group count G
  double within_sigma = 0.3;
  double between_sigma = 1.0;
  double background_sigma = 0.0;  // 0 = auto (matches the class shell radius)
  double background_ratio = 3.0;  // negatives = ratio * positives
  double split_pretrain = 0.25;
  double split_train = 0.35;
  double split_val = 0.2;
  double split_test = 0.2;
  std::uint64_t seed = 1;

  void validate() const {
    if (num_classes < 1) throw Error("gen.classes must be >= 1");
    if (dim < 1) throw Error("gen.dim must be >= 1");
    if (zipf_s < 0) throw Error("gen.zipf_s must be >= 0");
    if (groups < 1 || groups > num_classes) throw Error("gen.groups must be in [1, C]");
    if (within_sigma <= 0 || between_sigma <= 0) throw Error("sigmas must be > 0");
    if (background_ratio < 0) throw Error("gen.background_ratio must be >= 0");
    const double sum = split_pretrain + split_train + split_val + split_test;
    if (std::abs(sum - 1.0) > 1e-9) throw Error("split fractions must sum to 1");
    if (split_pretrain < 0 || split_train < 0 || split_val < 0 || split_test < 0) {
      throw Error("split fractions must be >= 0");
    }
    if (n_total < num_classes) throw Error("gen.n_total must be >= gen.classes");
  }
};

// count_k proportional to k^(-s), integerized by largest remainder so the
// counts sum exactly to n_total; every class gets at least one sample.
inline std::vector<long long> zipf_counts(int num_classes, double s, long long n_total) {
  if (num_classes < 1) throw Error("zipf_counts: C must be >= 1");
  if (n_total < num_classes) throw Error("zipf_counts: N_total must be >= C");

  std::vector<double> weights(num_classes);
  double total = 0.0;
  for (int k = 1; k <= num_classes; ++k) {
    weights[k - 1] = std::pow(static_cast<double>(k), -s);
    total += weights[k - 1];
  }

  std::vector<long long> counts(num_classes, 0);
  std::vector<std::pair<double, int>> remainders;
  long long assigned = 0;
  for (int k = 0; k < num_classes; ++k) {
    const double exact = n_total * weights[k] / total;
    counts[k] = static_cast<long long>(std::floor(exact));
    assigned += counts[k];
    remainders.push_back({exact - static_cast<double>(counts[k]), k});
  }
  // largest remainder first; ties to the smaller class index
  std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (long long i = 0; i < n_total - assigned; ++i) {
    ++counts[remainders[static_cast<std::size_t>(i)].second];
  }
  // every class keeps at least one sample; take from the largest class
  for (int k = 0; k < num_classes; ++k) {
    while (counts[k] == 0) {
      auto donor = std::max_element(counts.begin(), counts.end());
      if (*donor <= 1) throw Error("zipf_counts: cannot give every class a sample");
      --(*donor);
      ++counts[k];
    }
  }
  return counts;
}

struct SyntheticTruth {
  std::vector<int> class_group;  // class c (1-based) -> planted group (1-based)
};

inline void save_truth(const SyntheticTruth& truth, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write truth sidecar: " + path);
  for (std::size_t c = 1; c < truth.class_group.size(); ++c) {
    out << c << " " << truth.class_group[c] << "\n";
  }
}

inline SyntheticTruth load_truth(const std::string& path, int num_classes) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open truth sidecar: " + path);
  SyntheticTruth truth;
  truth.class_group.assign(static_cast<std::size_t>(num_classes) + 1, 0);
  std::string line;
  while (std::getline(in, line)) {
    auto tok = split_ws(line);
    if (tok.empty()) continue;
    if (tok.size() != 2) throw Error("bad truth line: " + line);
    long long c = parse_int(tok[0], "truth file");
    long long g = parse_int(tok[1], "truth file");
    if (c < 1 || c > num_classes) throw Error("truth class out of range: " + tok[0]);
    truth.class_group[static_cast<std::size_t>(c)] = static_cast<int>(g);
  }
  for (int c = 1; c <= num_classes; ++c) {
    if (truth.class_group[static_cast<std::size_t>(c)] == 0) {
      throw Error("truth sidecar missing class " + std::to_string(c));
    }
  }
  return truth;
}

namespace detail {

// per-class split quotas by largest remainder, in split declaration order
inline std::vector<long long> split_quotas(long long n, const double* fractions) {
  std::vector<long long> q(4, 0);
  std::vector<std::pair<double, int>> rem;
  long long assigned = 0;
  for (int i = 0; i < 4; ++i) {
    const double exact = n * fractions[i];
    q[i] = static_cast<long long>(std::floor(exact));
    assigned += q[i];
    rem.push_back({exact - static_cast<double>(q[i]), i});
  }
  std::sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (long long i = 0; i < n - assigned; ++i) ++q[rem[static_cast<std::size_t>(i)].second];
  return q;
}

inline std::string sample_id(std::size_t index) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "s%07zu", index);
  return buf;
}

}  // namespace detail

struct SyntheticDataset {
  Dataset dataset;
  SyntheticTruth truth;
};

inline SyntheticDataset generate_synthetic(const GenConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);

  const int C = cfg.num_classes;
  const int d = cfg.dim;
  const int G = cfg.groups;

  // group means
  std::vector<std::vector<double>> group_means(static_cast<std::size_t>(G),
                                               std::vector<double>(d));
  for (auto& gm : group_means) {
    for (double& v : gm) v = cfg.between_sigma * rng.normal();
  }

  // classes assigned to groups round-robin, then class means drawn near the group mean
  SyntheticTruth truth;
  truth.class_group.assign(static_cast<std::size_t>(C) + 1, 0);
  std::vector<std::vector<double>> class_means(static_cast<std::size_t>(C) + 1);
  for (int c = 1; c <= C; ++c) {
    const int g = (c - 1) % G;
    truth.class_group[static_cast<std::size_t>(c)] = g + 1;
    auto mean = group_means[static_cast<std::size_t>(g)];
    for (double& v : mean) v += cfg.within_sigma * rng.normal();
    class_means[static_cast<std::size_t>(c)] = std::move(mean);
  }

  const auto counts = zipf_counts(C, cfg.zipf_s, cfg.n_total);
  const long long n_background = round_half_up(cfg.background_ratio * cfg.n_total);

  // background spread defaults to the class shell radius so negatives overlap
  double bg_sigma = cfg.background_sigma;
  if (bg_sigma <= 0.0) {
    bg_sigma = std::sqrt(cfg.between_sigma * cfg.between_sigma +
                         2.0 * cfg.within_sigma * cfg.within_sigma);
  }

  Dataset ds;
  ds.num_classes = C;
  ds.dim = d;
  ds.samples.reserve(static_cast<std::size_t>(cfg.n_total + n_background));

  const double fractions[4] = {cfg.split_pretrain, cfg.split_train, cfg.split_val,
                               cfg.split_test};
  const Split split_order[4] = {Split::pretrain, Split::train, Split::val, Split::test};

  std::size_t next_index = 0;
  auto emit = [&](int label, Split split, std::vector<double> features) {
    Sample s;
    s.id = detail::sample_id(next_index++);
    s.split = split;
    s.label = label;
    s.features = std::move(features);
    ds.samples.push_back(std::move(s));
  };

  for (int c = 1; c <= C; ++c) {
    const auto quotas = detail::split_quotas(counts[static_cast<std::size_t>(c - 1)], fractions);
    for (int part = 0; part < 4; ++part) {
      for (long long k = 0; k < quotas[static_cast<std::size_t>(part)]; ++k) {
        std::vector<double> x = class_means[static_cast<std::size_t>(c)];
        for (double& v : x) v += cfg.within_sigma * rng.normal();
        emit(c, split_order[part], std::move(x));
      }
    }
  }

  const auto bg_quotas = detail::split_quotas(n_background, fractions);
  for (int part = 0; part < 4; ++part) {
    for (long long k = 0; k < bg_quotas[static_cast<std::size_t>(part)]; ++k) {
      std::vector<double> x(static_cast<std::size_t>(d));
      for (double& v : x) v = bg_sigma * rng.normal();
      emit(0, split_order[part], std::move(x));
    }
  }

  validate_dataset(ds);
  return {std::move(ds), std::move(truth)};
}

}  // namespace longtail
