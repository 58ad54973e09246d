#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "longtail/common.hpp"
#include "longtail/core.hpp"
#include "longtail/parallel.hpp"
#include "longtail/rng.hpp"
#include "longtail/sampling.hpp"

namespace longtail {

// ---------------------------------------------------------------------------
// MLP classifier. dims = {input, hidden..., output}; ReLU on hidden layers,
// identity on the output layer. Output index 0 is background, index k >= 1
// maps to class_set[k-1]. frozen[l] pins layer l during training.
// ---------------------------------------------------------------------------

struct MlpModel {
  std::vector<int> dims;
  std::vector<int> class_set;            // sorted ascending, size = dims.back() - 1
  std::vector<std::uint8_t> frozen;      // one flag per layer
  std::vector<std::vector<double>> weights;  // [layer][out * in], row-major
  std::vector<std::vector<double>> biases;   // [layer][out]

  std::size_t num_layers() const { return weights.size(); }
  int input_dim() const { return dims.front(); }
  int output_dim() const { return dims.back(); }
  int feature_dim() const { return dims[dims.size() - 2]; }

  // output index for a dataset label; labels outside class_set act as background
  int target_index(int label) const {
    if (label <= 0) return 0;
    auto it = std::lower_bound(class_set.begin(), class_set.end(), label);
    if (it == class_set.end() || *it != label) return 0;
    return static_cast<int>(it - class_set.begin()) + 1;
  }
};

inline MlpModel init_mlp(int input_dim, const std::vector<int>& hidden_dims,
                         const std::vector<int>& class_set, std::uint64_t seed,
                         double init_scale = 1.0) {
  if (input_dim < 1) throw Error("init_mlp: input_dim must be >= 1");
  if (class_set.empty()) throw Error("init_mlp: empty class set");
  if (!std::is_sorted(class_set.begin(), class_set.end()) ||
      std::adjacent_find(class_set.begin(), class_set.end()) != class_set.end()) {
    throw Error("init_mlp: class set must be sorted and unique");
  }
  for (int c : class_set) {
    if (c < 1) throw Error("init_mlp: class ids must be >= 1");
  }
  for (int h : hidden_dims) {
    if (h < 1) throw Error("init_mlp: hidden dims must be >= 1");
  }
  MlpModel m;
  m.dims.push_back(input_dim);
  for (int h : hidden_dims) m.dims.push_back(h);
  m.dims.push_back(static_cast<int>(class_set.size()) + 1);
  m.class_set = class_set;

  Rng rng(seed_mix(seed, 0x6d6c70));
  const std::size_t layers = m.dims.size() - 1;
  m.frozen.assign(layers, 0);
  for (std::size_t l = 0; l < layers; ++l) {
    const int fan_in = m.dims[l];
    const int fan_out = m.dims[l + 1];
    const double s = init_scale / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> w(static_cast<std::size_t>(fan_in) * static_cast<std::size_t>(fan_out));
    for (auto& v : w) v = rng.uniform(-s, s);
    m.weights.push_back(std::move(w));
    m.biases.emplace_back(static_cast<std::size_t>(fan_out), 0.0);
  }
  return m;
}

struct ForwardTrace {
  std::vector<std::vector<double>> pre;  // per layer, before activation
  std::vector<std::vector<double>> act;  // act[0] = input, act[l+1] = layer l output
};

inline void mlp_forward_trace(const MlpModel& m, const std::vector<double>& x,
                              ForwardTrace& tr) {
  if (static_cast<int>(x.size()) != m.input_dim()) {
    throw Error("mlp_forward: input dimension mismatch");
  }
  const std::size_t layers = m.num_layers();
  tr.pre.resize(layers);
  tr.act.resize(layers + 1);
  tr.act[0] = x;
  for (std::size_t l = 0; l < layers; ++l) {
    const int n_in = m.dims[l];
    const int n_out = m.dims[l + 1];
    const auto& w = m.weights[l];
    const auto& b = m.biases[l];
    const auto& in = tr.act[l];
    auto& z = tr.pre[l];
    z.assign(static_cast<std::size_t>(n_out), 0.0);
    for (int o = 0; o < n_out; ++o) {
      double acc = b[static_cast<std::size_t>(o)];
      const double* row = w.data() + static_cast<std::size_t>(o) * static_cast<std::size_t>(n_in);
      for (int i = 0; i < n_in; ++i) acc += row[i] * in[static_cast<std::size_t>(i)];
      z[static_cast<std::size_t>(o)] = acc;
    }
    auto& a = tr.act[l + 1];
    a = z;
    if (l + 1 < layers) {
      for (auto& v : a) v = v > 0.0 ? v : 0.0;
    }
  }
}

inline std::vector<double> mlp_forward(const MlpModel& m, const std::vector<double>& x) {
  ForwardTrace tr;
  mlp_forward_trace(m, x, tr);
  return tr.act.back();
}

// softmax with max subtraction; never under/overflows for finite logits
inline std::vector<double> softmax(const std::vector<double>& logits) {
  std::vector<double> p(logits.size());
  const double mx = *std::max_element(logits.begin(), logits.end());
  double denom = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    denom += p[i];
  }
  for (auto& v : p) v /= denom;
  return p;
}

inline double softmax_xent(const std::vector<double>& logits, int target) {
  if (target < 0 || target >= static_cast<int>(logits.size())) {
    throw Error("softmax_xent: target out of range");
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double denom = 0.0;
  for (double v : logits) denom += std::exp(v - mx);
  return std::log(denom) - (logits[static_cast<std::size_t>(target)] - mx);
}

struct Gradients {
  std::vector<std::vector<double>> w;
  std::vector<std::vector<double>> b;
};

inline Gradients zero_gradients(const MlpModel& m) {
  Gradients g;
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    g.w.emplace_back(m.weights[l].size(), 0.0);
    g.b.emplace_back(m.biases[l].size(), 0.0);
  }
  return g;
}

// Accumulates the *sum* over the index list of per-sample cross-entropy
// gradients (duplicate indices count twice). Callers scale as needed.
inline Gradients batch_grad_sum(const MlpModel& m, const Dataset& ds,
                                const IndexList& batch, double* loss_sum = nullptr) {
  Gradients g = zero_gradients(m);
  const std::size_t layers = m.num_layers();
  ForwardTrace tr;
  std::vector<double> delta, delta_prev;
  double total_loss = 0.0;
  for (auto idx : batch) {
    const Sample& s = ds.samples[idx];
    mlp_forward_trace(m, s.features, tr);
    const int target = m.target_index(s.label);
    total_loss += softmax_xent(tr.act.back(), target);
    delta = softmax(tr.act.back());
    delta[static_cast<std::size_t>(target)] -= 1.0;
    for (std::size_t l = layers; l-- > 0;) {
      const int n_in = m.dims[l];
      const int n_out = m.dims[l + 1];
      const auto& in = tr.act[l];
      auto& gw = g.w[l];
      auto& gb = g.b[l];
      for (int o = 0; o < n_out; ++o) {
        const double d = delta[static_cast<std::size_t>(o)];
        gb[static_cast<std::size_t>(o)] += d;
        double* grow = gw.data() + static_cast<std::size_t>(o) * static_cast<std::size_t>(n_in);
        for (int i = 0; i < n_in; ++i) grow[i] += d * in[static_cast<std::size_t>(i)];
      }
      if (l == 0) break;
      delta_prev.assign(static_cast<std::size_t>(n_in), 0.0);
      const auto& w = m.weights[l];
      for (int o = 0; o < n_out; ++o) {
        const double d = delta[static_cast<std::size_t>(o)];
        const double* row = w.data() + static_cast<std::size_t>(o) * static_cast<std::size_t>(n_in);
        for (int i = 0; i < n_in; ++i) delta_prev[static_cast<std::size_t>(i)] += d * row[i];
      }
      // ReLU gate at the layer below (z <= 0 kills the path)
      const auto& z = tr.pre[l - 1];
      for (int i = 0; i < n_in; ++i) {
        if (z[static_cast<std::size_t>(i)] <= 0.0) delta_prev[static_cast<std::size_t>(i)] = 0.0;
      }
      delta.swap(delta_prev);
    }
  }
  if (loss_sum != nullptr) *loss_sum = total_loss;
  return g;
}

enum class BatchSource { shuffle, class_uniform };

inline const char* batch_source_name(BatchSource s) {
  return s == BatchSource::shuffle ? "shuffle" : "class-uniform";
}

struct TrainConfig {
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;  // weights only, biases stay undecayed
  int epochs = 30;
  int batch_size = 64;
  BatchSource batch_source = BatchSource::shuffle;
  double pos_fraction = 0.25;  // class_uniform only
  double init_scale = 1.0;
  std::vector<int> hidden_dims = {64, 32};
  std::uint64_t seed = 1;

  void validate() const {
    if (learning_rate < 0.0) throw Error("train: learning_rate must be >= 0");
    if (momentum < 0.0 || momentum >= 1.0) throw Error("train: momentum must be in [0, 1)");
    if (weight_decay < 0.0) throw Error("train: weight_decay must be >= 0");
    if (epochs < 0) throw Error("train: epochs must be >= 0");  // 0 = keep init
    if (batch_size < 1) throw Error("train: batch_size must be >= 1");
    if (pos_fraction <= 0.0 || pos_fraction >= 1.0) {
      throw Error("train: pos_fraction must be in (0, 1)");
    }
    if (init_scale < 0.0) throw Error("train: init_scale must be >= 0");
    if (hidden_dims.empty()) throw Error("train: at least one hidden layer required");
  }
};

struct TrainResult {
  std::vector<double> loss_trace;  // mean per-sample loss per epoch
  double final_loss = 0.0;
  std::size_t total_batches = 0;
};

// SGD with classical momentum: v <- mu*v - lr*(g/B + wd*w), w <- w + v.
// Frozen layers are skipped entirely. Throws on non-finite loss.
inline TrainResult train_mlp(MlpModel& m, const Dataset& ds, const IndexList& subset,
                             const TrainConfig& cfg) {
  cfg.validate();
  if (subset.empty()) throw Error("train: empty subset");
  for (auto i : subset) {
    const int label = ds.samples[i].label;
    if (label != 0 && m.target_index(label) == 0) {
      throw Error("train: label " + std::to_string(label) + " outside the model class set");
    }
  }

  Gradients vel = zero_gradients(m);
  TrainResult res;
  Rng shuffle_rng(seed_mix(cfg.seed, 0x736866));
  std::optional<UniformBatcher> batcher;
  if (cfg.batch_source == BatchSource::class_uniform) {
    batcher.emplace(ds, subset, cfg.batch_size, cfg.pos_fraction,
                    seed_mix(cfg.seed, 0x7562), &m.class_set);
  }

  IndexList order = subset;
  const std::size_t steps_shuffle =
      (subset.size() + static_cast<std::size_t>(cfg.batch_size) - 1) /
      static_cast<std::size_t>(cfg.batch_size);
  const std::size_t steps = std::max<std::size_t>(1, steps_shuffle);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    std::size_t epoch_samples = 0;
    if (cfg.batch_source == BatchSource::shuffle) shuffle_rng.shuffle(order);
    for (std::size_t step = 0; step < steps; ++step) {
      IndexList batch;
      if (cfg.batch_source == BatchSource::shuffle) {
        const std::size_t lo = step * static_cast<std::size_t>(cfg.batch_size);
        const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(cfg.batch_size));
        if (lo >= hi) continue;
        batch.assign(order.begin() + static_cast<std::ptrdiff_t>(lo),
                     order.begin() + static_cast<std::ptrdiff_t>(hi));
      } else {
        batch = batcher->next_batch();
      }
      double loss_sum = 0.0;
      Gradients g = batch_grad_sum(m, ds, batch, &loss_sum);
      if (!std::isfinite(loss_sum)) throw Error("train: loss diverged (non-finite)");
      epoch_loss += loss_sum;
      epoch_samples += batch.size();
      const double inv_b = 1.0 / static_cast<double>(batch.size());
      for (std::size_t l = 0; l < m.num_layers(); ++l) {
        if (m.frozen[l]) continue;
        auto& w = m.weights[l];
        auto& b = m.biases[l];
        auto& vw = vel.w[l];
        auto& vb = vel.b[l];
        for (std::size_t i = 0; i < w.size(); ++i) {
          const double grad = g.w[l][i] * inv_b + cfg.weight_decay * w[i];
          vw[i] = cfg.momentum * vw[i] - cfg.learning_rate * grad;
          w[i] += vw[i];
        }
        for (std::size_t i = 0; i < b.size(); ++i) {
          vb[i] = cfg.momentum * vb[i] - cfg.learning_rate * (g.b[l][i] * inv_b);
          b[i] += vb[i];
        }
      }
      ++res.total_batches;
    }
    res.loss_trace.push_back(epoch_samples > 0 ? epoch_loss / static_cast<double>(epoch_samples)
                                               : 0.0);
  }
  res.final_loss = res.loss_trace.empty() ? 0.0 : res.loss_trace.back();
  return res;
}

// Child keeps the parent's hidden stack bit for bit (weights, biases, freeze
// flags); only the output head is re-initialized for the new class set.
inline MlpModel spawn_child(const MlpModel& parent, const std::vector<int>& child_classes,
                            std::uint64_t seed, double init_scale = 1.0) {
  if (child_classes.empty()) throw Error("spawn_child: empty class set");
  if (!std::is_sorted(child_classes.begin(), child_classes.end()) ||
      std::adjacent_find(child_classes.begin(), child_classes.end()) != child_classes.end()) {
    throw Error("spawn_child: class set must be sorted and unique");
  }
  MlpModel child;
  child.dims.assign(parent.dims.begin(), parent.dims.end() - 1);
  child.dims.push_back(static_cast<int>(child_classes.size()) + 1);
  child.class_set = child_classes;
  child.frozen = parent.frozen;
  child.frozen.back() = 0;  // a fresh head always trains
  const std::size_t layers = parent.num_layers();
  for (std::size_t l = 0; l + 1 < layers; ++l) {
    child.weights.push_back(parent.weights[l]);
    child.biases.push_back(parent.biases[l]);
  }
  Rng rng(seed_mix(seed, 0x686561));
  const int fan_in = child.dims[child.dims.size() - 2];
  const int fan_out = child.dims.back();
  const double s = init_scale / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> w(static_cast<std::size_t>(fan_in) * static_cast<std::size_t>(fan_out));
  for (auto& v : w) v = rng.uniform(-s, s);
  child.weights.push_back(std::move(w));
  child.biases.emplace_back(static_cast<std::size_t>(fan_out), 0.0);
  return child;
}

// ---------------------------------------------------------------------------
// Feature extraction: last hidden activation, optionally L2-normalized.
// ---------------------------------------------------------------------------

struct FeatureMatrix {
  std::vector<std::string> ids;
  std::vector<int> labels;
  std::size_t dim = 0;
  std::vector<std::vector<double>> rows;

  std::size_t size() const { return rows.size(); }
};

inline void l2_normalize(std::vector<double>& v) {
  double n2 = 0.0;
  for (double x : v) n2 += x * x;
  if (n2 <= 0.0) return;  // zero vector stays zero
  const double inv = 1.0 / std::sqrt(n2);
  for (auto& x : v) x *= inv;
}

// single-sample hidden feature, matching extract_features(normalize=true)
inline std::vector<double> extract_feature_vector(const MlpModel& m,
                                                  const std::vector<double>& x) {
  ForwardTrace tr;
  mlp_forward_trace(m, x, tr);
  std::vector<double> f = tr.act[tr.act.size() - 2];
  l2_normalize(f);
  return f;
}

inline FeatureMatrix extract_features(const MlpModel& m, const Dataset& ds,
                                      const IndexList& indices, bool normalize = true,
                                      int threads = 1) {
  FeatureMatrix fm;
  fm.dim = static_cast<std::size_t>(m.feature_dim());
  fm.ids.resize(indices.size());
  fm.labels.resize(indices.size());
  fm.rows.resize(indices.size());
  parallel_for(indices.size(), threads, [&](std::size_t k) {
    const Sample& s = ds.samples[indices[k]];
    ForwardTrace tr;
    mlp_forward_trace(m, s.features, tr);
    std::vector<double> feat = tr.act[tr.act.size() - 2];
    if (normalize) l2_normalize(feat);
    fm.ids[k] = s.id;
    fm.labels[k] = s.label;
    fm.rows[k] = std::move(feat);
  });
  return fm;
}

// ---------------------------------------------------------------------------
// One-vs-rest linear SVMs on extracted features. Full-batch subgradient
// descent on the L2-regularized hinge objective with step 1/(lambda*t),
// returning the best-objective iterate seen (the zero start included, so the
// result never scores worse than the trivial solution).
// ---------------------------------------------------------------------------

struct SvmConfig {
  double lambda = 1e-4;
  int iterations = 1000;

  void validate() const {
    if (lambda <= 0.0) throw Error("svm: lambda must be > 0");
    if (iterations < 1) throw Error("svm: iterations must be >= 1");
  }
};

struct LinearSvm {
  int cls = 0;
  bool trained = false;  // false when the class lacked pos or neg examples
  double bias = 0.0;
  std::vector<double> w;
};

struct SvmBank {
  std::size_t dim = 0;
  double lambda = 1e-4;
  std::vector<LinearSvm> machines;  // in class_set order

  std::vector<int> class_set() const {
    std::vector<int> cs;
    cs.reserve(machines.size());
    for (const auto& m : machines) cs.push_back(m.cls);
    return cs;
  }
};

namespace detail {

inline double svm_objective(const std::vector<double>& w, double bias, double lambda,
                            const std::vector<std::vector<double>>& xs,
                            const std::vector<double>& ys) {
  // bias is a regularized coordinate (constant-feature augmentation), so the
  // 1/(lambda t) schedule contracts it like any other weight
  double reg = bias * bias;
  for (double v : w) reg += v * v;
  reg *= 0.5 * lambda;
  double hinge = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    double dot = bias;
    for (std::size_t j = 0; j < w.size(); ++j) dot += w[j] * xs[i][j];
    hinge += std::max(0.0, 1.0 - ys[i] * dot);
  }
  return reg + hinge / static_cast<double>(xs.size());
}

inline LinearSvm train_binary_svm(int cls, const FeatureMatrix& fm,
                                  const SvmConfig& cfg) {
  LinearSvm svm;
  svm.cls = cls;
  svm.w.assign(fm.dim, 0.0);
  std::vector<double> ys(fm.size());
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < fm.size(); ++i) {
    ys[i] = fm.labels[i] == cls ? 1.0 : -1.0;
    if (ys[i] > 0.0) ++n_pos;
  }
  if (n_pos == 0 || n_pos == fm.size()) {
    svm.trained = false;  // degenerate label split; caller reports sentinels
    return svm;
  }
  const std::size_t n = fm.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> w(fm.dim, 0.0), gw(fm.dim);
  double bias = 0.0;
  std::vector<double> best_w = w;
  double best_bias = 0.0;
  double best_obj = 0.0;
  // one margin pass per iteration serves both the objective at w_t and the
  // subgradient step to w_{t+1}; iterates w_0..w_T are all candidates, so the
  // result never scores worse than the zero start
  for (int t = 0; t <= cfg.iterations; ++t) {
    std::fill(gw.begin(), gw.end(), 0.0);
    double gb = 0.0;
    double hinge = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double dot = bias;
      const auto& x = fm.rows[i];
      for (std::size_t j = 0; j < fm.dim; ++j) dot += w[j] * x[j];
      const double margin = ys[i] * dot;
      if (margin < 1.0) {
        hinge += 1.0 - margin;
        for (std::size_t j = 0; j < fm.dim; ++j) gw[j] -= ys[i] * x[j];
        gb -= ys[i];
      }
    }
    double reg = bias * bias;
    for (double v : w) reg += v * v;
    const double obj = 0.5 * cfg.lambda * reg + hinge * inv_n;
    if (t == 0 || obj < best_obj) {
      best_obj = obj;
      best_w = w;
      best_bias = bias;
    }
    if (t == cfg.iterations) break;
    const double eta = 1.0 / (cfg.lambda * static_cast<double>(t + 1));
    for (std::size_t j = 0; j < fm.dim; ++j) {
      w[j] -= eta * (cfg.lambda * w[j] + gw[j] * inv_n);
    }
    bias -= eta * (cfg.lambda * bias + gb * inv_n);
  }
  svm.trained = true;
  svm.w = std::move(best_w);
  svm.bias = best_bias;
  return svm;
}

}  // namespace detail

inline SvmBank train_ovr_svm(const FeatureMatrix& fm, const std::vector<int>& class_set,
                             const SvmConfig& cfg = {}, int threads = 1) {
  cfg.validate();
  if (fm.size() == 0) throw Error("svm: empty feature matrix");
  if (class_set.empty()) throw Error("svm: empty class set");
  SvmBank bank;
  bank.dim = fm.dim;
  bank.lambda = cfg.lambda;
  bank.machines.resize(class_set.size());
  parallel_for(class_set.size(), threads, [&](std::size_t k) {
    bank.machines[k] = detail::train_binary_svm(class_set[k], fm, cfg);
  });
  return bank;
}

// scores in bank order; untrained machines report the sentinel
inline std::vector<double> svm_scores(const SvmBank& bank, const std::vector<double>& x) {
  if (x.size() != bank.dim) throw Error("svm_scores: dimension mismatch");
  std::vector<double> out(bank.machines.size());
  for (std::size_t k = 0; k < bank.machines.size(); ++k) {
    const auto& m = bank.machines[k];
    if (!m.trained) {
      out[k] = kSentinelScore;
      continue;
    }
    double dot = m.bias;
    for (std::size_t j = 0; j < bank.dim; ++j) dot += m.w[j] * x[j];
    out[k] = dot;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model files. Plain text, 17 significant digits so doubles round-trip
// bit-exactly.
// ---------------------------------------------------------------------------

inline void save_mlp(const MlpModel& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write model file: " + path);
  out << "MLP1\n";
  out << "dims";
  for (int d : m.dims) out << ' ' << d;
  out << "\nclasses";
  for (int c : m.class_set) out << ' ' << c;
  out << "\nfrozen";
  for (auto f : m.frozen) out << ' ' << static_cast<int>(f);
  out << "\n";
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    out << "layer " << l << "\n";
    const int n_in = m.dims[l];
    const int n_out = m.dims[l + 1];
    for (int o = 0; o < n_out; ++o) {
      const double* row = m.weights[l].data() + static_cast<std::size_t>(o) * static_cast<std::size_t>(n_in);
      for (int i = 0; i < n_in; ++i) {
        if (i > 0) out << ' ';
        out << format_double(row[i]);
      }
      out << "\n";
    }
    for (int o = 0; o < n_out; ++o) {
      if (o > 0) out << ' ';
      out << format_double(m.biases[l][static_cast<std::size_t>(o)]);
    }
    out << "\n";
  }
  if (!out) throw Error("write failed: " + path);
}

namespace detail {

inline std::vector<std::string> expect_line(std::istream& in, const std::string& what) {
  std::string line;
  if (!std::getline(in, line)) throw Error("model file truncated, expected " + what);
  return split_ws(line);
}

}  // namespace detail

inline MlpModel load_mlp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open model file: " + path);
  std::string line;
  if (!std::getline(in, line) || trim(line) != "MLP1") {
    throw Error("not an MLP1 file: " + path);
  }
  MlpModel m;
  auto dims = detail::expect_line(in, "dims");
  if (dims.empty() || dims[0] != "dims" || dims.size() < 3) {
    throw Error("bad dims line in " + path);
  }
  for (std::size_t i = 1; i < dims.size(); ++i) {
    m.dims.push_back(static_cast<int>(parse_int(dims[i], "dims")));
  }
  auto classes = detail::expect_line(in, "classes");
  if (classes.empty() || classes[0] != "classes") throw Error("bad classes line in " + path);
  for (std::size_t i = 1; i < classes.size(); ++i) {
    m.class_set.push_back(static_cast<int>(parse_int(classes[i], "classes")));
  }
  if (static_cast<int>(m.class_set.size()) + 1 != m.dims.back()) {
    throw Error("class set inconsistent with output dim in " + path);
  }
  auto frozen = detail::expect_line(in, "frozen");
  if (frozen.empty() || frozen[0] != "frozen" || frozen.size() != m.dims.size()) {
    throw Error("bad frozen line in " + path);
  }
  for (std::size_t i = 1; i < frozen.size(); ++i) {
    m.frozen.push_back(static_cast<std::uint8_t>(parse_int(frozen[i], "frozen") != 0));
  }
  for (std::size_t l = 0; l + 1 < m.dims.size(); ++l) {
    auto hd = detail::expect_line(in, "layer header");
    if (hd.size() != 2 || hd[0] != "layer" ||
        parse_int(hd[1], "layer index") != static_cast<long long>(l)) {
      throw Error("bad layer header in " + path);
    }
    const int n_in = m.dims[l];
    const int n_out = m.dims[l + 1];
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(n_in) * static_cast<std::size_t>(n_out));
    for (int o = 0; o < n_out; ++o) {
      auto row = detail::expect_line(in, "weight row");
      if (static_cast<int>(row.size()) != n_in) {
        throw Error("weight row length mismatch in " + path);
      }
      for (const auto& tok : row) w.push_back(parse_double(tok, "weight"));
    }
    auto brow = detail::expect_line(in, "bias row");
    if (static_cast<int>(brow.size()) != n_out) {
      throw Error("bias row length mismatch in " + path);
    }
    std::vector<double> b;
    b.reserve(static_cast<std::size_t>(n_out));
    for (const auto& tok : brow) b.push_back(parse_double(tok, "bias"));
    m.weights.push_back(std::move(w));
    m.biases.push_back(std::move(b));
  }
  return m;
}

inline void save_svm(const SvmBank& bank, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write svm file: " + path);
  out << "SVM1\n";
  out << "dim " << bank.dim << "\n";
  out << "lambda " << format_double(bank.lambda) << "\n";
  out << "machines " << bank.machines.size() << "\n";
  for (const auto& m : bank.machines) {
    out << "class " << m.cls << ' ' << (m.trained ? 1 : 0) << ' '
        << format_double(m.bias) << "\n";
    for (std::size_t j = 0; j < bank.dim; ++j) {
      if (j > 0) out << ' ';
      out << format_double(j < m.w.size() ? m.w[j] : 0.0);
    }
    out << "\n";
  }
  if (!out) throw Error("write failed: " + path);
}

inline SvmBank load_svm(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open svm file: " + path);
  std::string line;
  if (!std::getline(in, line) || trim(line) != "SVM1") {
    throw Error("not an SVM1 file: " + path);
  }
  SvmBank bank;
  auto dim = detail::expect_line(in, "dim");
  if (dim.size() != 2 || dim[0] != "dim") throw Error("bad dim line in " + path);
  bank.dim = static_cast<std::size_t>(parse_int(dim[1], "dim"));
  auto lambda = detail::expect_line(in, "lambda");
  if (lambda.size() != 2 || lambda[0] != "lambda") throw Error("bad lambda line in " + path);
  bank.lambda = parse_double(lambda[1], "lambda");
  auto count = detail::expect_line(in, "machines");
  if (count.size() != 2 || count[0] != "machines") throw Error("bad machines line in " + path);
  const long long k = parse_int(count[1], "machines");
  for (long long i = 0; i < k; ++i) {
    auto hd = detail::expect_line(in, "class header");
    if (hd.size() != 4 || hd[0] != "class") throw Error("bad class header in " + path);
    LinearSvm m;
    m.cls = static_cast<int>(parse_int(hd[1], "class id"));
    m.trained = parse_int(hd[2], "trained flag") != 0;
    m.bias = parse_double(hd[3], "bias");
    auto row = detail::expect_line(in, "svm weights");
    if (row.size() != bank.dim) throw Error("svm weight row length mismatch in " + path);
    m.w.reserve(bank.dim);
    for (const auto& tok : row) m.w.push_back(parse_double(tok, "svm weight"));
    bank.machines.push_back(std::move(m));
  }
  return bank;
}

}  // namespace longtail
