// SPDX-License-Identifier: Apache-2.0
//
// Synthetic data, SGD with momentum, softmax cross-entropy training and the
// checkpoint format.
#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ghostforge/model.hpp"
#include "ghostforge/random.hpp"

namespace ghostforge {

// ---------------------------------------------------------------------------
// Data

template <class T>
struct Dataset {
  Tensor<T> images;  // (N, C, H, W)
  std::vector<std::size_t> labels;
  std::size_t classes = 0;

  std::size_t size() const { return labels.size(); }

  Tensor<T> batch(std::span<const std::size_t> idx, std::vector<std::size_t>* batch_labels = nullptr) const {
    const Shape s = images.shape();
    Tensor<T> out(idx.size(), s.c, s.h, s.w);
    const std::size_t per = s.c * s.h * s.w;
    if (batch_labels) batch_labels->clear();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      std::copy_n(images.data() + idx[i] * per, per, out.data() + i * per);
      if (batch_labels) batch_labels->push_back(labels[idx[i]]);
    }
    return out;
  }
};

/// Class k's samples are prototype P_k + N(0, sigma^2) noise. Draw order:
/// all prototypes (class-major), then samples class-major.
template <class T>
Dataset<T> synth_dataset(std::size_t classes, std::size_t per_class, const Shape& shape, std::uint64_t seed,
                         double sigma = 0.3) {
  if (classes < 2) throw ConfigError("synth_dataset: need at least 2 classes");
  if (per_class < 1) throw ConfigError("synth_dataset: need at least 1 sample per class");
  GaussianStream rng(seed);
  const std::size_t per = shape.c * shape.h * shape.w;
  std::vector<double> protos(classes * per);
  for (auto& v : protos) v = rng.next();
  Dataset<T> d;
  d.classes = classes;
  d.images = Tensor<T>(classes * per_class, shape.c, shape.h, shape.w);
  for (std::size_t k = 0; k < classes; ++k)
    for (std::size_t i = 0; i < per_class; ++i) {
      T* dst = d.images.data() + (k * per_class + i) * per;
      for (std::size_t e = 0; e < per; ++e) dst[e] = static_cast<T>(protos[k * per + e] + sigma * rng.next());
      d.labels.push_back(k);
    }
  return d;
}

// ---------------------------------------------------------------------------
// Loss

template <class T>
struct LossResult {
  T loss = T(0);
  Tensor<T> grad;  // d mean-loss / d logits
  std::size_t correct = 0;
};

template <class T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& labels) {
  const std::size_t N = logits.n(), K = logits.c() * logits.h() * logits.w();
  expect_axis("softmax_cross_entropy", "batch", N, labels.size());
  LossResult<T> r{T(0), Tensor<T>(logits.shape()), 0};
  for (std::size_t n = 0; n < N; ++n) {
    if (labels[n] >= K) throw DimensionError("softmax_cross_entropy", "label", K, labels[n]);
    const T* z = logits.data() + n * K;
    T* g = r.grad.data() + n * K;
    const T zmax = *std::max_element(z, z + K);
    T sum = T(0);
    for (std::size_t k = 0; k < K; ++k) sum += std::exp(z[k] - zmax);
    const T lse = zmax + std::log(sum);
    r.loss += lse - z[labels[n]];
    std::size_t best = 0;
    for (std::size_t k = 0; k < K; ++k) {
      g[k] = std::exp(z[k] - lse) / static_cast<T>(N);
      if (z[k] > z[best]) best = k;
    }
    g[labels[n]] -= T(1) / static_cast<T>(N);
    if (best == labels[n]) ++r.correct;
  }
  r.loss /= static_cast<T>(N);
  return r;
}

// ---------------------------------------------------------------------------
// Optimizer

struct TrainConfig {
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t batch_size = 32;
  std::size_t steps = 100;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("train: learning rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train: momentum must lie in [0, 1)");
    if (weight_decay < 0.0) throw ConfigError("train: weight decay must be >= 0");
    if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
  }
};

/// v <- momentum v + g + wd w ; w <- w - lr v. Buffers are skipped.
template <class T>
class Sgd {
 public:
  void step(Module<T>& model, double lr, double momentum, double weight_decay) {
    std::size_t k = 0;
    model.visit("", [&](ParamRef<T>& p) {
      if (!p.trainable()) return;
      if (k == velocity_.size()) velocity_.emplace_back(p.value->size(), T(0));
      auto& v = velocity_[k++];
      if (v.size() != p.value->size()) throw DimensionError("sgd_step", p.name, v.size(), p.value->size());
      if (!p.grad->empty() && p.grad->size() != p.value->size())
        throw DimensionError("sgd_step", p.name, p.value->size(), p.grad->size());
      sgd_update(std::span<T>(*p.value), std::span<const T>(*p.grad), std::span<T>(v), lr, momentum, weight_decay);
    });
  }

  /// One update on raw arrays; an empty gradient counts as zero.
  static void sgd_update(std::span<T> w, std::span<const T> g, std::span<T> v, double lr, double momentum,
                         double weight_decay) {
    if (!g.empty()) expect_axis("sgd_step", "grad", w.size(), g.size());
    expect_axis("sgd_step", "velocity", w.size(), v.size());
    const T mu = static_cast<T>(momentum), wd = static_cast<T>(weight_decay), eta = static_cast<T>(lr);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const T gi = g.empty() ? T(0) : g[i];
      v[i] = mu * v[i] + gi + wd * w[i];
      w[i] -= eta * v[i];
    }
  }

 private:
  std::vector<std::vector<T>> velocity_;
};

// ---------------------------------------------------------------------------
// Checkpoint: text manifest followed by little-endian float32 payload.
//
//   GFCK 1
//   entries <count>
//   <name> <d0>x<d1>x<d2>x<d3> <offset> <count>     (offset/count in elements)
//   ...
//   payload
//   <raw bytes>

struct CheckpointEntry {
  std::string name;
  Shape shape{};
  std::size_t offset = 0;
  std::vector<float> data;
};

struct Checkpoint {
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry& at(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return e;
    throw ConfigError("checkpoint has no entry '" + name + "'");
  }
  bool operator==(const Checkpoint& o) const {
    if (entries.size() != o.entries.size()) return false;
    for (std::size_t i = 0; i < entries.size(); ++i)
      if (entries[i].name != o.entries[i].name || entries[i].shape != o.entries[i].shape ||
          entries[i].data != o.entries[i].data)
        return false;
    return true;
  }
};

template <class T>
Checkpoint make_checkpoint(Module<T>& model) {
  Checkpoint ck;
  std::size_t offset = 0;
  model.visit("", [&](ParamRef<T>& p) {
    CheckpointEntry e{p.name, p.shape, offset, {}};
    e.data.reserve(p.value->size());
    for (T v : *p.value) e.data.push_back(static_cast<float>(v));
    offset += e.data.size();
    ck.entries.push_back(std::move(e));
  });
  return ck;
}

template <class T>
void load_checkpoint(Module<T>& model, const Checkpoint& ck) {
  std::size_t used = 0;
  model.visit("", [&](ParamRef<T>& p) {
    const auto& e = ck.at(p.name);
    expect_axis("load_checkpoint", p.name.c_str(), p.value->size(), e.data.size());
    for (std::size_t i = 0; i < e.data.size(); ++i) (*p.value)[i] = static_cast<T>(e.data[i]);
    ++used;
  });
  if (used != ck.entries.size())
    throw ConfigError("checkpoint has " + std::to_string(ck.entries.size()) + " entries, model expects " +
                      std::to_string(used));
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path, "cannot open for writing");
  out << "GFCK 1\nentries " << ck.entries.size() << "\n";
  std::size_t offset = 0;
  for (const auto& e : ck.entries) {
    out << e.name << ' ' << e.shape.n << 'x' << e.shape.c << 'x' << e.shape.h << 'x' << e.shape.w << ' ' << offset
        << ' ' << e.data.size() << '\n';
    offset += e.data.size();
  }
  out << "payload\n";
  for (const auto& e : ck.entries)
    for (float f : e.data) {
      std::uint32_t u = std::bit_cast<std::uint32_t>(f);
      const char bytes[4] = {static_cast<char>(u & 0xFF), static_cast<char>((u >> 8) & 0xFF),
                             static_cast<char>((u >> 16) & 0xFF), static_cast<char>((u >> 24) & 0xFF)};
      out.write(bytes, 4);
    }
  if (!out) throw IoError(path, "write failed");
}

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path, "cannot open for reading");
  std::string line;
  if (!std::getline(in, line) || line != "GFCK 1") throw IoError(path, "bad magic or version");
  std::size_t count = 0;
  {
    std::getline(in, line);
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag >> count) || tag != "entries") throw IoError(path, "missing entry count");
  }
  Checkpoint ck;
  std::size_t expected_offset = 0;
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) throw IoError(path, "truncated manifest");
    std::istringstream ls(line);
    CheckpointEntry e;
    std::string dims;
    std::size_t n = 0;
    if (!(ls >> e.name >> dims >> e.offset >> n)) throw IoError(path, "bad manifest line: " + line);
    char x1, x2, x3;
    std::istringstream ds(dims);
    if (!(ds >> e.shape.n >> x1 >> e.shape.c >> x2 >> e.shape.h >> x3 >> e.shape.w) || e.shape.numel() != n)
      throw IoError(path, "bad dims for entry " + e.name);
    if (e.offset != expected_offset) throw IoError(path, "non-contiguous offset for entry " + e.name);
    expected_offset += n;
    e.data.resize(n);
    ck.entries.push_back(std::move(e));
  }
  if (!std::getline(in, line) || line != "payload") throw IoError(path, "missing payload marker");
  for (auto& e : ck.entries)
    for (auto& f : e.data) {
      unsigned char b[4];
      if (!in.read(reinterpret_cast<char*>(b), 4)) throw IoError(path, "truncated payload");
      const std::uint32_t u = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                              (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
      f = std::bit_cast<float>(u);
    }
  if (in.peek() != std::char_traits<char>::eof()) throw IoError(path, "trailing bytes after payload");
  return ck;
}

// ---------------------------------------------------------------------------
// Training

class TrainingDiverged : public std::runtime_error {
 public:
  explicit TrainingDiverged(std::size_t step)
      : std::runtime_error("training diverged: non-finite loss at step " + std::to_string(step)), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

template <class T>
struct TrainResult {
  Checkpoint checkpoint;
  std::vector<double> losses;
  double final_train_accuracy = 0.0;
};

/// Seeded Fisher-Yates permutation of [0, n).
inline std::vector<std::size_t> shuffled_indices(std::size_t n, SplitMix64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  return idx;
}

template <class T>
double evaluate(Network<T>& net, const Dataset<T>& data, std::size_t batch_size = 64) {
  if (data.size() == 0) return 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::vector<std::size_t> labels;
  for (std::size_t s = 0; s < data.size(); s += batch_size) {
    const std::size_t e = std::min(data.size(), s + batch_size);
    Tensor<T> x = data.batch(std::span<const std::size_t>(idx.data() + s, e - s), &labels);
    correct += softmax_cross_entropy(net.forward(x, Mode::Eval), labels).correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

/// Trains `net` in place (weights are initialized from cfg.seed first).
/// Minibatches walk a seeded permutation, reshuffled when exhausted.
template <class T>
TrainResult<T> train(Network<T>& net, const Dataset<T>& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.size() < cfg.batch_size) throw ConfigError("train: dataset smaller than one batch");
  expect_axis("train", "classes", data.classes, net.out_shape().c);
  net.init(cfg.seed);
  SplitMix64 order(cfg.seed ^ 0x5DEECE66DULL);
  std::vector<std::size_t> perm = shuffled_indices(data.size(), order);
  std::size_t pos = 0;
  Sgd<T> opt;
  TrainResult<T> res;
  std::vector<std::size_t> labels;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    if (pos + cfg.batch_size > perm.size()) {
      perm = shuffled_indices(data.size(), order);
      pos = 0;
    }
    Tensor<T> x = data.batch(std::span<const std::size_t>(perm.data() + pos, cfg.batch_size), &labels);
    pos += cfg.batch_size;
    net.zero_grad();
    auto lr = softmax_cross_entropy(net.forward(x, Mode::Train), labels);
    if (!std::isfinite(static_cast<double>(lr.loss))) throw TrainingDiverged(step);
    res.losses.push_back(static_cast<double>(lr.loss));
    net.backward(lr.grad);
    opt.step(net, cfg.lr, cfg.momentum, cfg.weight_decay);
  }
  res.final_train_accuracy = evaluate(net, data);
  res.checkpoint = make_checkpoint(net);
  return res;
}

inline void write_loss_csv(const std::vector<double>& losses, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError(path, "cannot open for writing");
  out << "step,loss\n";
  out.precision(17);
  for (std::size_t i = 0; i < losses.size(); ++i) out << i << ',' << losses[i] << '\n';
  if (!out) throw IoError(path, "write failed");
}

}  // namespace ghostforge
