// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <limits>

#include "ghostforge/train.hpp"
#include "gradcheck.hpp"

using namespace ghostforge;

namespace {

/// Small conv net for fast training tests.
ArchSpec tiny_net(std::size_t classes) {
  ArchSpec a;
  a.name = "tiny";
  a.input = {1, 3, 8, 8};
  ConvConfig c;
  c.out = 8;
  a.nodes = {Node{"c1", c, {kInputName}}, Node{"pool", GlobalAvgPoolConfig{}, {"c1"}},
             Node{"fc", FcConfig{classes, true, false, false}, {"pool"}}};
  return a;
}

std::size_t nearest_prototype(const Dataset<double>& d, const std::vector<std::vector<double>>& protos,
                              std::size_t i) {
  const std::size_t per = d.images.size() / d.size();
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < protos.size(); ++k) {
    double s = 0;
    for (std::size_t e = 0; e < per; ++e) s += std::pow(d.images[i * per + e] - protos[k][e], 2);
    if (s < best_d) {
      best_d = s;
      best = k;
    }
  }
  return best;
}

}  // namespace

TEST(SynthDataset, DeterministicAndShaped) {
  const auto a = synth_dataset<float>(10, 100, {1, 3, 32, 32}, 42);
  const auto b = synth_dataset<float>(10, 100, {1, 3, 32, 32}, 42);
  EXPECT_EQ(a.size(), 1000u);
  EXPECT_EQ(a.images.shape(), (Shape{1000, 3, 32, 32}));
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_NE(synth_dataset<float>(10, 100, {1, 3, 32, 32}, 43).images, a.images);
  for (std::size_t k = 0; k < 10; ++k) EXPECT_EQ(std::count(a.labels.begin(), a.labels.end(), k), 100);
  EXPECT_THROW(synth_dataset<float>(1, 10, {1, 1, 2, 2}, 1), ConfigError);
}

TEST(SynthDataset, NearestPrototypeBaseline) {
  const Shape s{1, 3, 8, 8};
  const std::size_t per = 3 * 8 * 8;
  // sigma = 0: every sample is its prototype.
  const auto exact = synth_dataset<double>(10, 20, s, 5, 0.0);
  std::vector<std::vector<double>> protos;
  for (std::size_t k = 0; k < 10; ++k)
    protos.emplace_back(exact.images.data() + k * 20 * per, exact.images.data() + (k * 20 + 1) * per);
  for (std::size_t i = 0; i < exact.size(); ++i) EXPECT_EQ(nearest_prototype(exact, protos, i), exact.labels[i]);
  // sigma = 0.3 shares the prototypes (drawn first) and stays separable.
  const auto noisy = synth_dataset<double>(10, 20, s, 5);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < noisy.size(); ++i) correct += nearest_prototype(noisy, protos, i) == noisy.labels[i];
  EXPECT_GE(correct, 190u);
}

TEST(Sgd, HandExamples) {
  using S = Sgd<double>;
  std::vector<double> w{1.0, -2.0}, g{0.5, 0.25}, v{0.0, 0.0};
  S::sgd_update(std::span<double>(w), std::span<const double>(g), std::span<double>(v), 0.0, 0.9, 0.1);
  EXPECT_EQ(w, (std::vector<double>{1.0, -2.0}));

  w = {1.0, -2.0};
  v = {0.0, 0.0};
  S::sgd_update(std::span<double>(w), std::span<const double>(g), std::span<double>(v), 0.1, 0.0, 0.0);
  EXPECT_EQ(w, (std::vector<double>{1.0 - 0.1 * 0.5, -2.0 - 0.1 * 0.25}));

  w = {0.0};
  v = {0.0};
  const std::vector<double> gc{2.0};
  for (int i = 0; i < 2; ++i)
    S::sgd_update(std::span<double>(w), std::span<const double>(gc), std::span<double>(v), 0.01, 0.9, 0.0);
  EXPECT_NEAR(w[0], -0.01 * (2.0 + 1.9 * 2.0), 1e-15);

  w = {1.0};
  v = {0.0};
  S::sgd_update(std::span<double>(w), std::span<const double>(), std::span<double>(v), 0.1, 0.9, 0.5);
  EXPECT_DOUBLE_EQ(w[0], 1.0 - 0.1 * 0.5);
  std::vector<double> g3{1, 2, 3};
  EXPECT_THROW(S::sgd_update(std::span<double>(w), std::span<const double>(g3), std::span<double>(v), 0.1, 0.9, 0.0),
               DimensionError);
  EXPECT_THROW((TrainConfig{0.0}.validate()), ConfigError);
  EXPECT_THROW((TrainConfig{0.1, 1.0}.validate()), ConfigError);
}

TEST(Loss, SoftmaxCrossEntropyGradient) {
  const auto logits = gf_test::random_tensor({4, 5, 1, 1}, 9, 2.0);
  const std::vector<std::size_t> labels{0, 3, 4, 1};
  const auto res = softmax_cross_entropy(logits, labels);
  const double h = 1e-6;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    auto p = logits, m = logits;
    p[i] += h;
    m[i] -= h;
    const double num = (softmax_cross_entropy(p, labels).loss - softmax_cross_entropy(m, labels).loss) / (2 * h);
    EXPECT_LT(gf_test::rel_err(res.grad[i], num), 1e-6);
  }
  Tensor<double> uniform(2, 4, 1, 1);
  EXPECT_NEAR(softmax_cross_entropy(uniform, {0, 1}).loss, std::log(4.0), 1e-12);
  EXPECT_THROW(softmax_cross_entropy(uniform, {0, 4}), DimensionError);
}

TEST(Training, ZeroStepsIsChance) {
  const auto data = synth_dataset<float>(10, 100, {1, 3, 32, 32}, 11);
  Network<float> net(build_c_ghostnet(0.25, 32, 10));
  TrainConfig cfg;
  cfg.steps = 0;
  const auto res = train(net, data, cfg);
  EXPECT_TRUE(res.losses.empty());
  EXPECT_NEAR(res.final_train_accuracy, 0.1, 0.1);
  Network<float> fresh(build_c_ghostnet(0.25, 32, 10));
  fresh.init(cfg.seed);
  EXPECT_TRUE(make_checkpoint(fresh) == res.checkpoint);
}

TEST(Training, DeterministicAndLearns) {
  const auto data = synth_dataset<double>(4, 16, {1, 3, 8, 8}, 3);
  TrainConfig cfg;
  cfg.steps = 60;
  cfg.batch_size = 16;
  cfg.lr = 0.1;
  Network<double> a(tiny_net(4)), b(tiny_net(4));
  const auto ra = train(a, data, cfg), rb = train(b, data, cfg);
  EXPECT_EQ(ra.losses, rb.losses);
  EXPECT_TRUE(ra.checkpoint == rb.checkpoint);
  EXPECT_LT(ra.losses.back(), ra.losses.front());
  cfg.seed = 2;
  Network<double> c(tiny_net(4));
  EXPECT_NE(train(c, data, cfg).losses, ra.losses);
}

TEST(Training, DivergenceReportsStep) {
  const auto data = synth_dataset<float>(4, 8, {1, 3, 8, 8}, 3);
  TrainConfig cfg;
  cfg.steps = 50;
  cfg.batch_size = 8;
  cfg.lr = 1e30;
  cfg.momentum = 0.0;
  Network<float> net(tiny_net(4));
  try {
    train(net, data, cfg);
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_GT(e.step(), 0u);
    EXPECT_LT(e.step(), 50u);
  }
  cfg.lr = 0.1;
  EXPECT_THROW(train(net, synth_dataset<float>(5, 8, {1, 3, 8, 8}, 3), cfg), DimensionError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto data = synth_dataset<float>(4, 16, {1, 3, 8, 8}, 3);
  TrainConfig cfg;
  cfg.steps = 10;
  cfg.batch_size = 16;
  Network<float> net(tiny_net(4));
  const auto res = train(net, data, cfg);
  const auto dir = std::filesystem::temp_directory_path() / "ghostforge_ckpt";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "m.gfck").string();
  save_checkpoint(res.checkpoint, path);
  const Checkpoint back = read_checkpoint(path);
  EXPECT_TRUE(back == res.checkpoint);
  Network<float> other(tiny_net(4));
  other.init(99);
  load_checkpoint(other, back);
  EXPECT_EQ(evaluate(other, data), evaluate(net, data));
  EXPECT_TRUE(make_checkpoint(other) == res.checkpoint);

  // Corruptions are reported with the path.
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto write = [&](const std::string& name, const std::string& content) {
    const std::string p = (dir / name).string();
    std::ofstream(p, std::ios::binary) << content;
    return p;
  };
  EXPECT_THROW(read_checkpoint(write("trunc.gfck", bytes.substr(0, bytes.size() - 3))), IoError);
  EXPECT_THROW(read_checkpoint(write("trail.gfck", bytes + "x")), IoError);
  EXPECT_THROW(read_checkpoint(write("magic.gfck", "GFCK 2" + bytes.substr(6))), IoError);
  EXPECT_THROW(read_checkpoint((dir / "missing.gfck").string()), IoError);
  Network<float> wrong(tiny_net(5));
  EXPECT_THROW(load_checkpoint(wrong, back), DimensionError);
}
