// SPDX-License-Identifier: Apache-2.0
// ghostforge command-line entry point.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "ghostforge/ghostforge.hpp"

using namespace ghostforge;

namespace {

constexpr int kExitDomain = 1;
constexpr int kExitUsage = 2;

/// Parses "CxHxW".
Shape parse_chw(const std::string& s) {
  std::size_t c = 0, h = 0, w = 0;
  char x1 = 0, x2 = 0;
  std::istringstream in(s);
  if (!(in >> c >> x1 >> h >> x2 >> w) || x1 != 'x' || x2 != 'x' || !in.eof() || c == 0 || h == 0 || w == 0)
    throw ConfigError("--input expects CxHxW, got '" + s + "'");
  return Shape{1, c, h, w};
}

/// Where a command gets its architecture from.
struct ArchSource {
  std::string arch;
  std::string spec_file;
  double width = 1.0;
  std::string input;
  std::size_t classes = 0;

  void attach(CLI::App* cmd, const std::string& default_arch = "") {
    arch = default_arch;
    auto* a = cmd->add_option("--arch", arch, "zoo architecture")->check(CLI::IsMember(zoo_names()));
    auto* f = cmd->add_option("--spec-file", spec_file, "ArchSpec JSON file");
    a->excludes(f);
    cmd->add_option("--width", width, "width multiplier (GhostNet family)");
    cmd->add_option("--input", input, "input size CxHxW");
    cmd->add_option("--classes", classes, "classifier width (0 = default)");
  }

  ArchSpec resolve() const {
    ArchSpec a;
    if (!spec_file.empty()) {
      a = load_arch(spec_file);
    } else {
      if (arch.empty()) throw ConfigError("one of --arch or --spec-file is required");
      std::size_t hw = 0;
      if (!input.empty()) {
        const Shape s = parse_chw(input);
        if (s.h != s.w) throw ConfigError("zoo architectures take square inputs");
        hw = s.h;
      }
      a = build_arch(arch, width, hw, classes);
    }
    if (!input.empty()) {
      const Shape s = parse_chw(input);
      a.input = s;
      trace_shapes(a, a.input);
    }
    return a;
  }
};

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw IoError(path, "cannot open for writing");
  out << text;
  if (!out) throw IoError(path, "write failed");
}

std::vector<std::size_t> parse_size_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const unsigned long v = std::stoul(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError("bad list element '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("empty list");
  return out;
}

/// Dataset options shared by train and eval.
struct DataOptions {
  std::size_t per_class = 100;
  std::uint64_t data_seed = 42;
  double sigma = 0.3;

  void attach(CLI::App* cmd) {
    cmd->add_option("--per-class", per_class, "synthetic samples per class");
    cmd->add_option("--data-seed", data_seed, "synthetic dataset seed");
    cmd->add_option("--sigma", sigma, "synthetic noise level");
  }

  Dataset<Real> make(const ArchSpec& a) const {
    return synth_dataset<Real>(num_classes(a), per_class, a.input, data_seed, sigma);
  }
};

Tensor<Real> random_batch(const Shape& in, std::size_t n, std::uint64_t seed) {
  GaussianStream rng(seed);
  Tensor<Real> x(n, in.c, in.h, in.w);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<Real>(rng.next());
  return x;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ghostforge: ghost-feature CNN toolkit (1 FLOP = 1 multiply-accumulate)"};
  app.require_subcommand(1);

  // build
  auto* build = app.add_subcommand("build", "emit an ArchSpec JSON for a zoo architecture");
  ArchSource build_src;
  std::string build_out;
  build_src.attach(build);
  build->add_option("--out", build_out, "output path (default stdout)");

  // convert
  auto* convert = app.add_subcommand("convert", "apply c_ghost or g_ghost conversion to an ArchSpec");
  ArchSource conv_src;
  std::string conv_mode, conv_out, conv_cheap = "conv1x1", conv_layout = "auto";
  std::size_t conv_s = 2, conv_d = 3;
  double conv_lambda = 0.5;
  bool conv_mix = true;
  conv_src.attach(convert);
  convert->add_option("--mode", conv_mode, "conversion")->required()->check(CLI::IsMember({"c_ghost", "g_ghost"}));
  convert->add_option("--s", conv_s, "ghost ratio s (c_ghost)");
  convert->add_option("--d", conv_d, "cheap kernel d (c_ghost)");
  convert->add_option("--lambda", conv_lambda, "ghost fraction (g_ghost)");
  convert->add_option("--cheap", conv_cheap, "cheap op: conv1x1|conv3x3|conv5x5|identity|none (g_ghost)");
  convert->add_flag("--mix,!--no-mix", conv_mix, "intrinsic-feature mix (g_ghost)");
  convert->add_option("--layout", conv_layout, "stage layout: auto|tail|literal (g_ghost)");
  convert->add_option("--out", conv_out, "output path (default stdout)");

  // cost
  auto* cost = app.add_subcommand("cost", "count params, FLOPs and activations");
  ArchSource cost_src;
  bool cost_csv = false;
  cost_src.attach(cost);
  cost->add_flag("--csv", cost_csv, "per-layer CSV instead of the table");

  // ratios
  auto* ratios = app.add_subcommand("ratios", "closed-form ghost module speed-up and compression");
  double r_c = 0, r_k = 0, r_d = 0, r_s = 0, r_n = 1;
  ratios->add_option("--c", r_c, "input channels")->required();
  ratios->add_option("--k", r_k, "primary kernel")->required();
  ratios->add_option("--d", r_d, "cheap kernel")->required();
  ratios->add_option("--s", r_s, "ghost ratio")->required();
  ratios->add_option("--n", r_n, "output channels");

  // stage-ratios
  auto* sratios = app.add_subcommand("stage-ratios", "closed-form G-Ghost stage reduction");
  std::vector<double> sr_flops, sr_params;
  double sr_lambda = 0.5, sr_cheap_flops = 0, sr_cheap_params = 0;
  sratios->add_option("--flops", sr_flops, "per-block FLOPs")->required()->delimiter(',');
  sratios->add_option("--params", sr_params, "per-block params")->required()->delimiter(',');
  sratios->add_option("--lambda", sr_lambda, "ghost fraction");
  sratios->add_option("--cheap-flops", sr_cheap_flops, "cheap branch FLOPs");
  sratios->add_option("--cheap-params", sr_cheap_params, "cheap branch params");

  // train
  auto* trn = app.add_subcommand("train", "train on the seeded synthetic dataset");
  ArchSource train_src;
  DataOptions train_data;
  TrainConfig tcfg;
  tcfg.lr = 0.1;
  tcfg.steps = 500;
  std::string out_ckpt, loss_csv;
  train_src.attach(trn, "c_ghostnet");
  train_src.width = 0.25;
  train_src.input = "3x32x32";
  train_src.classes = 10;
  train_data.attach(trn);
  trn->add_option("--steps", tcfg.steps, "SGD steps");
  trn->add_option("--seed", tcfg.seed, "init and shuffle seed");
  trn->add_option("--lr", tcfg.lr, "learning rate");
  trn->add_option("--momentum", tcfg.momentum, "momentum");
  trn->add_option("--wd", tcfg.weight_decay, "weight decay");
  trn->add_option("--batch", tcfg.batch_size, "batch size");
  trn->add_option("--out-ckpt", out_ckpt, "checkpoint output path");
  trn->add_option("--loss-csv", loss_csv, "per-step loss CSV path");

  // eval
  auto* evl = app.add_subcommand("eval", "accuracy of a checkpoint on the synthetic dataset");
  ArchSource eval_src;
  DataOptions eval_data;
  std::string eval_ckpt;
  eval_src.attach(evl, "c_ghostnet");
  eval_src.width = 0.25;
  eval_src.input = "3x32x32";
  eval_src.classes = 10;
  eval_data.attach(evl);
  evl->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();

  // bench
  auto* bench = app.add_subcommand("bench", "wall-clock forward timing");
  ArchSource bench_src;
  std::size_t bench_batch = 8, bench_repeat = 5;
  std::uint64_t bench_seed = 1;
  bench_src.attach(bench);
  bench->add_option("--batch", bench_batch, "batch size");
  bench->add_option("--repeat", bench_repeat, "timed repetitions")->check(CLI::PositiveNumber);
  bench->add_option("--seed", bench_seed, "init and input seed");

  // analyze-pairs
  auto* pairs = app.add_subcommand("analyze-pairs", "least-squares cheap-map fit between two PGM maps");
  std::string pair_src, pair_dst, pair_d = "1,3,5,7";
  pairs->add_option("--src", pair_src, "source PGM")->required();
  pairs->add_option("--dst", pair_dst, "target PGM")->required();
  pairs->add_option("--d", pair_d, "comma-separated odd kernel sizes");

  // similarity
  auto* sim = app.add_subcommand("similarity", "nearest-channel MSE between a stage's first and last block");
  ArchSource sim_src;
  std::string sim_ckpt;
  std::size_t sim_stage = 0, sim_batch = 4, sim_top = 0;
  std::uint64_t sim_seed = 1;
  sim_src.attach(sim);
  sim->add_option("--ckpt", sim_ckpt, "checkpoint (default: seeded init)");
  sim->add_option("--stage", sim_stage, "stage index");
  sim->add_option("--batch", sim_batch, "random probe batch size");
  sim->add_option("--seed", sim_seed, "init and probe seed");
  sim->add_option("--top", sim_top, "print only the first N rows (0 = all)");

  // dump-features
  auto* dump = app.add_subcommand("dump-features", "write a node's feature maps as PGM files");
  ArchSource dump_src;
  std::string dump_ckpt, dump_node, dump_dir = "features";
  std::uint64_t dump_seed = 1;
  dump_src.attach(dump);
  dump->add_option("--ckpt", dump_ckpt, "checkpoint (default: seeded init)");
  dump->add_option("--node", dump_node, "node name")->required();
  dump->add_option("--out-dir", dump_dir, "output directory");
  dump->add_option("--seed", dump_seed, "init and probe seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    std::cout << std::setprecision(6);
    if (*build) {
      write_text(build_out, to_json(build_src.resolve()).dump(2) + "\n");
    } else if (*convert) {
      const ArchSpec base = conv_src.resolve();
      ArchSpec out;
      if (conv_mode == "c_ghost") {
        out = c_ghostify(base, conv_s, conv_d);
      } else {
        GGhostOptions opt{conv_lambda, parse_cheap_kind(conv_cheap), conv_mix};
        if (conv_layout != "auto") opt.layout = parse_stage_layout(conv_layout);
        out = g_ghostify(base, opt);
      }
      write_text(conv_out, to_json(out).dump(2) + "\n");
    } else if (*cost) {
      const auto rep = count_costs(cost_src.resolve());
      if (cost_csv)
        write_cost_csv(std::cout, rep);
      else
        write_cost_table(std::cout, rep);
    } else if (*ratios) {
      const double n = ratios->count("--n") ? r_n : r_c;
      std::printf("r_s=%.4f\nr_c=%.4f\n", speedup_ratio_rs(r_c, r_k, r_d, r_s),
                  compression_ratio_rc(r_c, r_k, r_d, r_s, n));
    } else if (*sratios) {
      const auto r = stage_reduction_ratios(sr_flops, sr_params, sr_lambda, sr_cheap_flops, sr_cheap_params);
      std::printf("flops_ratio=%.4f\nparams_ratio=%.4f\n", r.flops, r.params);
    } else if (*trn) {
      const ArchSpec a = train_src.resolve();
      const auto data = train_data.make(a);
      Network<Real> net(a);
      const auto res = train(net, data, tcfg);
      if (!out_ckpt.empty()) save_checkpoint(res.checkpoint, out_ckpt);
      if (!loss_csv.empty()) write_loss_csv(res.losses, loss_csv);
      std::cout << "steps=" << res.losses.size() << "\n";
      if (!res.losses.empty()) std::cout << "final_loss=" << std::setprecision(10) << res.losses.back() << "\n";
      std::cout << "train_accuracy=" << std::setprecision(6) << res.final_train_accuracy << "\n";
    } else if (*evl) {
      const ArchSpec a = eval_src.resolve();
      Network<Real> net(a);
      load_checkpoint(net, read_checkpoint(eval_ckpt));
      std::cout << "accuracy=" << evaluate(net, eval_data.make(a)) << "\n";
    } else if (*bench) {
      const ArchSpec a = bench_src.resolve();
      Network<Real> net(a);
      net.init(bench_seed);
      const Tensor<Real> x = random_batch(a.input, bench_batch, bench_seed);
      net.forward(x, Mode::Eval);  // warm-up
      std::vector<double> ms;
      for (std::size_t r = 0; r < bench_repeat; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        net.forward(x, Mode::Eval);
        const auto t1 = std::chrono::steady_clock::now();
        ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
      }
      double mean = 0, var = 0;
      for (double v : ms) mean += v;
      mean /= static_cast<double>(ms.size());
      for (double v : ms) var += (v - mean) * (v - mean);
      const double sd = ms.size() > 1 ? std::sqrt(var / static_cast<double>(ms.size() - 1)) : 0.0;
      std::printf("arch=%s batch=%zu repeat=%zu threads=%zu\nforward_ms=%.3f +- %.3f\n", a.name.c_str(), bench_batch,
                  bench_repeat, worker_threads(), mean, sd);
    } else if (*pairs) {
      const Map2D src = read_pgm(pair_src), dst = read_pgm(pair_dst);
      std::cout << "d,mse,regularized\n" << std::fixed << std::setprecision(10);
      for (std::size_t d : parse_size_list(pair_d)) {
        const auto fit = fit_cheap_map(src, dst, d);
        std::cout << d << ',' << fit.mse << ',' << (fit.regularized ? 1 : 0) << '\n';
      }
    } else if (*sim) {
      const ArchSpec a = sim_src.resolve();
      Network<Real> net(a);
      net.init(sim_seed);
      if (!sim_ckpt.empty()) load_checkpoint(net, read_checkpoint(sim_ckpt));
      const auto rows = stage_similarity_report(net, random_batch(a.input, sim_batch, sim_seed), sim_stage);
      std::cout << "block_a,channel_a,block_b,channel_b,mse\n" << std::setprecision(10);
      const std::size_t n = sim_top ? std::min(sim_top, rows.size()) : rows.size();
      for (std::size_t i = 0; i < n; ++i)
        std::cout << rows[i].block_a << ',' << rows[i].channel_a << ',' << rows[i].block_b << ',' << rows[i].channel_b
                  << ',' << rows[i].mse << '\n';
    } else if (*dump) {
      const ArchSpec a = dump_src.resolve();
      Network<Real> net(a);
      net.init(dump_seed);
      if (!dump_ckpt.empty()) load_checkpoint(net, read_checkpoint(dump_ckpt));
      for (const auto& f : dump_feature_maps(net, random_batch(a.input, 1, dump_seed), dump_node, dump_dir))
        std::cout << f << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDomain;
  }
  return 0;
}
