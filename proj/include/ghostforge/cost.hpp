// SPDX-License-Identifier: Apache-2.0
//
// Parameter / FLOP / activation accounting. One FLOP is one multiply-accumulate.
// Convolution and FC layers are the only FLOP sources besides the SE and mix
// projections; BN, ReLU and pooling count zero. Activations are the output
// elements of every convolution, cheap ones included.
#pragma once

#include <cstdint>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "ghostforge/model.hpp"

namespace ghostforge {

struct CostRow {
  std::string name;
  std::string kind;
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
  std::uint64_t activations = 0;
  std::uint64_t conv_weights = 0;
  Shape out_shape{};
};

struct CostReport {
  std::string arch;
  Shape input{};
  std::vector<CostRow> rows;
  CostTotals total;

  const CostRow& row(const std::string& name) const {
    for (const auto& r : rows)
      if (r.name == name) return r;
    throw ConfigError("cost report has no row '" + name + "'");
  }
};

inline std::string shape_chw(const Shape& s) {
  return std::to_string(s.c) + "x" + std::to_string(s.h) + "x" + std::to_string(s.w);
}

/// Counts every node of `arch` evaluated at `input` (C, H, W).
inline CostReport count_costs(const ArchSpec& arch, const Shape& input) {
  CostReport rep;
  rep.arch = arch.name;
  rep.input = Shape{1, input.c, input.h, input.w};
  if (arch.nodes.empty()) return rep;
  Network<float> net(arch, input);
  for (std::size_t i = 0; i < net.size(); ++i) {
    CostRow r;
    r.name = net.node(i).name;
    r.kind = net.node(i).kind();
    r.out_shape = net.node_shape(i);
    if (const auto* m = net.module(i)) {
      const CostTotals t = m->cost();
      r.params = t.params;
      r.flops = t.flops;
      r.activations = t.activations;
      r.conv_weights = t.conv_weights;
      rep.total += t;
    }
    rep.rows.push_back(std::move(r));
  }
  return rep;
}

inline CostReport count_costs(const ArchSpec& arch) { return count_costs(arch, arch.input); }

inline void write_cost_csv(std::ostream& os, const CostReport& rep) {
  os << "name,kind,params,flops,activations,out_shape\n";
  for (const auto& r : rep.rows)
    os << r.name << ',' << r.kind << ',' << r.params << ',' << r.flops << ',' << r.activations << ','
       << shape_chw(r.out_shape) << '\n';
  os << "TOTAL,," << rep.total.params << ',' << rep.total.flops << ',' << rep.total.activations << ",\n";
}

inline std::string human_count(std::uint64_t v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  if (v >= 1000000000ULL)
    os << static_cast<double>(v) / 1e9 << "B";
  else if (v >= 1000000ULL)
    os << static_cast<double>(v) / 1e6 << "M";
  else if (v >= 1000ULL)
    os << static_cast<double>(v) / 1e3 << "K";
  else
    os << v;
  return os.str();
}

inline void write_cost_table(std::ostream& os, const CostReport& rep) {
  std::size_t wn = 4, wk = 4;
  for (const auto& r : rep.rows) {
    wn = std::max(wn, r.name.size());
    wk = std::max(wk, r.kind.size());
  }
  os << "# " << rep.arch << " @ " << shape_chw(rep.input) << "  (FLOPs = multiply-accumulates)\n";
  auto line = [&](const std::string& a, const std::string& b, const std::string& p, const std::string& f,
                  const std::string& act, const std::string& s) {
    os << std::left << std::setw(static_cast<int>(wn)) << a << "  " << std::setw(static_cast<int>(wk)) << b
       << std::right << "  " << std::setw(12) << p << "  " << std::setw(14) << f << "  " << std::setw(12) << act
       << "  " << s << '\n';
  };
  line("name", "kind", "params", "flops", "activations", "out_shape");
  for (const auto& r : rep.rows)
    line(r.name, r.kind, std::to_string(r.params), std::to_string(r.flops), std::to_string(r.activations),
         shape_chw(r.out_shape));
  line("TOTAL", "", std::to_string(rep.total.params), std::to_string(rep.total.flops),
       std::to_string(rep.total.activations), "");
  os << "# params " << human_count(rep.total.params) << ", FLOPs " << human_count(rep.total.flops)
     << ", activations " << human_count(rep.total.activations) << '\n';
}

}  // namespace ghostforge
