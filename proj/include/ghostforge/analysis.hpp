// SPDX-License-Identifier: Apache-2.0
//
// Feature redundancy tools: least-squares cheap-map fitting, stage feature
// similarity and PGM export.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "ghostforge/model.hpp"

namespace ghostforge {

/// Single-channel 2-D map, row-major.
struct Map2D {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<double> data;

  Map2D() = default;
  Map2D(std::size_t rows, std::size_t cols, double fill = 0.0) : h(rows), w(cols), data(rows * cols, fill) {}

  double& operator()(std::size_t y, std::size_t x) { return data[y * w + x]; }
  double operator()(std::size_t y, std::size_t x) const { return data[y * w + x]; }
  double at_padded(long y, long x) const {
    if (y < 0 || x < 0 || y >= static_cast<long>(h) || x >= static_cast<long>(w)) return 0.0;
    return data[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
  }
};

template <class T>
Map2D map_of(const Tensor<T>& t, std::size_t n, std::size_t c) {
  Map2D m(t.h(), t.w());
  const T* p = t.plane(n, c);
  for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = static_cast<double>(p[i]);
  return m;
}

/// Zero-padded "same" cross-correlation of src with a d x d filter.
inline Map2D apply_filter(const Map2D& src, const std::vector<double>& filter, std::size_t d) {
  Map2D out(src.h, src.w);
  const long r = static_cast<long>(d / 2);
  for (std::size_t y = 0; y < src.h; ++y)
    for (std::size_t x = 0; x < src.w; ++x) {
      double acc = 0.0;
      for (long dy = -r; dy <= r; ++dy)
        for (long dx = -r; dx <= r; ++dx)
          acc += filter[static_cast<std::size_t>((dy + r) * static_cast<long>(d) + dx + r)] *
                 src.at_padded(static_cast<long>(y) + dy, static_cast<long>(x) + dx);
      out(y, x) = acc;
    }
  return out;
}

struct CheapMapFit {
  std::size_t d = 1;
  std::vector<double> filter;  // d x d, row-major
  double mse = 0.0;
  bool regularized = false;
};

/// Least-squares d x d filter mapping src to dst (no bias), solved through the
/// normal equations. A singular system is re-solved with a 1e-8 ridge.
inline CheapMapFit fit_cheap_map(const Map2D& src, const Map2D& dst, std::size_t d) {
  expect_axis("fit_cheap_map", "height", src.h, dst.h);
  expect_axis("fit_cheap_map", "width", src.w, dst.w);
  if (d % 2 == 0) throw ConfigError("fit_cheap_map: d must be odd");
  if (d > std::min(src.h, src.w)) throw ConfigError("fit_cheap_map: d exceeds the map size");
  const std::size_t k = d * d;
  const long r = static_cast<long>(d / 2);
  Eigen::MatrixXd A(static_cast<Eigen::Index>(src.h * src.w), static_cast<Eigen::Index>(k));
  Eigen::VectorXd b(static_cast<Eigen::Index>(src.h * src.w));
  for (std::size_t y = 0; y < src.h; ++y)
    for (std::size_t x = 0; x < src.w; ++x) {
      const auto row = static_cast<Eigen::Index>(y * src.w + x);
      for (long dy = -r; dy <= r; ++dy)
        for (long dx = -r; dx <= r; ++dx)
          A(row, (dy + r) * static_cast<long>(d) + dx + r) =
              src.at_padded(static_cast<long>(y) + dy, static_cast<long>(x) + dx);
      b(row) = dst(y, x);
    }
  const Eigen::MatrixXd AtA = A.transpose() * A;
  const Eigen::VectorXd Atb = A.transpose() * b;
  CheapMapFit fit;
  fit.d = d;
  Eigen::LLT<Eigen::MatrixXd> llt(AtA);
  const double scale = std::max(1.0, AtA.diagonal().cwiseAbs().maxCoeff());
  Eigen::VectorXd sol;
  if (llt.info() == Eigen::Success && llt.rcond() > 1e-13) {
    sol = llt.solve(Atb);
  } else {
    fit.regularized = true;
    const Eigen::MatrixXd reg = AtA + 1e-8 * scale * Eigen::MatrixXd::Identity(AtA.rows(), AtA.cols());
    sol = reg.ldlt().solve(Atb);
  }
  fit.filter.assign(sol.data(), sol.data() + sol.size());
  const Eigen::VectorXd res = A * sol - b;
  fit.mse = res.squaredNorm() / static_cast<double>(res.size());
  return fit;
}

/// Zero mean, unit variance; constant maps become all zeros.
inline Map2D standardize(const Map2D& m) {
  Map2D out = m;
  if (m.data.empty()) return out;
  double mean = 0.0;
  for (double v : m.data) mean += v;
  mean /= static_cast<double>(m.data.size());
  double var = 0.0;
  for (double v : m.data) var += (v - mean) * (v - mean);
  var /= static_cast<double>(m.data.size());
  const double sd = std::sqrt(var);
  for (double& v : out.data) v = sd > 1e-12 ? (v - mean) / sd : 0.0;
  return out;
}

inline double mse(const Map2D& a, const Map2D& b) {
  expect_axis("mse", "elements", a.data.size(), b.data.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
  return a.data.empty() ? 0.0 : s / static_cast<double>(a.data.size());
}

struct SimilarityRow {
  std::string block_a;
  std::string block_b;
  std::size_t channel_a = 0;
  std::size_t channel_b = 0;
  double mse = 0.0;
};

/// For each channel of the stage's first block, the closest channel of its
/// last block (MSE between standardized maps, averaged over the batch).
/// Rows sorted by ascending MSE.
template <class T>
std::vector<SimilarityRow> stage_similarity_report(Network<T>& net, const Tensor<T>& batch, std::size_t stage_id) {
  const auto stages = detect_stages(net.arch());
  std::vector<StageInfo> multi;
  for (const auto& s : stages)
    if (s.count >= 2) multi.push_back(s);
  if (stage_id >= multi.size())
    throw ConfigError("stage id " + std::to_string(stage_id) + " out of range (" + std::to_string(multi.size()) +
                      " multi-block stages)");
  const StageInfo& st = multi[stage_id];
  const std::string a = net.node(st.first).name;
  const std::string b = net.node(st.first + st.count - 1).name;
  net.forward(batch, Mode::Eval);
  const Tensor<T>& fa = net.output_of(a);
  const Tensor<T>& fb = net.output_of(b);
  std::vector<std::vector<Map2D>> ma(fa.c()), mb(fb.c());
  for (std::size_t n = 0; n < fa.n(); ++n) {
    for (std::size_t c = 0; c < fa.c(); ++c) ma[c].push_back(standardize(map_of(fa, n, c)));
    for (std::size_t c = 0; c < fb.c(); ++c) mb[c].push_back(standardize(map_of(fb, n, c)));
  }
  std::vector<SimilarityRow> rows;
  for (std::size_t i = 0; i < fa.c(); ++i) {
    SimilarityRow best{a, b, i, 0, std::numeric_limits<double>::infinity()};
    for (std::size_t j = 0; j < fb.c(); ++j) {
      double e = 0.0;
      for (std::size_t n = 0; n < fa.n(); ++n) e += mse(ma[i][n], mb[j][n]);
      e /= static_cast<double>(fa.n());
      if (e < best.mse) {
        best.channel_b = j;
        best.mse = e;
      }
    }
    rows.push_back(best);
  }
  std::stable_sort(rows.begin(), rows.end(), [](const auto& x, const auto& y) { return x.mse < y.mse; });
  return rows;
}

// ---------------------------------------------------------------------------
// PGM

/// Min-max normalization to [0, 255]; constant maps become 128.
inline std::vector<unsigned char> to_gray(const Map2D& m) {
  std::vector<unsigned char> px(m.data.size(), 128);
  if (m.data.empty()) return px;
  const auto [lo, hi] = std::minmax_element(m.data.begin(), m.data.end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) return px;
  for (std::size_t i = 0; i < m.data.size(); ++i)
    px[i] = static_cast<unsigned char>(std::lround((m.data[i] - *lo) / range * 255.0));
  return px;
}

inline void write_pgm(const std::string& path, std::size_t h, std::size_t w, const std::vector<unsigned char>& px) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path, "cannot open for writing");
  out << "P5\n" << w << ' ' << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!out) throw IoError(path, "write failed");
}

inline void write_pgm(const std::string& path, const Map2D& m) { write_pgm(path, m.h, m.w, to_gray(m)); }

/// Reads a binary PGM (P5, maxval <= 255); values returned in [0, 255].
inline Map2D read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path, "cannot open for reading");
  auto token = [&]() {
    std::string t;
    while (in >> std::ws && in.peek() == '#') {
      std::string skip;
      std::getline(in, skip);
    }
    if (!(in >> t)) throw IoError(path, "truncated header");
    return t;
  };
  if (token() != "P5") throw IoError(path, "not a binary PGM (P5)");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::logic_error&) {
    throw IoError(path, "malformed header");
  }
  if (maxval == 0 || maxval > 255) throw IoError(path, "unsupported maxval");
  in.get();
  Map2D m(h, w);
  std::vector<unsigned char> px(h * w);
  if (!in.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size())))
    throw IoError(path, "truncated pixel data");
  for (std::size_t i = 0; i < px.size(); ++i) m.data[i] = px[i];
  return m;
}

/// Writes every channel of `node`'s output for sample 0 as <node>_<ch>.pgm.
template <class T>
std::vector<std::string> dump_feature_maps(Network<T>& net, const Tensor<T>& input, const std::string& node,
                                           const std::string& out_dir) {
  net.arch().index_of(node);
  net.forward(input, Mode::Eval);
  const Tensor<T>& f = net.output_of(node);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError(out_dir, "cannot create directory: " + ec.message());
  std::vector<std::string> files;
  for (std::size_t c = 0; c < f.c(); ++c) {
    const std::string path = (std::filesystem::path(out_dir) / (node + "_" + std::to_string(c) + ".pgm")).string();
    write_pgm(path, map_of(f, 0, c));
    files.push_back(path);
  }
  return files;
}

}  // namespace ghostforge
