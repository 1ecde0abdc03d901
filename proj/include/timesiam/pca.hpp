#pragma once

// Diversity analysis of lineage representations: every window is encoded
// once per lineage row, mean-pooled, and the pooled vectors are projected
// onto their top-2 principal components (power iteration with deflation).

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "timesiam/common.hpp"
#include "timesiam/data.hpp"
#include "timesiam/embedding.hpp"
#include "timesiam/model.hpp"

namespace timesiam {

struct PcaRow {
  int window_id = 0;
  int lineage = 0;
  double pc1 = 0.0;
  double pc2 = 0.0;
};

struct PcaResult {
  std::vector<PcaRow> rows;
  bool degenerate_second = false;  // rank < 2: pc2 forced to zero
  double eigenvalue1 = 0.0;
  double eigenvalue2 = 0.0;
};

namespace detail {

// Leading eigenvector of a symmetric matrix by power iteration. Returns the
// eigenvalue; `vec` holds the unit eigenvector. A (near-)zero matrix yields
// eigenvalue 0 and a zero vector.
inline double power_iteration(const std::vector<double>& mat, int n,
                              std::vector<double>& vec, Rng& rng,
                              int max_iters = 1000, double tol = 1e-8) {
  vec.assign(static_cast<size_t>(n), 0.0);
  std::vector<double> v(static_cast<size_t>(n));
  double norm = 0.0;
  for (double& x : v) {
    x = rng.normal(0.0, 1.0);
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;

  std::vector<double> next(static_cast<size_t>(n));
  double eigenvalue = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    for (int i = 0; i < n; ++i) {
      double acc = 0.0;
      for (int j = 0; j < n; ++j) acc += mat[static_cast<size_t>(i) * n + j] * v[static_cast<size_t>(j)];
      next[static_cast<size_t>(i)] = acc;
    }
    double next_norm = 0.0;
    for (double x : next) next_norm += x * x;
    next_norm = std::sqrt(next_norm);
    if (next_norm < 1e-300) return 0.0;  // matrix is (numerically) zero
    double delta = 0.0;
    for (int i = 0; i < n; ++i) {
      const double nv = next[static_cast<size_t>(i)] / next_norm;
      delta = std::max(delta, std::abs(nv - v[static_cast<size_t>(i)]));
      v[static_cast<size_t>(i)] = nv;
    }
    eigenvalue = next_norm;
    // Sign flips oscillate for negative eigenvalues; covariance matrices are
    // PSD so plain convergence is enough.
    if (delta < tol) break;
  }
  vec = v;
  return eigenvalue;
}

}  // namespace detail

// Mean-pooled encoding of a raw window under lineage row `lineage`.
inline std::vector<double> pooled_representation(SiameseModel<float>& model,
                                                 const Mat& raw_window, int lineage) {
  Mat w = raw_window;
  instance_normalize(w);
  Graph<float> g(false);
  TokenSeq<float> rep =
      encode(g, model, add_lineage(g, embed_window(g, model, w), model.lineages, lineage));
  std::vector<double> pooled(static_cast<size_t>(model.cfg.d_model), 0.0);
  long count = 0;
  for (const auto& grp : rep.groups) {
    for (int i = 0; i < grp.rows(); ++i)
      for (int j = 0; j < grp.cols(); ++j)
        pooled[static_cast<size_t>(j)] += static_cast<double>(grp.at(i, j));
    count += grp.rows();
  }
  for (double& x : pooled) x /= static_cast<double>(count);
  return pooled;
}

// Projects every (window, lineage) pooled representation onto the top-2
// principal components of the pooled set.
inline PcaResult lineage_diversity_pca(SiameseModel<float>& model,
                                       const std::vector<Mat>& windows, int n_lineages,
                                       uint64_t seed = 0) {
  if (windows.size() < 2)
    throw ConfigError("lineage PCA needs at least 2 windows, got " +
                      std::to_string(windows.size()));
  if (n_lineages < 1 || n_lineages > model.lineages.count())
    throw ConfigError("lineage count " + std::to_string(n_lineages) + " outside [1, " +
                      std::to_string(model.lineages.count()) + "]");

  const int D = model.cfg.d_model;
  std::vector<std::vector<double>> reps;
  std::vector<std::pair<int, int>> ids;  // (window, lineage)
  reps.reserve(windows.size() * static_cast<size_t>(n_lineages));
  for (size_t w = 0; w < windows.size(); ++w)
    for (int l = 0; l < n_lineages; ++l) {
      reps.push_back(pooled_representation(model, windows[w], l));
      ids.emplace_back(static_cast<int>(w), l);
    }

  const size_t n = reps.size();
  std::vector<double> mean(static_cast<size_t>(D), 0.0);
  for (const auto& r : reps)
    for (int j = 0; j < D; ++j) mean[static_cast<size_t>(j)] += r[static_cast<size_t>(j)];
  for (double& x : mean) x /= static_cast<double>(n);
  for (auto& r : reps)
    for (int j = 0; j < D; ++j) r[static_cast<size_t>(j)] -= mean[static_cast<size_t>(j)];

  // Covariance (population normalization; only directions matter).
  std::vector<double> cov(static_cast<size_t>(D) * D, 0.0);
  for (const auto& r : reps)
    for (int i = 0; i < D; ++i)
      for (int j = 0; j < D; ++j)
        cov[static_cast<size_t>(i) * D + j] += r[static_cast<size_t>(i)] * r[static_cast<size_t>(j)];
  for (double& x : cov) x /= static_cast<double>(n);

  Rng rng = Rng::derive(seed, 0xbca);
  std::vector<double> e1, e2;
  PcaResult out;
  out.eigenvalue1 = detail::power_iteration(cov, D, e1, rng);
  if (out.eigenvalue1 <= 0.0) {
    // All representations identical: everything sits at the origin.
    e1.assign(static_cast<size_t>(D), 0.0);
    e2.assign(static_cast<size_t>(D), 0.0);
    out.degenerate_second = true;
  } else {
    // Deflate and find the second component.
    std::vector<double> deflated = cov;
    for (int i = 0; i < D; ++i)
      for (int j = 0; j < D; ++j)
        deflated[static_cast<size_t>(i) * D + j] -=
            out.eigenvalue1 * e1[static_cast<size_t>(i)] * e1[static_cast<size_t>(j)];
    out.eigenvalue2 = detail::power_iteration(deflated, D, e2, rng);
    if (out.eigenvalue2 <= out.eigenvalue1 * 1e-12) {
      e2.assign(static_cast<size_t>(D), 0.0);
      out.degenerate_second = true;
      out.eigenvalue2 = 0.0;
    }
  }

  out.rows.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    PcaRow row;
    row.window_id = ids[i].first;
    row.lineage = ids[i].second;
    for (int j = 0; j < D; ++j) {
      row.pc1 += reps[i][static_cast<size_t>(j)] * e1[static_cast<size_t>(j)];
      row.pc2 += reps[i][static_cast<size_t>(j)] * e2[static_cast<size_t>(j)];
    }
    out.rows.push_back(row);
  }
  return out;
}

inline std::string pca_to_csv(const PcaResult& res) {
  std::ostringstream os;
  os.precision(10);
  os << "window_id,lineage,pc1,pc2\n";
  for (const auto& r : res.rows)
    os << r.window_id << "," << r.lineage << "," << r.pc1 << "," << r.pc2 << "\n";
  return os.str();
}

}  // namespace timesiam
