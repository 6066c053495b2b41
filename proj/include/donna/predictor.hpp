// predictor.hpp: block-quality features, ridge accuracy predictor, rank
// correlation.
//
// A genome's features are its per-position block NSR values plus all
// pairwise products (i <= j): with N positions that is N + N(N+1)/2
// features, a degree-2 polynomial basis. The predictor is ridge regression
// on standardized features with an unpenalized intercept; the ridge
// strength is picked by leave-one-out cross-validation over a fixed
// decade grid, refitting explicitly for every held-out sample.
#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "donna/common.hpp"
#include "donna/config.hpp"
#include "donna/distill.hpp"

namespace donna {

// ------------------------------------------------------------- features

inline std::vector<double> nsr_features(const std::vector<double>& nsr) {
  const std::size_t n = nsr.size();
  std::vector<double> f;
  f.reserve(n + n * (n + 1) / 2);
  for (double v : nsr) f.push_back(v);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      f.push_back(nsr[i] * nsr[j]);
    }
  }
  return f;
}

// per-position NSR values of a genome, read from the block library
inline std::vector<double> genome_nsr(const SearchSpace& space,
                                      const BlockLibrary& lib,
                                      const Genome& g) {
  space.require_valid(g);
  std::vector<double> out;
  for (int p = 0; p < space.positions(); ++p) {
    const BlockEntry e = lib.load_meta(p, g.idx[static_cast<std::size_t>(p)]);
    check(e.status == "ok", "predictor: block library entry for position " +
                                std::to_string(p) + " choice " +
                                std::to_string(g.idx[static_cast<std::size_t>(p)]) +
                                " is " + e.status);
    out.push_back(e.nsr);
  }
  return out;
}

inline std::vector<double> genome_nsa(const SearchSpace& space,
                                      const BlockLibrary& lib,
                                      const Genome& g) {
  space.require_valid(g);
  std::vector<double> out;
  for (int p = 0; p < space.positions(); ++p) {
    const BlockEntry e = lib.load_meta(p, g.idx[static_cast<std::size_t>(p)]);
    check(e.status == "ok", "predictor: block library entry for position " +
                                std::to_string(p) + " choice " +
                                std::to_string(g.idx[static_cast<std::size_t>(p)]) +
                                " is " + e.status);
    out.push_back(e.nsa);
  }
  return out;
}

// ranking-only baseline: sum of per-position L1 block mismatch (stored NSA),
// lower is better
inline double baseline_rank_score(const SearchSpace& space,
                                  const BlockLibrary& lib, const Genome& g) {
  double s = 0.0;
  for (double v : genome_nsa(space, lib, g)) s += v;
  return s;
}

// -------------------------------------------------------- linear algebra

namespace detail {

// solves A x = b for symmetric positive definite A via Cholesky, in place
inline std::vector<double> cholesky_solve(std::vector<double> a,
                                          std::vector<double> b) {
  const std::size_t n = b.size();
  check(a.size() == n * n, "cholesky: bad dimensions");
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
      if (i == j) {
        check(s > 0.0, "cholesky: matrix is not positive definite");
        a[i * n + i] = std::sqrt(s);
      } else {
        a[i * n + j] = s / a[j * n + j];
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= a[i * n + k] * b[k];
    b[i] = s / a[i * n + i];
  }
  for (std::size_t ii = n; ii > 0; --ii) {
    const std::size_t i = ii - 1;
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= a[k * n + i] * b[k];
    b[i] = s / a[i * n + i];
  }
  return b;
}

}  // namespace detail

// ------------------------------------------------------------- predictor

struct Predictor {
  std::string space_hash;
  int positions = 0;
  double lambda = 0.0;
  double intercept = 0.0;
  std::vector<double> coef;       // per standardized feature
  std::vector<double> feat_mean;  // fixed full-training-set standardization
  std::vector<double> feat_std;

  std::size_t feature_count() const { return coef.size(); }

  // prediction from raw (unstandardized) features, clamped to [0, 1]
  double predict_features(const std::vector<double>& f) const {
    return std::clamp(predict_unclamped(f), 0.0, 1.0);
  }

  double predict_unclamped(const std::vector<double>& f) const {
    check(f.size() == coef.size(), "predictor: feature count mismatch, got " +
                                       std::to_string(f.size()) + ", model has " +
                                       std::to_string(coef.size()));
    double y = intercept;
    for (std::size_t j = 0; j < coef.size(); ++j) {
      y += coef[j] * (f[j] - feat_mean[j]) / feat_std[j];
    }
    return y;
  }

  double predict(const SearchSpace& space, const BlockLibrary& lib,
                 const Genome& g) const {
    return predict_features(nsr_features(genome_nsr(space, lib, g)));
  }
};

namespace detail {

// ridge solve on pre-standardized features; y is centered by the caller
inline std::vector<double> ridge_coef(const std::vector<std::vector<double>>& z,
                                      const std::vector<double>& yc,
                                      double lambda) {
  const std::size_t n = z.size(), f = z.front().size();
  std::vector<double> a(f * f, 0.0), b(f, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < f; ++p) {
      b[p] += z[i][p] * yc[i];
      for (std::size_t q = 0; q <= p; ++q) {
        a[p * f + q] += z[i][p] * z[i][q];
      }
    }
  }
  for (std::size_t p = 0; p < f; ++p) {
    for (std::size_t q = p + 1; q < f; ++q) a[p * f + q] = a[q * f + p];
    a[p * f + p] += lambda;
  }
  return cholesky_solve(std::move(a), std::move(b));
}

}  // namespace detail

inline const std::vector<double>& ridge_lambda_grid() {
  static const std::vector<double> grid = {1e-4, 1e-3, 1e-2, 1e-1,
                                           1.0,  10.0, 100.0};
  return grid;
}

// Fit on raw feature rows and targets. Standardization statistics come from
// the full training set and are stored with the model; leave-one-out refits
// reuse them unchanged, so every refit sees the same feature map.
inline Predictor fit_predictor(const std::vector<std::vector<double>>& x,
                               const std::vector<double>& y,
                               const std::string& space_hash, int positions) {
  const std::size_t n = x.size();
  check(n >= 3, "predictor: need at least 3 training samples, got " +
                    std::to_string(n));
  check(y.size() == n, "predictor: feature/target count mismatch");
  const std::size_t f = x.front().size();
  for (const auto& row : x) {
    check(row.size() == f, "predictor: ragged feature rows");
  }
  Predictor m;
  m.space_hash = space_hash;
  m.positions = positions;
  m.feat_mean.assign(f, 0.0);
  m.feat_std.assign(f, 0.0);
  for (std::size_t j = 0; j < f; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i][j];
    m.feat_mean[j] = s / static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = x[i][j] - m.feat_mean[j];
      ss += d * d;
    }
    const double sd = std::sqrt(ss / static_cast<double>(n));
    // a constant feature carries no information; standardize it to zero
    m.feat_std[j] = sd > 1e-12 ? sd : 1.0;
  }
  std::vector<std::vector<double>> z(n, std::vector<double>(f));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < f; ++j) {
      z[i][j] = (x[i][j] - m.feat_mean[j]) / m.feat_std[j];
    }
  }
  double best_sse = 0.0;
  bool have_best = false;
  for (double lambda : ridge_lambda_grid()) {
    double sse = 0.0;
    for (std::size_t hold = 0; hold < n; ++hold) {
      std::vector<std::vector<double>> zt;
      std::vector<double> yt;
      for (std::size_t i = 0; i < n; ++i) {
        if (i == hold) continue;
        zt.push_back(z[i]);
        yt.push_back(y[i]);
      }
      double ybar = 0.0;
      for (double v : yt) ybar += v;
      ybar /= static_cast<double>(yt.size());
      std::vector<double> yc;
      for (double v : yt) yc.push_back(v - ybar);
      const std::vector<double> beta = detail::ridge_coef(zt, yc, lambda);
      double pred = ybar;
      for (std::size_t j = 0; j < f; ++j) pred += beta[j] * z[hold][j];
      const double d = pred - y[hold];
      sse += d * d;
    }
    if (!have_best || sse < best_sse) {
      best_sse = sse;
      m.lambda = lambda;
      have_best = true;
    }
  }
  double ybar = 0.0;
  for (double v : y) ybar += v;
  ybar /= static_cast<double>(n);
  std::vector<double> yc;
  for (double v : y) yc.push_back(v - ybar);
  m.coef = detail::ridge_coef(z, yc, m.lambda);
  m.intercept = ybar;
  return m;
}

// intercept-only correction: shifts predictions so the mean residual over
// the given samples is zero
inline void recalibrate(Predictor& m, const std::vector<std::vector<double>>& x,
                        const std::vector<double>& y) {
  check(!x.empty() && x.size() == y.size(),
        "recalibrate: need matching non-empty samples");
  double shift = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    shift += y[i] - m.predict_unclamped(x[i]);
  }
  m.intercept += shift / static_cast<double>(x.size());
}

// ------------------------------------------------------- predictor files

inline void save_predictor(const Predictor& m, const std::string& path) {
  auto join = [](const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) s += " ";
      s += fmt_g17(v[i]);
    }
    return s;
  };
  std::string out = "[predictor]\n";
  out += "space = " + m.space_hash + "\n";
  out += "positions = " + std::to_string(m.positions) + "\n";
  out += "lambda = " + fmt_g17(m.lambda) + "\n";
  out += "intercept = " + fmt_g17(m.intercept) + "\n";
  out += "coef = " + join(m.coef) + "\n";
  out += "feat_mean = " + join(m.feat_mean) + "\n";
  out += "feat_std = " + join(m.feat_std) + "\n";
  write_file(path, out);
}

inline Predictor load_predictor(const std::string& path) {
  const ConfigFile cfg = ConfigFile::parse_file(path);
  Predictor m;
  m.space_hash = cfg.get("predictor", "space");
  m.positions = static_cast<int>(cfg.get_int("predictor", "positions"));
  m.lambda = cfg.get_double("predictor", "lambda");
  m.intercept = cfg.get_double("predictor", "intercept");
  auto nums = [&cfg](const std::string& key) {
    std::vector<double> v;
    for (const std::string& t : cfg.get_list("predictor", key)) {
      v.push_back(std::stod(t));
    }
    return v;
  };
  m.coef = nums("coef");
  m.feat_mean = nums("feat_mean");
  m.feat_std = nums("feat_std");
  check(m.coef.size() == m.feat_mean.size() &&
            m.coef.size() == m.feat_std.size(),
        "predictor file " + path + " has inconsistent vector lengths");
  return m;
}

// ------------------------------------------------------- rank correlation
//
// Kendall tau-b. The implementation sorts once and counts discordant pairs
// with a merge sort, so it is O(n log n); the test suite checks it against
// a direct O(n^2) pair count.

namespace detail {

inline long long merge_count_inversions(std::vector<double>& v,
                                        std::vector<double>& tmp,
                                        std::size_t lo, std::size_t hi) {
  if (hi - lo <= 1) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  long long count = merge_count_inversions(v, tmp, lo, mid) +
                    merge_count_inversions(v, tmp, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      count += static_cast<long long>(mid - i);
      tmp[k++] = v[j++];
    } else {
      tmp[k++] = v[i++];
    }
  }
  while (i < mid) tmp[k++] = v[i++];
  while (j < hi) tmp[k++] = v[j++];
  std::copy(tmp.begin() + static_cast<long long>(lo),
            tmp.begin() + static_cast<long long>(hi),
            v.begin() + static_cast<long long>(lo));
  return count;
}

}  // namespace detail

inline double kendall_tau(const std::vector<double>& a,
                          const std::vector<double>& b) {
  const std::size_t n = a.size();
  check(b.size() == n, "kendall: length mismatch");
  check(n >= 2, "kendall: need at least 2 samples");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    if (a[x] != a[y]) return a[x] < a[y];
    return b[x] < b[y];
  });
  const long long n0 = static_cast<long long>(n) * (n - 1) / 2;
  long long n1 = 0, n2 = 0, n3 = 0;
  // tie runs in a, and joint tie runs in (a, b)
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && a[order[j]] == a[order[i]]) ++j;
    const long long t = static_cast<long long>(j - i);
    n1 += t * (t - 1) / 2;
    for (std::size_t p = i; p < j;) {
      std::size_t q = p;
      while (q < j && b[order[q]] == b[order[p]]) ++q;
      const long long u = static_cast<long long>(q - p);
      n3 += u * (u - 1) / 2;
      p = q;
    }
    i = j;
  }
  {
    std::vector<double> bs;
    bs.reserve(n);
    for (std::size_t i = 0; i < n; ++i) bs.push_back(b[order[i]]);
    std::sort(bs.begin(), bs.end());
    for (std::size_t i = 0; i < n;) {
      std::size_t j = i;
      while (j < n && bs[j] == bs[i]) ++j;
      const long long t = static_cast<long long>(j - i);
      n2 += t * (t - 1) / 2;
      i = j;
    }
  }
  check(n0 > n1, "kendall: first ranking is fully tied");
  check(n0 > n2, "kendall: second ranking is fully tied");
  std::vector<double> seq;
  seq.reserve(n);
  for (std::size_t i = 0; i < n; ++i) seq.push_back(b[order[i]]);
  std::vector<double> tmp(n);
  const long long swaps = detail::merge_count_inversions(seq, tmp, 0, n);
  const long long pq = n0 - n1 - n2 + n3 - 2 * swaps;
  return static_cast<double>(pq) /
         std::sqrt(static_cast<double>(n0 - n1) *
                   static_cast<double>(n0 - n2));
}

// --------------------------------------------------------------- metrics

struct PredictorEval {
  double mse = 0.0;
  double kendall = 0.0;
};

inline PredictorEval evaluate_predictor(const Predictor& m,
                                        const std::vector<std::vector<double>>& x,
                                        const std::vector<double>& y) {
  check(!x.empty() && x.size() == y.size(),
        "predictor eval: need matching non-empty samples");
  PredictorEval ev;
  std::vector<double> pred;
  for (std::size_t i = 0; i < x.size(); ++i) {
    pred.push_back(m.predict_features(x[i]));
    const double d = pred.back() - y[i];
    ev.mse += d * d;
  }
  ev.mse /= static_cast<double>(x.size());
  ev.kendall = kendall_tau(pred, y);
  return ev;
}

}  // namespace donna
