// Independent reference implementations used to cross-check the library.
// Everything here is deliberately written the slow, obvious way — plain
// nested loops, O(n^2) pair counting, Gaussian elimination — and shares no
// code with the implementations under test.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <utility>
#include <vector>

#include "donna/common.hpp"
#include "donna/tensor.hpp"

namespace oracle {

// ------------------------------------------------------------ convolution

struct ConvCount {
  donna::Tensor out;
  long long multiplies = 0;
};

// Direct seven-loop grouped convolution. Counts every multiply it performs,
// which doubles as a runtime-instrumentation oracle for MAC accounting.
inline ConvCount conv2d(const donna::Tensor& x, const donna::Tensor& w,
                        const double* bias, int stride, int pad, int groups) {
  const int N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Cout = w.dim(0), K = w.dim(2);
  const int cin_g = Cin / groups, cout_g = Cout / groups;
  const int Ho = (H + 2 * pad - K) / stride + 1;
  const int Wo = (W + 2 * pad - K) / stride + 1;
  ConvCount r;
  r.out = donna::Tensor({N, Cout, Ho, Wo});
  for (int n = 0; n < N; ++n) {
    for (int oc = 0; oc < Cout; ++oc) {
      const int g = oc / cout_g;
      for (int oh = 0; oh < Ho; ++oh) {
        for (int ow = 0; ow < Wo; ++ow) {
          double acc = bias != nullptr ? bias[oc] : 0.0;
          for (int ic = 0; ic < cin_g; ++ic) {
            for (int kh = 0; kh < K; ++kh) {
              for (int kw = 0; kw < K; ++kw) {
                const int ih = oh * stride - pad + kh;
                const int iw = ow * stride - pad + kw;
                if (ih < 0 || ih >= H || iw < 0 || iw >= W) {
                  // padding contributes zero but the hardware still multiplies
                  ++r.multiplies;
                  continue;
                }
                acc += x.data()[x.idx4(n, g * cin_g + ic, ih, iw)] *
                       w.data()[w.idx4(oc, ic, kh, kw)];
                ++r.multiplies;
              }
            }
          }
          r.out.data()[r.out.idx4(n, oc, oh, ow)] = acc;
        }
      }
    }
  }
  return r;
}

// -------------------------------------------------- noise-to-signal metrics

struct ChannelGather {
  std::vector<std::vector<double>> ref;   // per channel, all reference values
  std::vector<std::vector<double>> diff;  // per channel, all ref - hyp values
};

inline ChannelGather gather_channels(const std::vector<donna::Tensor>& refs,
                                     const std::vector<donna::Tensor>& hyps) {
  ChannelGather g;
  const int C = refs.front().dim(1);
  g.ref.resize(static_cast<std::size_t>(C));
  g.diff.resize(static_cast<std::size_t>(C));
  for (std::size_t b = 0; b < refs.size(); ++b) {
    const donna::Tensor& r = refs[b];
    const donna::Tensor& h = hyps[b];
    for (int n = 0; n < r.dim(0); ++n) {
      for (int c = 0; c < C; ++c) {
        for (int y = 0; y < r.dim(2); ++y) {
          for (int x = 0; x < r.dim(3); ++x) {
            const double rv = r.data()[r.idx4(n, c, y, x)];
            const double hv = h.data()[h.idx4(n, c, y, x)];
            g.ref[static_cast<std::size_t>(c)].push_back(rv);
            g.diff[static_cast<std::size_t>(c)].push_back(rv - hv);
          }
        }
      }
    }
  }
  return g;
}

// population stddev by the two-pass definition
inline double loop_stddev(const std::vector<double>& v) {
  double mu = 0.0;
  for (double x : v) mu += x;
  mu /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mu) * (x - mu);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

// stats_refs: batches the channel statistics are taken from (the full
// reference split); refs/hyps: the batches the metric is evaluated on
inline double loop_nsr(const std::vector<donna::Tensor>& stats_refs,
                       const std::vector<donna::Tensor>& refs,
                       const std::vector<donna::Tensor>& hyps) {
  const ChannelGather stats = gather_channels(stats_refs, stats_refs);
  const ChannelGather g = gather_channels(refs, hyps);
  double total = 0.0;
  for (std::size_t c = 0; c < g.diff.size(); ++c) {
    double mse = 0.0;
    for (double d : g.diff[c]) mse += d * d;
    mse /= static_cast<double>(g.diff[c].size());
    const double sd = loop_stddev(stats.ref[c]);
    total += mse / (sd * sd);
  }
  return total / static_cast<double>(g.diff.size());
}

inline double loop_nsa(const std::vector<donna::Tensor>& stats_refs,
                       const std::vector<donna::Tensor>& refs,
                       const std::vector<donna::Tensor>& hyps) {
  const ChannelGather stats = gather_channels(stats_refs, stats_refs);
  const ChannelGather g = gather_channels(refs, hyps);
  double total = 0.0;
  for (std::size_t c = 0; c < g.diff.size(); ++c) {
    double l1 = 0.0;
    for (double d : g.diff[c]) l1 += std::abs(d);
    l1 /= static_cast<double>(g.diff[c].size());
    total += l1 / loop_stddev(stats.ref[c]);
  }
  return total / static_cast<double>(g.diff.size());
}

// ------------------------------------------------------------- kendall tau

// tau-b by explicit pair counting
inline double pair_count_tau(const std::vector<double>& a,
                             const std::vector<double>& b) {
  const std::size_t n = a.size();
  long long conc = 0, disc = 0, tie_a = 0, tie_b = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool a_lt = a[i] < a[j], a_gt = a[i] > a[j];
      const bool b_lt = b[i] < b[j], b_gt = b[i] > b[j];
      if (!a_lt && !a_gt) ++tie_a;
      if (!b_lt && !b_gt) ++tie_b;
      if ((a_lt && b_lt) || (a_gt && b_gt)) ++conc;
      if ((a_lt && b_gt) || (a_gt && b_lt)) ++disc;
    }
  }
  const long long n0 = static_cast<long long>(n) * (n - 1) / 2;
  return static_cast<double>(conc - disc) /
         std::sqrt(static_cast<double>(n0 - tie_a) *
                   static_cast<double>(n0 - tie_b));
}

// -------------------------------------------------------- linear algebra

// Gaussian elimination with partial pivoting; a is row-major n x n.
inline std::vector<double> gauss_solve(std::vector<double> a,
                                       std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(a[r * n + col]) > std::abs(a[piv * n + col])) piv = r;
    }
    if (piv != col) {
      for (std::size_t c = 0; c < n; ++c) std::swap(a[col * n + c], a[piv * n + c]);
      std::swap(b[col], b[piv]);
    }
    const double d = a[col * n + col];
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a[r * n + col] / d;
      for (std::size_t c = col; c < n; ++c) a[r * n + c] -= f * a[col * n + c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n, 0.0);
  for (std::size_t ri = n; ri-- > 0;) {
    double s = b[ri];
    for (std::size_t c = ri + 1; c < n; ++c) s -= a[ri * n + c] * x[c];
    x[ri] = s / a[ri * n + ri];
  }
  return x;
}

// Ridge regression on already-standardized features with centered targets,
// via explicit normal equations and the elimination solver above.
inline std::vector<double> ridge_fit(const std::vector<std::vector<double>>& z,
                                     const std::vector<double>& yc,
                                     double lambda) {
  const std::size_t n = z.size(), f = z.front().size();
  std::vector<double> a(f * f, 0.0), b(f, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < f; ++p) {
      for (std::size_t q = 0; q < f; ++q) a[p * f + q] += z[i][p] * z[i][q];
      b[p] += z[i][p] * yc[i];
    }
  }
  for (std::size_t p = 0; p < f; ++p) a[p * f + p] += lambda;
  return gauss_solve(std::move(a), std::move(b));
}

// Leave-one-out SSE for one lambda on raw feature rows: standardizes on the
// full set (constant features pinned to unit scale) exactly as a fresh
// implementation of the protocol would, refitting per held-out row.
inline double loo_sse(const std::vector<std::vector<double>>& x,
                      const std::vector<double>& y, double lambda) {
  const std::size_t n = x.size(), f = x.front().size();
  std::vector<double> mean(f, 0.0), sd(f, 0.0);
  for (std::size_t j = 0; j < f; ++j) {
    for (std::size_t i = 0; i < n; ++i) mean[j] += x[i][j];
    mean[j] /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      ss += (x[i][j] - mean[j]) * (x[i][j] - mean[j]);
    }
    sd[j] = std::sqrt(ss / static_cast<double>(n));
    if (sd[j] <= 1e-12) sd[j] = 1.0;
  }
  std::vector<std::vector<double>> z(n, std::vector<double>(f));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < f; ++j) z[i][j] = (x[i][j] - mean[j]) / sd[j];
  }
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
    for (double& v : yt) v -= ybar;
    const std::vector<double> coef = ridge_fit(zt, yt, lambda);
    double pred = ybar;
    for (std::size_t j = 0; j < f; ++j) pred += coef[j] * z[hold][j];
    const double e = pred - y[hold];
    sse += e * e;
  }
  return sse;
}

// ----------------------------------------------------- dominance and fronts

struct Point2 {
  double acc = 0.0;   // maximized
  double cost = 0.0;  // minimized
};

inline bool strictly_better(const Point2& a, const Point2& b) {
  return a.acc >= b.acc && a.cost <= b.cost &&
         (a.acc > b.acc || a.cost < b.cost);
}

// indices of the non-dominated points, ascending
inline std::vector<int> brute_front(const std::vector<Point2>& pts) {
  std::vector<int> out;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    bool dominated = false;
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (j != i && strictly_better(pts[j], pts[i])) {
        dominated = true;
        break;
      }
    }
    if (!dominated) out.push_back(static_cast<int>(i));
  }
  return out;
}

// successive fronts by peeling, as ascending index lists
inline std::vector<std::vector<int>> brute_fronts(std::vector<Point2> pts) {
  std::vector<int> alive(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) alive[i] = static_cast<int>(i);
  std::vector<std::vector<int>> fronts;
  while (!alive.empty()) {
    std::vector<Point2> sub;
    for (int i : alive) sub.push_back(pts[static_cast<std::size_t>(i)]);
    std::vector<int> local = brute_front(sub);
    std::vector<int> front;
    for (int l : local) front.push_back(alive[static_cast<std::size_t>(l)]);
    fronts.push_back(front);
    std::vector<int> rest;
    std::size_t k = 0;
    for (std::size_t i = 0; i < alive.size(); ++i) {
      if (k < local.size() && static_cast<int>(i) == local[k]) {
        ++k;
      } else {
        rest.push_back(alive[i]);
      }
    }
    alive = std::move(rest);
  }
  return fronts;
}

// Dominated 2-D area by interval sweep over the accuracy axis: for each
// strip between consecutive accuracy levels, the covered cost extent is set
// by the cheapest point at or above the strip's top.
inline double sweep_hypervolume(const std::vector<Point2>& pts,
                                double ref_acc, double ref_cost) {
  if (pts.empty()) return 0.0;
  std::vector<double> levels{ref_acc};
  for (const Point2& p : pts) levels.push_back(p.acc);
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  double area = 0.0;
  for (std::size_t i = 0; i + 1 < levels.size(); ++i) {
    const double lo = levels[i], hi = levels[i + 1];
    double min_cost = ref_cost;
    bool covered = false;
    for (const Point2& p : pts) {
      if (p.acc >= hi) {
        covered = true;
        min_cost = std::min(min_cost, p.cost);
      }
    }
    if (covered) area += (hi - lo) * (ref_cost - min_cost);
  }
  return area;
}

// ------------------------------------------------------- snapshot parsing

// Parameter count straight off the DNW1 byte layout: records whose names do
// not carry the reserved running-statistics suffixes are parameters.
inline long long snapshot_param_count(const std::string& bytes) {
  donna::check(bytes.size() >= 4 && bytes.compare(0, 4, "DNW1") == 0,
               "oracle: not a DNW1 snapshot");
  const auto ends_with = [](const std::string& s, const std::string& suf) {
    return s.size() >= suf.size() &&
           s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
  };
  std::size_t off = 4;
  long long total = 0;
  while (off < bytes.size()) {
    const auto u32 = [&](const char* what) {
      donna::check(off + 4 <= bytes.size(),
                   std::string("oracle: truncated snapshot at ") + what);
      std::uint32_t v = 0;
      std::memcpy(&v, bytes.data() + off, 4);
      off += 4;
      return v;
    };
    const std::uint32_t name_len = u32("name length");
    donna::check(off + name_len <= bytes.size(), "oracle: truncated name");
    const std::string name = bytes.substr(off, name_len);
    off += name_len;
    const std::uint32_t rank = u32("rank");
    long long numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      numel *= static_cast<long long>(u32("dim"));
    }
    off += static_cast<std::size_t>(numel) * sizeof(double);
    donna::check(off <= bytes.size(), "oracle: truncated payload");
    if (!ends_with(name, ".running_mean") && !ends_with(name, ".running_var")) {
      total += numel;
    }
  }
  return total;
}

}  // namespace oracle
