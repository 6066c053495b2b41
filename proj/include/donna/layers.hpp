// layers.hpp: layer-object reverse-mode autodiff.
//
// Each layer owns its parameters and gradients, caches what forward saw, and
// implements backward against that cache. Convolution lowers to im2col +
// dgemm per group; depthwise convolution uses direct loops. Everything is
// double precision.
#pragma once

#include <algorithm>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "donna/common.hpp"
#include "donna/gemm.hpp"
#include "donna/rng.hpp"
#include "donna/tensor.hpp"

namespace donna {

enum class Mode { train, eval };

struct Param {
  Tensor value;
  Tensor grad;

  explicit Param(std::vector<int> shape)
      : value(shape), grad(std::move(shape)) {}
  Param() = default;
};

struct NamedParam {
  std::string name;
  Param* param;
};

struct NamedBuffer {
  std::string name;
  Tensor* tensor;
};

// flat structural record, consumed by MAC counting and its test oracle
struct LayerDesc {
  std::string kind;
  std::vector<int> in_shape;
  std::vector<int> out_shape;
  int in_ch = 0, out_ch = 0, kernel = 0, stride = 0, pad = 0, groups = 0;
  bool bias = false;
};

// round-half-up channel arithmetic shared by SE and block construction
inline int round_half_up(double v) {
  return static_cast<int>(std::floor(v + 0.5));
}

// relu kink instrumentation for the gradient checker: when enabled, every
// relu forward records the smallest |preactivation| it saw
struct ReluProbe {
  bool enabled = false;
  double min_abs = 1e300;
};

inline ReluProbe& relu_probe() {
  static thread_local ReluProbe probe;
  return probe;
}

class Layer {
 public:
  virtual ~Layer() = default;
  // by value: callers that are done with x move it in, and layers that must
  // remember their input adopt the buffer instead of copying it
  virtual Tensor forward(Tensor x, Mode mode) = 0;
  virtual Tensor backward(const Tensor& dy) = 0;
  virtual std::vector<int> out_shape(const std::vector<int>& in) const = 0;
  virtual void collect(const std::string& prefix, std::vector<NamedParam>& ps,
                       std::vector<NamedBuffer>& bs) {
    (void)prefix;
    (void)ps;
    (void)bs;
  }
  virtual void describe(const std::vector<int>& in,
                        std::vector<LayerDesc>& sink) const = 0;
};

// ---------------------------------------------------------------- Conv2d

class Conv2d : public Layer {
 public:
  Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad, int groups,
         bool bias)
      : in_ch_(in_ch),
        out_ch_(out_ch),
        k_(kernel),
        stride_(stride),
        pad_(pad),
        groups_(groups),
        has_bias_(bias) {
    check(in_ch > 0 && out_ch > 0, "conv: channel counts must be positive");
    check(kernel >= 1 && stride >= 1 && pad >= 0, "conv: bad geometry");
    check(groups >= 1 && in_ch % groups == 0 && out_ch % groups == 0,
          "conv: groups must divide both channel counts (in=" +
              std::to_string(in_ch) + ", out=" + std::to_string(out_ch) +
              ", groups=" + std::to_string(groups) + ")");
    weight_ = Param({out_ch, in_ch / groups, kernel, kernel});
    if (has_bias_) bias_ = Param({out_ch});
  }

  bool needs_input_grad = true;

  Tensor forward(Tensor x, Mode) override {
    check(x.rank() == 4, "conv: input must be rank 4");
    check(x.dim(1) == in_ch_, "conv: input has " + std::to_string(x.dim(1)) +
                                  " channels, layer expects " +
                                  std::to_string(in_ch_));
    const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
    const int Ho = out_spatial(H), Wo = out_spatial(W);
    check(Ho > 0 && Wo > 0, "conv: output spatial size would be empty");
    input_ = std::move(x);
    Tensor out({N, out_ch_, Ho, Wo}, no_init);
    if (depthwise()) {
      forward_depthwise(input_, out, N, H, W, Ho, Wo);
    } else {
      forward_grouped(input_, out, N, H, W, Ho, Wo);
    }
    if (has_bias_) {
      const double* b = bias_.value.data();
      double* o = out.data();
      const long long plane = static_cast<long long>(Ho) * Wo;
      for (int n = 0; n < N; ++n) {
        for (int c = 0; c < out_ch_; ++c) {
          double bv = b[c];
          double* p = o + (static_cast<long long>(n) * out_ch_ + c) * plane;
          for (long long i = 0; i < plane; ++i) p[i] += bv;
        }
      }
    }
    return out;
  }

  Tensor backward(const Tensor& dy) override {
    check(!input_.empty(), "conv: backward before forward");
    const int N = input_.dim(0), H = input_.dim(2), W = input_.dim(3);
    const int Ho = dy.dim(2), Wo = dy.dim(3);
    check(dy.dim(0) == N && dy.dim(1) == out_ch_,
          "conv: upstream gradient shape mismatch");
    if (has_bias_) {
      double* db = bias_.grad.data();
      const double* d = dy.data();
      const long long plane = static_cast<long long>(Ho) * Wo;
      for (int n = 0; n < N; ++n) {
        for (int c = 0; c < out_ch_; ++c) {
          const double* p = d + (static_cast<long long>(n) * out_ch_ + c) * plane;
          double s = 0.0;
          for (long long i = 0; i < plane; ++i) s += p[i];
          db[c] += s;
        }
      }
    }
    // pointwise col2im and the padded stride-1 depthwise path assign every
    // element of dx exactly once, so those skip the zero fill
    const bool full_assign =
        needs_input_grad &&
        (depthwise() ? dw_backward_assigns(H, W, Ho, Wo) : pointwise());
    Tensor dx = full_assign ? Tensor({N, in_ch_, H, W}, no_init)
                            : Tensor({N, in_ch_, H, W});
    if (depthwise()) {
      backward_depthwise(dy, dx, N, H, W, Ho, Wo);
    } else {
      backward_grouped(dy, dx, N, H, W, Ho, Wo);
    }
    return dx;
  }

  std::vector<int> out_shape(const std::vector<int>& in) const override {
    check(in.size() == 4 && in[1] == in_ch_, "conv: bad input shape");
    return {in[0], out_ch_, out_spatial(in[2]), out_spatial(in[3])};
  }

  void collect(const std::string& prefix, std::vector<NamedParam>& ps,
               std::vector<NamedBuffer>& bs) override {
    (void)bs;
    ps.push_back({prefix + "weight", &weight_});
    if (has_bias_) ps.push_back({prefix + "bias", &bias_});
  }

  void describe(const std::vector<int>& in,
                std::vector<LayerDesc>& sink) const override {
    LayerDesc d;
    d.kind = "conv";
    d.in_shape = in;
    d.out_shape = out_shape(in);
    d.in_ch = in_ch_;
    d.out_ch = out_ch_;
    d.kernel = k_;
    d.stride = stride_;
    d.pad = pad_;
    d.groups = groups_;
    d.bias = has_bias_;
    sink.push_back(std::move(d));
  }

  Param& weight() { return weight_; }
  Param& bias() { return bias_; }
  int groups() const { return groups_; }

  // the input adopted by the last forward; valid until the next forward,
  // which lets residual units reuse it instead of keeping their own copy
  const Tensor& saved_input() const { return input_; }

 private:
  bool depthwise() const {
    return groups_ == in_ch_ && in_ch_ == out_ch_;
  }

  bool pointwise() const { return k_ == 1 && stride_ == 1 && pad_ == 0; }

  int out_spatial(int in) const { return (in + 2 * pad_ - k_) / stride_ + 1; }

  // output rows/columns whose kernel tap (kh or kw) lands inside the input;
  // taps outside contribute nothing because padding is zero
  struct TapRange {
    int lo, hi;  // half-open
  };
  TapRange tap_range(int k_off, int in_size, int out_size) const {
    int lo = 0;
    if (pad_ > k_off) lo = (pad_ - k_off + stride_ - 1) / stride_;
    const int top = in_size - 1 + pad_ - k_off;
    int hi = top < 0 ? 0 : std::min(out_size, top / stride_ + 1);
    if (hi < lo) hi = lo;
    return {lo, hi};
  }

  // per-tap geometry, shared by every (sample, channel) pair of one call
  struct Tap {
    int kh, kw;
    int oh_lo, oh_hi, ow_lo, ow_hi;
    long long in_off;   // input offset of the first covered element
    long long out_off;  // matching output offset
  };

  std::vector<Tap> make_taps(int H, int W, int Ho, int Wo) const {
    std::vector<Tap> taps;
    taps.reserve(static_cast<std::size_t>(k_) * k_);
    for (int kh = 0; kh < k_; ++kh) {
      const TapRange rh = tap_range(kh, H, Ho);
      for (int kw = 0; kw < k_; ++kw) {
        const TapRange rw = tap_range(kw, W, Wo);
        Tap t;
        t.kh = kh;
        t.kw = kw;
        t.oh_lo = rh.lo;
        t.oh_hi = rh.hi;
        t.ow_lo = rw.lo;
        t.ow_hi = rw.hi;
        t.in_off = static_cast<long long>(rh.lo * stride_ - pad_ + kh) * W +
                   rw.lo * stride_ - pad_ + kw;
        t.out_off = static_cast<long long>(rh.lo) * Wo + rw.lo;
        taps.push_back(t);
      }
    }
    return taps;
  }

  // the small spatial grids this family runs at make per-tap edge clipping
  // the dominant cost, so the common geometries stage each plane into an
  // L1-resident zero-padded buffer and run fixed-trip kernels over it
  static constexpr int kMaxPadSide = 32;

  bool paddable(int H, int W) const {
    return pad_ == k_ / 2 && (k_ == 3 || k_ == 5 || k_ == 7) &&
           (stride_ == 1 || stride_ == 2) && H <= kMaxPadSide &&
           W <= kMaxPadSide;
  }

  // true exactly when backward_depthwise takes the padded stride-1 path,
  // which writes every element of dx instead of accumulating
  bool dw_backward_assigns(int H, int W, int Ho, int Wo) const {
    return paddable(H, W) && stride_ == 1 && Ho == H && Wo == W &&
           (Wo == 2 || Wo == 4 || Wo == 8 || Wo == 16);
  }

  // constant trip counts let the compiler unroll the whole tap nest and keep
  // the output row in vector registers instead of bouncing through L1
  template <int K, int S, int WO>
  void forward_dw_padded(const Tensor& x, Tensor& out, int N, int H, int W,
                         int Ho) {
    constexpr int P = K / 2;
    const int PW = W + 2 * P;
    const int PH = H + 2 * P;
    stage_.assign(static_cast<std::size_t>(PH) * PW, 0.0);
    double* pad = stage_.data();
    const double* wts = weight_.value.data();
    for (int n = 0; n < N; ++n) {
      for (int c = 0; c < out_ch_; ++c) {
        const double* wc = wts + static_cast<long long>(c) * K * K;
        const double* xs = x.data() + x.idx4(n, c, 0, 0);
        double* os = out.data() + out.idx4(n, c, 0, 0);
        for (int h = 0; h < H; ++h) {
          std::memcpy(pad + (h + P) * PW + P, xs + h * W,
                      static_cast<std::size_t>(W) * sizeof(double));
        }
        for (int oh = 0; oh < Ho; ++oh) {
          const double* prow = pad + (oh * S) * PW;
          double acc[WO] = {};
          for (int kh = 0; kh < K; ++kh) {
            const double* row = prow + kh * PW;
            for (int kw = 0; kw < K; ++kw) {
              const double wv = wc[kh * K + kw];
              for (int i = 0; i < WO; ++i) acc[i] += wv * row[i * S + kw];
            }
          }
          double* orow = os + static_cast<long long>(oh) * WO;
          for (int i = 0; i < WO; ++i) orow[i] = acc[i];
        }
      }
    }
  }

  // stride-1 input gradient is the correlation of dy with the flipped
  // kernel, so it reuses the padded forward structure; the weight gradient
  // accumulates per-tap dot products against the staged input
  template <int K, int WO>
  void backward_dw_padded_s1(const Tensor& dy, Tensor& dx, int N, int H,
                             int W, int Ho) {
    constexpr int P = K / 2;
    const int PW = W + 2 * P;
    const int PH = H + 2 * P;
    stage_.assign(static_cast<std::size_t>(PH) * PW, 0.0);
    dstage_.assign(static_cast<std::size_t>(PH) * PW, 0.0);
    double* pad = stage_.data();
    double* dpad = dstage_.data();
    double* dwts = weight_.grad.data();
    const double* wts = weight_.value.data();
    for (int n = 0; n < N; ++n) {
      for (int c = 0; c < out_ch_; ++c) {
        double* dwc = dwts + static_cast<long long>(c) * K * K;
        const double* wc = wts + static_cast<long long>(c) * K * K;
        const double* xs = input_.data() + input_.idx4(n, c, 0, 0);
        const double* ds = dy.data() + dy.idx4(n, c, 0, 0);
        for (int h = 0; h < H; ++h) {
          std::memcpy(pad + (h + P) * PW + P, xs + h * W,
                      static_cast<std::size_t>(W) * sizeof(double));
        }
        for (int kh = 0; kh < K; ++kh) {
          for (int kw = 0; kw < K; ++kw) {
            double acc[WO] = {};
            for (int oh = 0; oh < Ho; ++oh) {
              const double* row = pad + (oh + kh) * PW + kw;
              const double* drow = ds + static_cast<long long>(oh) * WO;
              for (int i = 0; i < WO; ++i) acc[i] += row[i] * drow[i];
            }
            double s = 0.0;
            for (int i = 0; i < WO; ++i) s += acc[i];
            dwc[kh * K + kw] += s;
          }
        }
        if (needs_input_grad) {
          for (int h = 0; h < Ho; ++h) {
            std::memcpy(dpad + (h + P) * PW + P, ds + static_cast<long long>(h) * WO,
                        static_cast<std::size_t>(WO) * sizeof(double));
          }
          double* dxs = dx.data() + dx.idx4(n, c, 0, 0);
          for (int ih = 0; ih < H; ++ih) {
            const double* prow = dpad + ih * PW;
            double acc[WO] = {};
            for (int kh = 0; kh < K; ++kh) {
              const double* row = prow + kh * PW;
              for (int kw = 0; kw < K; ++kw) {
                const double wv = wc[(K - 1 - kh) * K + (K - 1 - kw)];
                for (int i = 0; i < WO; ++i) acc[i] += wv * row[i + kw];
              }
            }
            double* dxr = dxs + static_cast<long long>(ih) * W;
            for (int i = 0; i < WO; ++i) dxr[i] = acc[i];
          }
        }
      }
    }
  }

  template <int K, int S>
  bool forward_dw_try(const Tensor& x, Tensor& out, int N, int H, int W,
                      int Ho, int Wo) {
    switch (Wo) {
      case 2: forward_dw_padded<K, S, 2>(x, out, N, H, W, Ho); return true;
      case 4: forward_dw_padded<K, S, 4>(x, out, N, H, W, Ho); return true;
      case 8: forward_dw_padded<K, S, 8>(x, out, N, H, W, Ho); return true;
      case 16: forward_dw_padded<K, S, 16>(x, out, N, H, W, Ho); return true;
      default: return false;
    }
  }

  template <int K>
  bool backward_dw_try(const Tensor& dy, Tensor& dx, int N, int H, int W,
                       int Ho, int Wo) {
    if (Wo != W || Ho != H) return false;
    switch (Wo) {
      case 2: backward_dw_padded_s1<K, 2>(dy, dx, N, H, W, Ho); return true;
      case 4: backward_dw_padded_s1<K, 4>(dy, dx, N, H, W, Ho); return true;
      case 8: backward_dw_padded_s1<K, 8>(dy, dx, N, H, W, Ho); return true;
      case 16: backward_dw_padded_s1<K, 16>(dy, dx, N, H, W, Ho); return true;
      default: return false;
    }
  }

  void forward_depthwise(const Tensor& x, Tensor& out, int N, int H, int W,
                         int Ho, int Wo) {
    if (paddable(H, W)) {
      bool done = false;
      if (stride_ == 1) {
        if (k_ == 3) done = forward_dw_try<3, 1>(x, out, N, H, W, Ho, Wo);
        else if (k_ == 5) done = forward_dw_try<5, 1>(x, out, N, H, W, Ho, Wo);
        else done = forward_dw_try<7, 1>(x, out, N, H, W, Ho, Wo);
      } else {
        if (k_ == 3) done = forward_dw_try<3, 2>(x, out, N, H, W, Ho, Wo);
        else if (k_ == 5) done = forward_dw_try<5, 2>(x, out, N, H, W, Ho, Wo);
        else done = forward_dw_try<7, 2>(x, out, N, H, W, Ho, Wo);
      }
      if (done) return;
    }
    forward_dw_generic(x, out, N, H, W, Ho, Wo);
  }

  void backward_depthwise(const Tensor& dy, Tensor& dx, int N, int H, int W,
                          int Ho, int Wo) {
    if (paddable(H, W) && stride_ == 1) {
      bool done = false;
      if (k_ == 3) done = backward_dw_try<3>(dy, dx, N, H, W, Ho, Wo);
      else if (k_ == 5) done = backward_dw_try<5>(dy, dx, N, H, W, Ho, Wo);
      else done = backward_dw_try<7>(dy, dx, N, H, W, Ho, Wo);
      if (done) return;
    }
    backward_dw_generic(dy, dx, N, H, W, Ho, Wo);
  }

  void forward_dw_generic(const Tensor& x, Tensor& out, int N, int H, int W,
                          int Ho, int Wo) {
    const double* wts = weight_.value.data();
    const long long plane = static_cast<long long>(Ho) * Wo;
    const std::vector<Tap> taps = make_taps(H, W, Ho, Wo);
    const long long in_row = static_cast<long long>(stride_) * W;
    for (int n = 0; n < N; ++n) {
      for (int c = 0; c < out_ch_; ++c) {
        const double* wc = wts + static_cast<long long>(c) * k_ * k_;
        const double* xs = x.data() + x.idx4(n, c, 0, 0);
        double* os = out.data() + out.idx4(n, c, 0, 0);
        std::memset(os, 0, static_cast<std::size_t>(plane) * sizeof(double));
        for (const Tap& t : taps) {
          const double wv = wc[t.kh * k_ + t.kw];
          const int span = t.ow_hi - t.ow_lo;
          const double* xr = xs + t.in_off;
          double* orow = os + t.out_off;
          for (int oh = t.oh_lo; oh < t.oh_hi; ++oh) {
            if (stride_ == 1) {
              for (int i = 0; i < span; ++i) orow[i] += wv * xr[i];
            } else {
              for (int i = 0; i < span; ++i) orow[i] += wv * xr[i * stride_];
            }
            xr += in_row;
            orow += Wo;
          }
        }
      }
    }
  }

  void backward_dw_generic(const Tensor& dy, Tensor& dx, int N, int H, int W,
                           int Ho, int Wo) {
    double* dwts = weight_.grad.data();
    const double* wts = weight_.value.data();
    const std::vector<Tap> taps = make_taps(H, W, Ho, Wo);
    const long long in_row = static_cast<long long>(stride_) * W;
    for (int n = 0; n < N; ++n) {
      for (int c = 0; c < out_ch_; ++c) {
        double* dwc = dwts + static_cast<long long>(c) * k_ * k_;
        const double* wc = wts + static_cast<long long>(c) * k_ * k_;
        const double* xs = input_.data() + input_.idx4(n, c, 0, 0);
        const double* ds = dy.data() + dy.idx4(n, c, 0, 0);
        double* dxs = dx.data() + dx.idx4(n, c, 0, 0);
        for (const Tap& t : taps) {
          const double wv = wc[t.kh * k_ + t.kw];
          const int span = t.ow_hi - t.ow_lo;
          const double* xr = xs + t.in_off;
          double* dxr = dxs + t.in_off;
          const double* drow = ds + t.out_off;
          double dw = 0.0;
          for (int oh = t.oh_lo; oh < t.oh_hi; ++oh) {
            if (stride_ == 1) {
              if (needs_input_grad) {
                for (int i = 0; i < span; ++i) {
                  dw += xr[i] * drow[i];
                  dxr[i] += wv * drow[i];
                }
              } else {
                for (int i = 0; i < span; ++i) dw += xr[i] * drow[i];
              }
            } else {
              for (int i = 0; i < span; ++i) {
                dw += xr[i * stride_] * drow[i];
                if (needs_input_grad) dxr[i * stride_] += wv * drow[i];
              }
            }
            xr += in_row;
            dxr += in_row;
            drow += Wo;
          }
          dwc[t.kh * k_ + t.kw] += dw;
        }
      }
    }
  }

  void forward_grouped(const Tensor& x, Tensor& out, int N, int H, int W,
                       int Ho, int Wo) {
    const int cg = in_ch_ / groups_, cog = out_ch_ / groups_;
    const int kg = cg * k_ * k_;
    const long long cols = static_cast<long long>(N) * Ho * Wo;
    col_.resize(static_cast<std::size_t>(kg) * cols);
    outm_.resize(static_cast<std::size_t>(cog) * cols);
    const long long plane = static_cast<long long>(Ho) * Wo;
    for (int g = 0; g < groups_; ++g) {
      im2col_group(x, g, N, H, W, Ho, Wo);
      const double* wg =
          weight_.value.data() + static_cast<long long>(g) * cog * kg;
      gemm(false, false, cog, static_cast<int>(cols), kg, 1.0, wg, kg,
           col_.data(), static_cast<int>(cols), 0.0, outm_.data(),
           static_cast<int>(cols));
      for (int co = 0; co < cog; ++co) {
        const double* src = outm_.data() + static_cast<long long>(co) * cols;
        const int c = g * cog + co;
        for (int n = 0; n < N; ++n) {
          std::memcpy(out.data() + out.idx4(n, c, 0, 0), src + n * plane,
                      static_cast<std::size_t>(plane) * sizeof(double));
        }
      }
    }
  }

  void backward_grouped(const Tensor& dy, Tensor& dx, int N, int H, int W,
                        int Ho, int Wo) {
    const int cg = in_ch_ / groups_, cog = out_ch_ / groups_;
    const int kg = cg * k_ * k_;
    const long long cols = static_cast<long long>(N) * Ho * Wo;
    const long long plane = static_cast<long long>(Ho) * Wo;
    col_.resize(static_cast<std::size_t>(kg) * cols);
    outm_.resize(static_cast<std::size_t>(cog) * cols);
    dcol_.resize(static_cast<std::size_t>(kg) * cols);
    for (int g = 0; g < groups_; ++g) {
      im2col_group(input_, g, N, H, W, Ho, Wo);
      // gather dy for this group as cog x cols
      for (int co = 0; co < cog; ++co) {
        double* dst = outm_.data() + static_cast<long long>(co) * cols;
        const int c = g * cog + co;
        for (int n = 0; n < N; ++n) {
          std::memcpy(dst + n * plane, dy.data() + dy.idx4(n, c, 0, 0),
                      static_cast<std::size_t>(plane) * sizeof(double));
        }
      }
      double* dwg = weight_.grad.data() + static_cast<long long>(g) * cog * kg;
      gemm(false, true, cog, kg, static_cast<int>(cols), 1.0, outm_.data(),
           static_cast<int>(cols), col_.data(), static_cast<int>(cols), 1.0,
           dwg, kg);
      if (needs_input_grad) {
        const double* wg =
            weight_.value.data() + static_cast<long long>(g) * cog * kg;
        gemm(true, false, kg, static_cast<int>(cols), cog, 1.0, wg, kg,
             outm_.data(), static_cast<int>(cols), 0.0, dcol_.data(),
             static_cast<int>(cols));
        col2im_add(dx, g, N, H, W, Ho, Wo);
      }
    }
  }

  void im2col_group(const Tensor& x, int g, int N, int H, int W, int Ho,
                    int Wo) {
    const int cg = in_ch_ / groups_;
    const long long cols = static_cast<long long>(N) * Ho * Wo;
    const long long plane = static_cast<long long>(Ho) * Wo;
    if (pointwise()) {
      // columns are the input planes themselves, channel-major in the group
      for (int ci = 0; ci < cg; ++ci) {
        const int c = g * cg + ci;
        double* dst = col_.data() + static_cast<long long>(ci) * cols;
        for (int n = 0; n < N; ++n) {
          std::memcpy(dst + n * plane, x.data() + x.idx4(n, c, 0, 0),
                      static_cast<std::size_t>(plane) * sizeof(double));
        }
      }
      return;
    }
    for (int ci = 0; ci < cg; ++ci) {
      const int c = g * cg + ci;
      for (int kh = 0; kh < k_; ++kh) {
        for (int kw = 0; kw < k_; ++kw) {
          double* dst =
              col_.data() +
              (static_cast<long long>(ci) * k_ * k_ + kh * k_ + kw) * cols;
          for (int n = 0; n < N; ++n) {
            for (int oh = 0; oh < Ho; ++oh) {
              const int ih = oh * stride_ - pad_ + kh;
              double* drow = dst + (static_cast<long long>(n) * Ho + oh) * Wo;
              if (ih < 0 || ih >= H) {
                std::memset(drow, 0, static_cast<std::size_t>(Wo) * sizeof(double));
                continue;
              }
              const double* xr = x.data() + x.idx4(n, c, ih, 0);
              for (int ow = 0; ow < Wo; ++ow) {
                const int iw = ow * stride_ - pad_ + kw;
                drow[ow] = (iw >= 0 && iw < W) ? xr[iw] : 0.0;
              }
            }
          }
        }
      }
    }
  }

  void col2im_add(Tensor& dx, int g, int N, int H, int W, int Ho, int Wo) {
    const int cg = in_ch_ / groups_;
    const long long cols = static_cast<long long>(N) * Ho * Wo;
    const long long plane = static_cast<long long>(Ho) * Wo;
    if (pointwise()) {
      // one tap per input element: plain copy back (dx was not zeroed)
      for (int ci = 0; ci < cg; ++ci) {
        const int c = g * cg + ci;
        const double* src = dcol_.data() + static_cast<long long>(ci) * cols;
        for (int n = 0; n < N; ++n) {
          std::memcpy(dx.data() + dx.idx4(n, c, 0, 0), src + n * plane,
                      static_cast<std::size_t>(plane) * sizeof(double));
        }
      }
      return;
    }
    for (int ci = 0; ci < cg; ++ci) {
      const int c = g * cg + ci;
      for (int kh = 0; kh < k_; ++kh) {
        for (int kw = 0; kw < k_; ++kw) {
          const double* src =
              dcol_.data() +
              (static_cast<long long>(ci) * k_ * k_ + kh * k_ + kw) * cols;
          for (int n = 0; n < N; ++n) {
            for (int oh = 0; oh < Ho; ++oh) {
              const int ih = oh * stride_ - pad_ + kh;
              if (ih < 0 || ih >= H) continue;
              const double* srow = src + (static_cast<long long>(n) * Ho + oh) * Wo;
              double* dxr = dx.data() + dx.idx4(n, c, ih, 0);
              for (int ow = 0; ow < Wo; ++ow) {
                const int iw = ow * stride_ - pad_ + kw;
                if (iw >= 0 && iw < W) dxr[iw] += srow[ow];
              }
            }
          }
        }
      }
    }
  }

  int in_ch_, out_ch_, k_, stride_, pad_, groups_;
  bool has_bias_;
  Param weight_, bias_;
  Tensor input_;
  std::vector<double> col_, outm_, dcol_;
  std::vector<double> stage_, dstage_;
};

// ----------------------------------------------------------- BatchNorm2d

class BatchNorm2d : public Layer {
 public:
  explicit BatchNorm2d(int channels, double eps = 1e-5, double momentum = 0.1)
      : ch_(channels), eps_(eps), momentum_(momentum) {
    check(channels > 0, "batchnorm: channels must be positive");
    gamma_ = Param({channels});
    beta_ = Param({channels});
    gamma_.value.fill(1.0);
    running_mean_ = Tensor({channels});
    running_var_ = Tensor::full({channels}, 1.0);
  }

  // Normalization uses the population (biased) variance, and the running
  // average tracks the same quantity. Eval before any training step therefore
  // normalizes with mean 0, variance 1 — the initialized running stats.
  Tensor forward(Tensor x, Mode mode) override {
    check(x.rank() == 4 && x.dim(1) == ch_, "batchnorm: bad input shape");
    const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
    const long long plane = static_cast<long long>(H) * W;
    const long long m = static_cast<long long>(N) * plane;
    xhat_ = Tensor(x.shape(), no_init);
    inv_std_.assign(static_cast<std::size_t>(ch_), 0.0);
    last_m_ = m;
    const double* g = gamma_.value.data();
    const double* b = beta_.value.data();
    std::vector<double> mean(static_cast<std::size_t>(ch_));
    std::vector<double> var(static_cast<std::size_t>(ch_));
    if (mode == Mode::train) {
      // both passes walk the tensor in memory order; per-channel
      // accumulators stay cache-resident
      std::vector<double> sum(static_cast<std::size_t>(ch_), 0.0);
      std::vector<double> sumsq(static_cast<std::size_t>(ch_), 0.0);
      for (int n = 0; n < N; ++n) {
        for (int c = 0; c < ch_; ++c) {
          const double* p = x.data() + x.idx4(n, c, 0, 0);
          double s = 0.0, ss = 0.0;
          for (long long i = 0; i < plane; ++i) {
            s += p[i];
            ss += p[i] * p[i];
          }
          sum[static_cast<std::size_t>(c)] += s;
          sumsq[static_cast<std::size_t>(c)] += ss;
        }
      }
      for (int c = 0; c < ch_; ++c) {
        const std::size_t ci = static_cast<std::size_t>(c);
        mean[ci] = sum[ci] / static_cast<double>(m);
        double v = sumsq[ci] / static_cast<double>(m) - mean[ci] * mean[ci];
        var[ci] = v < 0.0 ? 0.0 : v;
        running_mean_[ci] =
            (1.0 - momentum_) * running_mean_[ci] + momentum_ * mean[ci];
        running_var_[ci] =
            (1.0 - momentum_) * running_var_[ci] + momentum_ * var[ci];
      }
    } else {
      for (int c = 0; c < ch_; ++c) {
        const std::size_t ci = static_cast<std::size_t>(c);
        mean[ci] = running_mean_[ci];
        var[ci] = running_var_[ci];
      }
    }
    for (int c = 0; c < ch_; ++c) {
      inv_std_[static_cast<std::size_t>(c)] =
          1.0 / std::sqrt(var[static_cast<std::size_t>(c)] + eps_);
    }
    // second pass rewrites x in place; the caller's tensor becomes the output
    for (int n = 0; n < N; ++n) {
      for (int c = 0; c < ch_; ++c) {
        const std::size_t ci = static_cast<std::size_t>(c);
        const double mu = mean[ci], inv = inv_std_[ci];
        const double gc = g[c], bc = b[c];
        double* p = x.data() + x.idx4(n, c, 0, 0);
        double* xh = xhat_.data() + xhat_.idx4(n, c, 0, 0);
        for (long long i = 0; i < plane; ++i) {
          const double v = (p[i] - mu) * inv;
          xh[i] = v;
          p[i] = gc * v + bc;
        }
      }
    }
    train_mode_ = (mode == Mode::train);
    return x;
  }

  Tensor backward(const Tensor& dy) override {
    check(!xhat_.empty(), "batchnorm: backward before forward");
    check(dy.same_shape(xhat_), "batchnorm: upstream gradient shape mismatch");
    const int N = dy.dim(0), H = dy.dim(2), W = dy.dim(3);
    const long long plane = static_cast<long long>(H) * W;
    const double m = static_cast<double>(last_m_);
    Tensor dx(dy.shape(), no_init);
    double* dg = gamma_.grad.data();
    double* db = beta_.grad.data();
    const double* g = gamma_.value.data();
    std::vector<double> s1(static_cast<std::size_t>(ch_), 0.0);
    std::vector<double> s2(static_cast<std::size_t>(ch_), 0.0);
    for (int n = 0; n < N; ++n) {
      for (int c = 0; c < ch_; ++c) {
        const double* d = dy.data() + dy.idx4(n, c, 0, 0);
        const double* xh = xhat_.data() + xhat_.idx4(n, c, 0, 0);
        double a = 0.0, bsum = 0.0;
        for (long long i = 0; i < plane; ++i) {
          a += d[i];
          bsum += d[i] * xh[i];
        }
        s1[static_cast<std::size_t>(c)] += a;
        s2[static_cast<std::size_t>(c)] += bsum;
      }
    }
    for (int c = 0; c < ch_; ++c) {
      dg[c] += s2[static_cast<std::size_t>(c)];
      db[c] += s1[static_cast<std::size_t>(c)];
    }
    for (int n = 0; n < N; ++n) {
      for (int c = 0; c < ch_; ++c) {
        const std::size_t ci = static_cast<std::size_t>(c);
        const double inv = inv_std_[ci];
        const double gc = g[c];
        const double* d = dy.data() + dy.idx4(n, c, 0, 0);
        double* o = dx.data() + dx.idx4(n, c, 0, 0);
        if (train_mode_) {
          const double k = gc * inv / m;
          const double c1 = s2[ci], c0 = s1[ci];
          const double* xh = xhat_.data() + xhat_.idx4(n, c, 0, 0);
          for (long long i = 0; i < plane; ++i) {
            o[i] = k * (m * d[i] - xh[i] * c1 - c0);
          }
        } else {
          const double k = gc * inv;
          for (long long i = 0; i < plane; ++i) o[i] = k * d[i];
        }
      }
    }
    return dx;
  }

  std::vector<int> out_shape(const std::vector<int>& in) const override {
    check(in.size() == 4 && in[1] == ch_, "batchnorm: bad input shape");
    return in;
  }

  void collect(const std::string& prefix, std::vector<NamedParam>& ps,
               std::vector<NamedBuffer>& bs) override {
    ps.push_back({prefix + "gamma", &gamma_});
    ps.push_back({prefix + "beta", &beta_});
    bs.push_back({prefix + "running_mean", &running_mean_});
    bs.push_back({prefix + "running_var", &running_var_});
  }

  void describe(const std::vector<int>& in,
                std::vector<LayerDesc>& sink) const override {
    LayerDesc d;
    d.kind = "batchnorm";
    d.in_shape = in;
    d.out_shape = in;
    d.in_ch = d.out_ch = ch_;
    sink.push_back(std::move(d));
  }

 private:
  int ch_;
  double eps_, momentum_;
  Param gamma_, beta_;
  Tensor running_mean_, running_var_;
  Tensor xhat_;
  std::vector<double> inv_std_;
  long long last_m_ = 0;
  bool train_mode_ = true;
};

// ------------------------------------------------------------ Activation

enum class Act { relu, swish, sigmoid };

inline const char* act_name(Act a) {
  switch (a) {
    case Act::relu: return "relu";
    case Act::swish: return "swish";
    case Act::sigmoid: return "sigmoid";
  }
  return "?";
}

class Activation : public Layer {
 public:
  explicit Activation(Act kind) : kind_(kind) {}

  Tensor forward(Tensor x, Mode) override {
    // relu and swish adopt x as the saved state and return a fresh tensor;
    // both gradients can be formed from the pre-activation alone
    saved_ = std::move(x);
    const double* p = saved_.data();
    const long long n = saved_.numel();
    Tensor out(saved_.shape(), no_init);
    double* o = out.data();
    switch (kind_) {
      case Act::relu: {
        ReluProbe& probe = relu_probe();
        if (probe.enabled) {
          for (long long i = 0; i < n; ++i) {
            const double a = std::abs(p[i]);
            if (a < probe.min_abs) probe.min_abs = a;
          }
        }
        for (long long i = 0; i < n; ++i) o[i] = p[i] > 0.0 ? p[i] : 0.0;
        break;
      }
      case Act::swish: {
        for (long long i = 0; i < n; ++i) o[i] = p[i] * fast_sigmoid(p[i]);
        break;
      }
      case Act::sigmoid: {
        for (long long i = 0; i < n; ++i) o[i] = fast_sigmoid(p[i]);
        saved_ = out;
        break;
      }
    }
    return out;
  }

  Tensor backward(const Tensor& dy) override {
    check(!saved_.empty(), "activation: backward before forward");
    check(dy.same_shape(saved_), "activation: upstream gradient shape mismatch");
    Tensor dx(dy.shape(), no_init);
    const double* d = dy.data();
    double* o = dx.data();
    const long long n = dy.numel();
    switch (kind_) {
      case Act::relu: {
        // saved_ holds the pre-activation; x > 0 gates identically to y > 0
        const double* y = saved_.data();
        for (long long i = 0; i < n; ++i) o[i] = y[i] > 0.0 ? d[i] : 0.0;
        break;
      }
      case Act::swish: {
        // recomputing the sigmoid here is cheaper than carrying it from the
        // forward pass: one exp against three extra tensor traversals
        const double* x = saved_.data();
        for (long long i = 0; i < n; ++i) {
          const double s = fast_sigmoid(x[i]);
          o[i] = d[i] * (s * (1.0 + x[i] * (1.0 - s)));
        }
        break;
      }
      case Act::sigmoid: {
        const double* s = saved_.data();
        for (long long i = 0; i < n; ++i) o[i] = d[i] * s[i] * (1.0 - s[i]);
        break;
      }
    }
    return dx;
  }

  std::vector<int> out_shape(const std::vector<int>& in) const override {
    return in;
  }

  void describe(const std::vector<int>& in,
                std::vector<LayerDesc>& sink) const override {
    LayerDesc d;
    d.kind = std::string("act_") + act_name(kind_);
    d.in_shape = in;
    d.out_shape = in;
    sink.push_back(std::move(d));
  }

 private:
  Act kind_;
  Tensor saved_;
};

// ------------------------------------------------------- GlobalAvgPool

class GlobalAvgPool : public Layer {
 public:
  Tensor forward(Tensor x, Mode) override { return squeeze(x); }

  // non-virtual entry for callers that keep the input alive themselves
  Tensor squeeze(const Tensor& x) {
    check(x.rank() == 4, "pool: input must be rank 4");
    in_shape_ = x.shape();
    const int N = x.dim(0), C = x.dim(1);
    const long long plane = static_cast<long long>(x.dim(2)) * x.dim(3);
    Tensor out({N, C, 1, 1});
    for (int n = 0; n < N; ++n) {
      for (int c = 0; c < C; ++c) {
        const double* p = x.data() + x.idx4(n, c, 0, 0);
        double s = 0.0;
        for (long long i = 0; i < plane; ++i) s += p[i];
        out.at(n, c, 0, 0) = s / static_cast<double>(plane);
      }
    }
    return out;
  }

  Tensor backward(const Tensor& dy) override {
    check(!in_shape_.empty(), "pool: backward before forward");
    const int N = in_shape_[0], C = in_shape_[1];
    const long long plane =
        static_cast<long long>(in_shape_[2]) * in_shape_[3];
    Tensor dx(in_shape_, no_init);
    for (int n = 0; n < N; ++n) {
      for (int c = 0; c < C; ++c) {
        const double v = dy.at(n, c, 0, 0) / static_cast<double>(plane);
        double* p = dx.data() + dx.idx4(n, c, 0, 0);
        for (long long i = 0; i < plane; ++i) p[i] = v;
      }
    }
    return dx;
  }

  std::vector<int> out_shape(const std::vector<int>& in) const override {
    check(in.size() == 4, "pool: bad input shape");
    return {in[0], in[1], 1, 1};
  }

  void describe(const std::vector<int>& in,
                std::vector<LayerDesc>& sink) const override {
    LayerDesc d;
    d.kind = "global_avg_pool";
    d.in_shape = in;
    d.out_shape = out_shape(in);
    sink.push_back(std::move(d));
  }

 private:
  std::vector<int> in_shape_;
};

// ---------------------------------------------------------------- Dense
//
// Fully connected layer realized as a 1x1 convolution on (N, C, 1, 1).
// Accepts rank-2 (N, features) or rank-4 (N, features, 1, 1) input and
// produces rank-2 output.

class Dense : public Layer {
 public:
  Dense(int in_features, int out_features, bool bias = true)
      : conv_(in_features, out_features, 1, 1, 0, 1, bias),
        in_features_(in_features),
        out_features_(out_features) {}

  Tensor forward(Tensor x, Mode mode) override {
    if (x.rank() == 2) {
      in_rank_ = 2;
      x = x.reshaped({x.dim(0), x.dim(1), 1, 1});
    } else {
      check(x.rank() == 4 && x.dim(2) == 1 && x.dim(3) == 1,
            "dense: rank-4 input must be (N, C, 1, 1)");
      in_rank_ = 4;
    }
    Tensor y = conv_.forward(std::move(x), mode);
    return y.reshaped({y.dim(0), y.dim(1)});
  }

  Tensor backward(const Tensor& dy) override {
    Tensor dy4 = dy.reshaped({dy.dim(0), dy.dim(1), 1, 1});
    Tensor dx = conv_.backward(dy4);
    if (in_rank_ == 2) return dx.reshaped({dx.dim(0), dx.dim(1)});
    return dx;
  }

  std::vector<int> out_shape(const std::vector<int>& in) const override {
    return {in[0], out_features_};
  }

  void collect(const std::string& prefix, std::vector<NamedParam>& ps,
               std::vector<NamedBuffer>& bs) override {
    conv_.collect(prefix, ps, bs);
  }

  void describe(const std::vector<int>& in,
                std::vector<LayerDesc>& sink) const override {
    conv_.describe({in[0], in_features_, 1, 1}, sink);
  }

 private:
  Conv2d conv_;
  int in_features_, out_features_;
  int in_rank_ = 4;
};

// -------------------------------------------------------------- SEBlock
//
// Squeeze-and-excitation: global pool, bottleneck with relu, expand with
// sigmoid gate, channelwise rescale. Hidden width is channels/reduction,
// rounded half-up with a floor of 8.

class SEBlock : public Layer {
 public:
  explicit SEBlock(int channels, int reduction = 4)
      : ch_(channels),
        hidden_(std::max(8, round_half_up(static_cast<double>(channels) /
                                          reduction))),
        fc1_(channels, hidden_, 1, 1, 0, 1, true),
        fc2_(hidden_, channels, 1, 1, 0, 1, true),
        mid_(Act::relu),
        gate_(Act::sigmoid) {}

  Tensor forward(Tensor x, Mode mode) override {
    check(x.rank() == 4 && x.dim(1) == ch_, "se: bad input shape");
    x_saved_ = std::move(x);
    Tensor p = pool_.squeeze(x_saved_);
    Tensor h = mid_.forward(fc1_.forward(std::move(p), mode), mode);
    g_saved_ = gate_.forward(fc2_.forward(std::move(h), mode), mode);
    const int N = x_saved_.dim(0);
    const long long plane =
        static_cast<long long>(x_saved_.dim(2)) * x_saved_.dim(3);
    Tensor out(x_saved_.shape(), no_init);
    for (int n = 0; n < N; ++n) {
      for (int c = 0; c < ch_; ++c) {
        const double gv = g_saved_.at(n, c, 0, 0);
        const double* xp = x_saved_.data() + x_saved_.idx4(n, c, 0, 0);
        double* op = out.data() + out.idx4(n, c, 0, 0);
        for (long long i = 0; i < plane; ++i) op[i] = xp[i] * gv;
      }
    }
    return out;
  }

  Tensor backward(const Tensor& dy) override {
    check(!x_saved_.empty(), "se: backward before forward");
    const int N = x_saved_.dim(0);
    const long long plane =
        static_cast<long long>(x_saved_.dim(2)) * x_saved_.dim(3);
    Tensor dg({N, ch_, 1, 1}, no_init);
    Tensor dx(x_saved_.shape(), no_init);
    for (int n = 0; n < N; ++n) {
      for (int c = 0; c < ch_; ++c) {
        const double gv = g_saved_.at(n, c, 0, 0);
        const double* xp = x_saved_.data() + x_saved_.idx4(n, c, 0, 0);
        const double* dp = dy.data() + dy.idx4(n, c, 0, 0);
        double* dxp = dx.data() + dx.idx4(n, c, 0, 0);
        double s = 0.0;
        for (long long i = 0; i < plane; ++i) {
          s += dp[i] * xp[i];
          dxp[i] = dp[i] * gv;
        }
        dg.at(n, c, 0, 0) = s;
      }
    }
    Tensor d = gate_.backward(dg);
    d = fc2_.backward(d);
    d = mid_.backward(d);
    d = fc1_.backward(d);
    d = pool_.backward(d);
    double* dxp = dx.data();
    const double* dp = d.data();
    for (long long i = 0; i < dx.numel(); ++i) dxp[i] += dp[i];
    return dx;
  }

  std::vector<int> out_shape(const std::vector<int>& in) const override {
    check(in.size() == 4 && in[1] == ch_, "se: bad input shape");
    return in;
  }

  void collect(const std::string& prefix, std::vector<NamedParam>& ps,
               std::vector<NamedBuffer>& bs) override {
    fc1_.collect(prefix + "fc1.", ps, bs);
    fc2_.collect(prefix + "fc2.", ps, bs);
  }

  void describe(const std::vector<int>& in,
                std::vector<LayerDesc>& sink) const override {
    std::vector<int> p = {in[0], ch_, 1, 1};
    pool_.describe(in, sink);
    fc1_.describe(p, sink);
    mid_.describe({in[0], hidden_, 1, 1}, sink);
    fc2_.describe({in[0], hidden_, 1, 1}, sink);
    gate_.describe(p, sink);
  }

  int hidden() const { return hidden_; }

 private:
  int ch_, hidden_;
  GlobalAvgPool pool_;
  Conv2d fc1_, fc2_;
  Activation mid_, gate_;
  Tensor x_saved_, g_saved_;
};

// ------------------------------------------------------------ Sequential

class Sequential : public Layer {
 public:
  Layer* add(const std::string& name, std::unique_ptr<Layer> l) {
    names_.push_back(name);
    children_.push_back(std::move(l));
    return children_.back().get();
  }

  Tensor forward(Tensor x, Mode mode) override {
    Tensor cur = std::move(x);
    for (auto& c : children_) cur = c->forward(std::move(cur), mode);
    return cur;
  }

  Tensor backward(const Tensor& dy) override {
    Tensor cur = dy;
    for (auto it = children_.rbegin(); it != children_.rend(); ++it) {
      cur = (*it)->backward(cur);
    }
    return cur;
  }

  std::vector<int> out_shape(const std::vector<int>& in) const override {
    std::vector<int> cur = in;
    for (const auto& c : children_) cur = c->out_shape(cur);
    return cur;
  }

  void collect(const std::string& prefix, std::vector<NamedParam>& ps,
               std::vector<NamedBuffer>& bs) override {
    for (std::size_t i = 0; i < children_.size(); ++i) {
      children_[i]->collect(prefix + names_[i] + ".", ps, bs);
    }
  }

  void describe(const std::vector<int>& in,
                std::vector<LayerDesc>& sink) const override {
    std::vector<int> cur = in;
    for (const auto& c : children_) {
      c->describe(cur, sink);
      cur = c->out_shape(cur);
    }
  }

  std::size_t size() const { return children_.size(); }
  Layer* child(std::size_t i) { return children_[i].get(); }

 private:
  std::vector<std::string> names_;
  std::vector<std::unique_ptr<Layer>> children_;
};

// ------------------------------------------------------ parameter utils

inline std::vector<NamedParam> collect_params(Layer& root) {
  std::vector<NamedParam> ps;
  std::vector<NamedBuffer> bs;
  root.collect("", ps, bs);
  return ps;
}

inline std::vector<NamedBuffer> collect_buffers(Layer& root) {
  std::vector<NamedParam> ps;
  std::vector<NamedBuffer> bs;
  root.collect("", ps, bs);
  return bs;
}

inline long long count_params(Layer& root) {
  long long n = 0;
  for (auto& p : collect_params(root)) n += p.param->value.numel();
  return n;
}

// Kaiming-uniform fan-in initialization for convolution weights; biases and
// batchnorm affine parameters keep their constructor defaults (0; gamma 1).
// Draw order is parameter collection order, element order is storage order,
// so a given seed always produces the same weights.
inline void init_params(Layer& root, Rng& rng) {
  for (auto& np : collect_params(root)) {
    Tensor& v = np.param->value;
    if (np.name.ends_with("weight") && v.rank() == 4) {
      const long long fan_in =
          static_cast<long long>(v.dim(1)) * v.dim(2) * v.dim(3);
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      double* p = v.data();
      for (long long i = 0; i < v.numel(); ++i) {
        p[i] = rng.uniform(-bound, bound);
      }
    }
  }
}

inline void zero_grads(Layer& root) {
  for (auto& np : collect_params(root)) np.param->grad.fill(0.0);
}

// MACs (multiply counts in convolutions, per sample) from the structure walk
inline long long count_macs(const Layer& root, const std::vector<int>& in) {
  std::vector<LayerDesc> descs;
  root.describe(in, descs);
  long long total = 0;
  for (const auto& d : descs) {
    if (d.kind != "conv") continue;
    total += static_cast<long long>(d.out_ch) * d.out_shape[2] *
             d.out_shape[3] * (d.in_ch / d.groups) * d.kernel * d.kernel;
  }
  return total;
}

}  // namespace donna
