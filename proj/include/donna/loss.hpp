// loss.hpp: classification losses with analytic gradients.
#pragma once

#include <algorithm>
#include <vector>

#include "donna/common.hpp"
#include "donna/tensor.hpp"

namespace donna {

struct LossResult {
  double loss = 0.0;
  Tensor dlogits;
};

// row-wise softmax of (N, K) logits, numerically stable
inline Tensor softmax(const Tensor& logits) {
  check(logits.rank() == 2, "softmax: logits must be rank 2");
  const int N = logits.dim(0), K = logits.dim(1);
  Tensor out(logits.shape());
  for (int n = 0; n < N; ++n) {
    const double* row = logits.data() + static_cast<long long>(n) * K;
    double* orow = out.data() + static_cast<long long>(n) * K;
    double m = row[0];
    for (int k = 1; k < K; ++k) m = std::max(m, row[k]);
    double z = 0.0;
    for (int k = 0; k < K; ++k) {
      orow[k] = fast_exp(row[k] - m);
      z += orow[k];
    }
    for (int k = 0; k < K; ++k) orow[k] /= z;
  }
  return out;
}

// mean cross-entropy against integer labels; gradient w.r.t. logits included
inline LossResult softmax_cross_entropy(const Tensor& logits,
                                        const std::vector<int>& labels) {
  check(logits.rank() == 2, "cross_entropy: logits must be rank 2");
  const int N = logits.dim(0), K = logits.dim(1);
  check(static_cast<int>(labels.size()) == N,
        "cross_entropy: label count mismatch");
  LossResult r;
  r.dlogits = softmax(logits);
  double total = 0.0;
  for (int n = 0; n < N; ++n) {
    const int y = labels[static_cast<std::size_t>(n)];
    check(y >= 0 && y < K, "cross_entropy: label " + std::to_string(y) +
                               " out of range [0, " + std::to_string(K) + ")");
    double* prow = r.dlogits.data() + static_cast<long long>(n) * K;
    double p = prow[y];
    if (p < 1e-300) p = 1e-300;
    total -= std::log(p);
    prow[y] -= 1.0;
  }
  const double inv_n = 1.0 / static_cast<double>(N);
  double* d = r.dlogits.data();
  for (long long i = 0; i < r.dlogits.numel(); ++i) d[i] *= inv_n;
  r.loss = total * inv_n;
  return r;
}

// mean cross-entropy against a probability-distribution target (N, K)
inline LossResult soft_cross_entropy(const Tensor& logits,
                                     const Tensor& target) {
  check(logits.rank() == 2, "soft_cross_entropy: logits must be rank 2");
  check(logits.same_shape(target),
        "soft_cross_entropy: target shape mismatch");
  const int N = logits.dim(0), K = logits.dim(1);
  LossResult r;
  r.dlogits = softmax(logits);
  double total = 0.0;
  for (int n = 0; n < N; ++n) {
    const double* prow = r.dlogits.data() + static_cast<long long>(n) * K;
    const double* trow = target.data() + static_cast<long long>(n) * K;
    for (int k = 0; k < K; ++k) {
      double p = prow[k];
      if (p < 1e-300) p = 1e-300;
      total -= trow[k] * std::log(p);
    }
  }
  const double inv_n = 1.0 / static_cast<double>(N);
  double* d = r.dlogits.data();
  const double* t = target.data();
  for (long long i = 0; i < r.dlogits.numel(); ++i) {
    d[i] = (d[i] - t[i]) * inv_n;
  }
  r.loss = total * inv_n;
  return r;
}

// equal blend of hard-label and teacher-distribution cross-entropy
inline LossResult distillation_loss(const Tensor& logits,
                                    const std::vector<int>& labels,
                                    const Tensor& teacher_probs) {
  LossResult hard = softmax_cross_entropy(logits, labels);
  LossResult soft = soft_cross_entropy(logits, teacher_probs);
  LossResult r;
  r.loss = 0.5 * hard.loss + 0.5 * soft.loss;
  r.dlogits = hard.dlogits;
  double* d = r.dlogits.data();
  const double* s = soft.dlogits.data();
  for (long long i = 0; i < r.dlogits.numel(); ++i) {
    d[i] = 0.5 * d[i] + 0.5 * s[i];
  }
  return r;
}

// top-1 accuracy; argmax ties break toward the lowest class index
inline double accuracy(const Tensor& logits, const std::vector<int>& labels) {
  check(logits.rank() == 2, "accuracy: logits must be rank 2");
  const int N = logits.dim(0), K = logits.dim(1);
  check(static_cast<int>(labels.size()) == N, "accuracy: label count mismatch");
  int hits = 0;
  for (int n = 0; n < N; ++n) {
    const double* row = logits.data() + static_cast<long long>(n) * K;
    int best = 0;
    for (int k = 1; k < K; ++k) {
      if (row[k] > row[best]) best = k;
    }
    if (best == labels[static_cast<std::size_t>(n)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(N);
}

}  // namespace donna
