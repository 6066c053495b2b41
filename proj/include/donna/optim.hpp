// optim.hpp: Adam optimizer and learning-rate schedules.
#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "donna/common.hpp"
#include "donna/layers.hpp"

namespace donna {

// raised when a training loop observes a non-finite loss
struct TrainingDiverged : std::runtime_error {
  explicit TrainingDiverged(const std::string& what)
      : std::runtime_error(what) {}
};

class Adam {
 public:
  explicit Adam(const std::vector<NamedParam>& params, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8)
      : params_(params), b1_(beta1), b2_(beta2), eps_(eps) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const auto& p : params_) {
      m_.emplace_back(p.param->value.shape());
      v_.emplace_back(p.param->value.shape());
    }
  }

  // one bias-corrected update; gradients are cleared afterwards
  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor& w = params_[i].param->value;
      Tensor& g = params_[i].param->grad;
      double* wp = w.data();
      double* gp = g.data();
      double* mp = m_[i].data();
      double* vp = v_[i].data();
      const long long n = w.numel();
      for (long long j = 0; j < n; ++j) {
        mp[j] = b1_ * mp[j] + (1.0 - b1_) * gp[j];
        vp[j] = b2_ * vp[j] + (1.0 - b2_) * gp[j] * gp[j];
        const double mhat = mp[j] / bc1;
        const double vhat = vp[j] / bc2;
        wp[j] -= lr * mhat / (std::sqrt(vhat) + eps_);
        gp[j] = 0.0;
      }
    }
  }

  long long step_count() const { return t_; }

 private:
  std::vector<NamedParam> params_;
  double b1_, b2_, eps_;
  long long t_ = 0;
  std::vector<Tensor> m_, v_;
};

// --- learning-rate schedules ---

enum class ScheduleKind { cosine, exp_step };

struct Schedule {
  ScheduleKind kind = ScheduleKind::cosine;
  double initial = 0.0;
  long long total_steps = 1;   // cosine: span of the anneal
  double factor = 0.9;         // exp_step: multiplier
  int interval_epochs = 2;     // exp_step: epochs between decays

  static Schedule make_cosine(double initial, long long total_steps) {
    check(initial > 0.0, "schedule: initial lr must be positive");
    check(total_steps >= 1, "schedule: total steps must be >= 1");
    Schedule s;
    s.kind = ScheduleKind::cosine;
    s.initial = initial;
    s.total_steps = total_steps;
    return s;
  }

  static Schedule make_exp_step(double initial, double factor,
                                int interval_epochs) {
    check(initial > 0.0, "schedule: initial lr must be positive");
    check(factor > 0.0 && factor <= 1.0, "schedule: factor must be in (0, 1]");
    check(interval_epochs >= 1, "schedule: decay interval must be >= 1");
    Schedule s;
    s.kind = ScheduleKind::exp_step;
    s.initial = initial;
    s.factor = factor;
    s.interval_epochs = interval_epochs;
    return s;
  }

  // step is the 0-based global step index; epoch the 0-based epoch index
  double lr_at(long long step, int epoch) const {
    if (kind == ScheduleKind::cosine) {
      long long s = step;
      if (s > total_steps) s = total_steps;
      const double frac =
          static_cast<double>(s) / static_cast<double>(total_steps);
      return initial * 0.5 *
             (1.0 + std::cos(3.14159265358979323846 * frac));
    }
    const int k = epoch / interval_epochs;
    return initial * std::pow(factor, static_cast<double>(k));
  }
};

}  // namespace donna
