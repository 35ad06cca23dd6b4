#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "aglab/tensor.hpp"

namespace aglab {

namespace detail {
inline void check_grad_step(const Tensor& p, const Tensor& g, const char* who) {
  if (!p.same_shape(g))
    throw std::invalid_argument(std::string(who) + ": param " + shape_str(p.shape()) +
                                " vs grad " + shape_str(g.shape()));
  if (!g.all_finite()) throw std::runtime_error(std::string(who) + ": non-finite gradient, step aborted");
}
}  // namespace detail

// Adam with bias correction (Kingma & Ba defaults).
class Adam {
 public:
  explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(std::vector<Tensor*> params, const std::vector<Tensor>& grads) {
    if (params.size() != grads.size()) throw std::invalid_argument("adam: params/grads length mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) detail::check_grad_step(*params[i], grads[i], "adam");
    if (m_.empty()) {
      for (auto* p : params) {
        m_.push_back(std::vector<double>(p->size(), 0.0));
        v_.push_back(std::vector<double>(p->size(), 0.0));
      }
    }
    ++t_;
    double c1 = 1.0 - std::pow(b1_, t_);
    double c2 = 1.0 - std::pow(b2_, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      double* p = params[i]->data();
      const double* g = grads[i].data();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < params[i]->size(); ++j) {
        m[j] = b1_ * m[j] + (1.0 - b1_) * g[j];
        v[j] = b2_ * v[j] + (1.0 - b2_) * g[j] * g[j];
        p[j] -= lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
      }
    }
  }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Lion: sign of the interpolated momentum drives the update, momentum is
// refreshed afterwards. Per-coordinate step magnitude is exactly lr
// wherever the interpolated momentum is nonzero.
class Lion {
 public:
  explicit Lion(double lr = 1e-2, double beta1 = 0.9, double beta2 = 0.99, double weight_decay = 0.0)
      : lr_(lr), b1_(beta1), b2_(beta2), wd_(weight_decay) {}

  void step(std::vector<Tensor*> params, const std::vector<Tensor>& grads) {
    if (params.size() != grads.size()) throw std::invalid_argument("lion: params/grads length mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) detail::check_grad_step(*params[i], grads[i], "lion");
    if (m_.empty())
      for (auto* p : params) m_.push_back(std::vector<double>(p->size(), 0.0));
    for (std::size_t i = 0; i < params.size(); ++i) {
      double* p = params[i]->data();
      const double* g = grads[i].data();
      auto& m = m_[i];
      for (std::size_t j = 0; j < params[i]->size(); ++j) {
        double c = b1_ * m[j] + (1.0 - b1_) * g[j];
        double s = c > 0 ? 1.0 : (c < 0 ? -1.0 : 0.0);
        p[j] -= lr_ * (s + wd_ * p[j]);
        m[j] = b2_ * m[j] + (1.0 - b2_) * g[j];
      }
    }
  }

  double lr() const { return lr_; }

 private:
  double lr_, b1_, b2_, wd_;
  std::vector<std::vector<double>> m_;
};

}  // namespace aglab
