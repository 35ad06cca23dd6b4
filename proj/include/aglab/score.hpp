#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "aglab/rng.hpp"
#include "aglab/schedule.hpp"
#include "aglab/tensor.hpp"

namespace aglab {

// What a score query is conditioned on. Empty = unconditional. The optional
// second channel carries an edit reference, realized as another class index.
struct Condition {
  std::optional<int> cls;
  std::optional<int> img;

  static Condition null() { return {}; }
  static Condition of(int c) {
    Condition k;
    k.cls = c;
    return k;
  }
  Condition with_image(int i) const {
    Condition k = *this;
    k.img = i;
    return k;
  }
  bool is_null() const { return !cls && !img; }
  bool operator==(const Condition& o) const { return cls == o.cls && img == o.img; }
};

struct GmmComponent {
  double weight = 1.0;
  std::vector<double> mean;
  std::vector<double> var;  // diagonal covariance
};

struct GmmClass {
  std::vector<GmmComponent> comps;
};

struct GmmSpec {
  std::size_t dim = 2;
  std::vector<GmmClass> classes;
  std::vector<double> priors;

  std::size_t num_classes() const { return classes.size(); }

  void validate() const {
    if (dim < 1 || dim > 16) throw std::invalid_argument("gmm: dim must be in [1,16], got " + std::to_string(dim));
    if (classes.empty()) throw std::invalid_argument("gmm: needs at least one class");
    if (priors.size() != classes.size()) throw std::invalid_argument("gmm: priors/classes length mismatch");
    double ps = 0;
    for (double p : priors) {
      if (!(p > 0)) throw std::invalid_argument("gmm: class priors must be positive");
      ps += p;
    }
    if (std::abs(ps - 1.0) > 1e-9) throw std::invalid_argument("gmm: class priors must sum to 1");
    for (std::size_t c = 0; c < classes.size(); ++c) {
      if (classes[c].comps.empty()) throw std::invalid_argument("gmm: class " + std::to_string(c) + " has no components");
      double ws = 0;
      for (const auto& k : classes[c].comps) {
        if (k.mean.size() != dim || k.var.size() != dim)
          throw std::invalid_argument("gmm: component mean/var must have dim entries");
        for (double v : k.var)
          if (!(v > 0)) throw std::invalid_argument("gmm: degenerate covariance (entries must be > 0)");
        if (!(k.weight > 0)) throw std::invalid_argument("gmm: component weights must be positive");
        ws += k.weight;
      }
      if (std::abs(ws - 1.0) > 1e-9)
        throw std::invalid_argument("gmm: component weights of class " + std::to_string(c) + " must sum to 1");
    }
  }

  // Built-in two-class mixture used by the CLI and the experiment suite.
  // Classes sit on opposite sides of the origin with mild overlap, which is
  // the regime where guidance matters early and the branches agree late.
  static GmmSpec default_two_class() {
    GmmSpec s;
    s.dim = 2;
    s.priors = {0.5, 0.5};
    GmmClass c0, c1;
    c0.comps = {{0.5, {-3.0, -0.8}, {0.7, 0.7}}, {0.5, {-2.2, 1.0}, {0.7, 0.7}}};
    c1.comps = {{0.5, {3.0, 0.8}, {0.7, 0.7}}, {0.5, {2.2, -1.0}, {0.7, 0.7}}};
    s.classes = {c0, c1};
    s.validate();
    return s;
  }
};

// One diffused mixture component at step t: N(alpha*mu, abar*var + sigma^2).
struct DiffusedComponent {
  double log_weight;
  std::vector<double> mean;
  std::vector<double> var;
};

namespace detail {

inline void append_diffused(std::vector<DiffusedComponent>& out, const GmmClass& cls, double extra_logw,
                            double a, double abar, double s2) {
  for (const auto& k : cls.comps) {
    DiffusedComponent d;
    d.log_weight = extra_logw + std::log(k.weight);
    d.mean.resize(k.mean.size());
    d.var.resize(k.var.size());
    for (std::size_t i = 0; i < k.mean.size(); ++i) {
      d.mean[i] = a * k.mean[i];
      d.var[i] = abar * k.var[i] + s2;
    }
    out.push_back(std::move(d));
  }
}

}  // namespace detail

// Diffused components for a single-channel condition (class c or marginal).
inline std::vector<DiffusedComponent> diffused_components(const GmmSpec& spec, const NoiseSchedule& sched,
                                                          int t, std::optional<int> cls) {
  if (t < 0 || t > sched.T) throw std::out_of_range("diffused_components: t out of range");
  double a = sched.alpha(t), abar = sched.a_bar(t), s2 = 1.0 - abar;
  std::vector<DiffusedComponent> out;
  if (cls) {
    if (*cls < 0 || static_cast<std::size_t>(*cls) >= spec.num_classes())
      throw std::out_of_range("unknown class index " + std::to_string(*cls));
    detail::append_diffused(out, spec.classes[static_cast<std::size_t>(*cls)], 0.0, a, abar, s2);
  } else {
    for (std::size_t c = 0; c < spec.num_classes(); ++c)
      detail::append_diffused(out, spec.classes[c], std::log(spec.priors[c]), a, abar, s2);
  }
  return out;
}

// log p_t(x | cls) of the diffused mixture, eager. Used directly and as the
// oracle target for score checks.
inline double gmm_log_density(const GmmSpec& spec, const NoiseSchedule& sched, int t,
                              const std::vector<double>& x, std::optional<int> cls) {
  if (x.size() != spec.dim) throw std::invalid_argument("gmm_log_density: x has wrong dim");
  auto comps = diffused_components(spec, sched, t, cls);
  double best = -1e300;
  std::vector<double> lg(comps.size());
  const double log2pi = 1.8378770664093454835606594728112;
  for (std::size_t k = 0; k < comps.size(); ++k) {
    double q = comps[k].log_weight;
    for (std::size_t i = 0; i < x.size(); ++i) {
      double d = x[i] - comps[k].mean[i];
      q -= 0.5 * (log2pi + std::log(comps[k].var[i]) + d * d / comps[k].var[i]);
    }
    lg[k] = q;
    best = std::max(best, q);
  }
  double z = 0;
  for (double q : lg) z += std::exp(q - best);
  return best + std::log(z);
}

inline int sample_class(const GmmSpec& spec, Rng& rng) {
  double u = rng.uniform(), acc = 0;
  for (std::size_t c = 0; c < spec.num_classes(); ++c) {
    acc += spec.priors[c];
    if (u < acc) return static_cast<int>(c);
  }
  return static_cast<int>(spec.num_classes()) - 1;
}

inline std::vector<double> sample_gmm(const GmmSpec& spec, Rng& rng, std::optional<int> cls) {
  int c = cls ? *cls : sample_class(spec, rng);
  if (c < 0 || static_cast<std::size_t>(c) >= spec.num_classes())
    throw std::out_of_range("sample_gmm: unknown class index " + std::to_string(c));
  const auto& comps = spec.classes[static_cast<std::size_t>(c)].comps;
  double u = rng.uniform(), acc = 0;
  std::size_t pick = comps.size() - 1;
  for (std::size_t k = 0; k < comps.size(); ++k) {
    acc += comps[k].weight;
    if (u < acc) {
      pick = k;
      break;
    }
  }
  std::vector<double> x(spec.dim);
  for (std::size_t i = 0; i < spec.dim; ++i)
    x[i] = comps[pick].mean[i] + std::sqrt(comps[pick].var[i]) * rng.normal();
  return x;
}

// Per-run NFE tally. Owned by the experiment context, shared by worker
// threads of one run, never global.
class NfeCounter {
 public:
  void add(std::int64_t k = 1) { n_.fetch_add(k, std::memory_order_relaxed); }
  std::int64_t total() const { return n_.load(std::memory_order_relaxed); }

 private:
  std::atomic<std::int64_t> n_{0};
};

class ScoreBackend {
 public:
  virtual ~ScoreBackend() = default;
  virtual std::size_t dim() const = 0;
  virtual std::size_t num_classes() const = 0;
  virtual const NoiseSchedule& schedule() const = 0;
  // eps(x_t, t, cond) ~ -sigma_t * grad_x log p_t(x | cond). Differentiable
  // through x when a tape is active. Does not touch the NFE counter; call
  // through eval_score so every model evaluation is paid for exactly once.
  virtual Tensor raw_eval(const Tensor& x, int t_index, const Condition& cond) const = 0;
};

inline Tensor eval_score(const ScoreBackend& backend, const Tensor& x, int t_index, const Condition& cond,
                         NfeCounter& nfe) {
  nfe.add(1);
  return backend.raw_eval(x, t_index, cond);
}

// Exact scores of the diffused mixture, assembled from tensor primitives so
// gradients flow through x when a tape is active.
class AnalyticBackend : public ScoreBackend {
 public:
  AnalyticBackend(GmmSpec spec, NoiseSchedule sched) : spec_(std::move(spec)), sched_(std::move(sched)) {
    spec_.validate();
  }

  std::size_t dim() const override { return spec_.dim; }
  std::size_t num_classes() const override { return spec_.num_classes(); }
  const NoiseSchedule& schedule() const override { return sched_; }
  const GmmSpec& spec() const { return spec_; }

  Tensor raw_eval(const Tensor& x, int t_index, const Condition& cond) const override {
    if (x.size() != spec_.dim)
      throw std::invalid_argument("analytic eval: x has " + std::to_string(x.size()) + " entries, want " +
                                  std::to_string(spec_.dim));
    if (cond.cls && cond.img) {
      // joint condition composed as a product of experts:
      // log p(x|c,I) = log p(x|c) + log p(x|I) - log p(x), so the eps terms add
      Tensor ec = single_eval(x, t_index, cond.cls);
      Tensor ei = single_eval(x, t_index, cond.img);
      Tensor eu = single_eval(x, t_index, std::nullopt);
      return sub(add(ec, ei), eu);
    }
    if (cond.img) return single_eval(x, t_index, cond.img);
    return single_eval(x, t_index, cond.cls);
  }

 private:
  Tensor single_eval(const Tensor& x, int t, std::optional<int> cls) const {
    auto comps = diffused_components(spec_, sched_, t, cls);
    double sigma = sched_.sigma(t);
    const double log2pi = 1.8378770664093454835606594728112;
    std::size_t K = comps.size();
    std::vector<Tensor> logits;
    std::vector<Tensor> scaled;  // (x - m) / v per component
    logits.reserve(K);
    scaled.reserve(K);
    for (const auto& k : comps) {
      std::vector<double> neg_mean(spec_.dim), inv_var(spec_.dim);
      double c0 = k.log_weight;
      for (std::size_t i = 0; i < spec_.dim; ++i) {
        neg_mean[i] = -k.mean[i];
        inv_var[i] = 1.0 / k.var[i];
        c0 -= 0.5 * (log2pi + std::log(k.var[i]));
      }
      Tensor d = add_const_vec(x, neg_mean);
      Tensor e = mul_const_vec(d, inv_var);
      scaled.push_back(e);
      logits.push_back(add_scalar(mul_scalar(dot(d, e), -0.5), c0));
    }
    if (K == 1) return mul_scalar(scaled[0], sigma);
    Tensor r = softmax(concat(logits));
    Tensor acc = mul(scaled[0], index(r, 0));
    for (std::size_t k = 1; k < K; ++k) acc = add(acc, mul(scaled[k], index(r, k)));
    return mul_scalar(acc, sigma);
  }

  GmmSpec spec_;
  NoiseSchedule sched_;
};

}  // namespace aglab
