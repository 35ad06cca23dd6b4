#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "aglab/tensor.hpp"

namespace aglab {

// Per-step guidance option. Cfg pays two model calls, the single branches
// pay one.
struct GuidanceChoice {
  enum class Kind { Uncond, Cond, Cfg };
  Kind kind = Kind::Cond;
  double s = 0.0;  // strength, Cfg only

  static GuidanceChoice uncond() { return {Kind::Uncond, 0.0}; }
  static GuidanceChoice cond() { return {Kind::Cond, 0.0}; }
  static GuidanceChoice cfg(double s) { return {Kind::Cfg, s}; }

  int cost() const { return kind == Kind::Cfg ? 2 : 1; }

  std::string str() const {
    switch (kind) {
      case Kind::Uncond:
        return "uncond";
      case Kind::Cond:
        return "cond";
      default: {
        std::ostringstream os;
        os << "cfg:" << s;
        return os.str();
      }
    }
  }

  static GuidanceChoice parse(const std::string& v) {
    if (v == "uncond") return uncond();
    if (v == "cond") return cond();
    if (v.rfind("cfg:", 0) == 0) {
      std::size_t pos = 0;
      double s = std::stod(v.substr(4), &pos);
      if (pos != v.size() - 4) throw std::invalid_argument("bad guidance choice '" + v + "'");
      return cfg(s);
    }
    throw std::invalid_argument("bad guidance choice '" + v + "' (expected: uncond|cond|cfg:<s>)");
  }

  bool operator==(const GuidanceChoice& o) const {
    return kind == o.kind && (kind != Kind::Cfg || s == o.s);
  }
};

// One entry per executed step, ordered t = T down to t = 1.
using Policy = std::vector<GuidanceChoice>;

inline int nfe_of_policy(const Policy& p) {
  int n = 0;
  for (const auto& c : p) n += c.cost();
  return n;
}

inline Policy make_full_cfg(int T, double s) { return Policy(static_cast<std::size_t>(T), GuidanceChoice::cfg(s)); }
inline Policy make_cond_only(int T) { return Policy(static_cast<std::size_t>(T), GuidanceChoice::cond()); }
inline Policy make_uncond_only(int T) { return Policy(static_cast<std::size_t>(T), GuidanceChoice::uncond()); }

// CFG for the first m steps, conditional afterwards: the shape an adaptive
// run takes once it latches, with the switch point fixed up front so the
// NFE budget is exact (T + m).
inline Policy make_truncated_cfg(int T, int m, double s) {
  if (m < 0 || m > T) throw std::invalid_argument("truncated policy: m must be in [0,T]");
  Policy p = make_cond_only(T);
  for (int i = 0; i < m; ++i) p[static_cast<std::size_t>(i)] = GuidanceChoice::cfg(s);
  return p;
}

// [Cfg, Cond, Cfg, ...] over the first half, conditional afterwards. The
// budget-matched strawman the regression-based plan is compared against.
inline Policy make_naive_interleave(int T, double s) {
  Policy p = make_cond_only(T);
  int half = (T + 1) / 2;
  for (int i = 0; i < half; i += 2) p[static_cast<std::size_t>(i)] = GuidanceChoice::cfg(s);
  return p;
}

// eps_u + s * (eps_c - eps_u)
inline Tensor cfg_score(const Tensor& eps_uncond, const Tensor& eps_cond, double s) {
  detail::check_same_shape(eps_uncond, eps_cond, "cfg_score");
  return add(eps_uncond, mul_scalar(sub(eps_cond, eps_uncond), s));
}

// plain CFG with the unconditional branch swapped for a negative-condition
// branch; steers away from what eps_neg pulls toward
inline Tensor negative_prompt_cfg(const Tensor& eps_neg, const Tensor& eps_cond, double s) {
  return cfg_score(eps_neg, eps_cond, s);
}

// triple-score editing combination:
// eps(null,null) + s_c*(eps(c,I) - eps(null,I)) + s_i*(eps(null,I) - eps(null,null))
inline Tensor pix2pix_score(const Tensor& eps_null_null, const Tensor& eps_c_img, const Tensor& eps_null_img,
                            double s_c, double s_img) {
  detail::check_same_shape(eps_null_null, eps_c_img, "pix2pix_score");
  detail::check_same_shape(eps_null_null, eps_null_img, "pix2pix_score");
  Tensor a = mul_scalar(sub(eps_c_img, eps_null_img), s_c);
  Tensor b = mul_scalar(sub(eps_null_img, eps_null_null), s_img);
  return add(eps_null_null, add(a, b));
}

// cosine between flattened branch outputs; the truncation diagnostic
inline double cosine_gamma(const Tensor& eps_cond, const Tensor& eps_uncond) {
  detail::check_same_shape(eps_cond, eps_uncond, "cosine_gamma");
  double cc = 0, uu = 0, cu = 0;
  for (std::size_t i = 0; i < eps_cond.size(); ++i) {
    cc += eps_cond[i] * eps_cond[i];
    uu += eps_uncond[i] * eps_uncond[i];
    cu += eps_cond[i] * eps_uncond[i];
  }
  if (cc <= 0.0 || uu <= 0.0) throw std::domain_error("cosine_gamma: zero-norm input");
  return cu / (std::sqrt(cc) * std::sqrt(uu));
}

struct AgConfig {
  double gamma_bar = 1.0;  // sentinel +infinity never latches; finite values near 1
                           // can still latch because rounding may push cosine above 1
  bool latch = true;       // permanent switch; the only supported mode

  static constexpr double never_latch() { return std::numeric_limits<double>::infinity(); }

  void validate() const {
    if (!latch)
      throw std::invalid_argument(
          "ag: latch=false is unsupported; after the switch no unconditional branch exists to re-test");
    if (std::isnan(gamma_bar)) throw std::invalid_argument("ag: gamma_bar is NaN");
  }
};

// Chooses the branch set for each step; observe_gamma is fed back after
// both branches of a dual-branch step were computed.
class PolicyController {
 public:
  virtual ~PolicyController() = default;
  virtual GuidanceChoice choose(int t_index) = 0;
  virtual void observe_gamma(int t_index, double gamma) { (void)t_index, (void)gamma; }
};

class FixedPolicyController : public PolicyController {
 public:
  explicit FixedPolicyController(Policy p) : policy_(std::move(p)) {}

  GuidanceChoice choose(int) override {
    if (next_ >= policy_.size())
      throw std::runtime_error("policy exhausted after " + std::to_string(policy_.size()) + " steps");
    return policy_[next_++];
  }

 private:
  Policy policy_;
  std::size_t next_ = 0;
};

// Full-strength CFG until the branches align (gamma > gamma_bar), purely
// conditional afterwards. The step that trips the threshold has already
// paid for both branches.
class AgController : public PolicyController {
 public:
  AgController(AgConfig cfg, double s) : cfg_(cfg), s_(s) { cfg_.validate(); }

  GuidanceChoice choose(int) override {
    return latched_ ? GuidanceChoice::cond() : GuidanceChoice::cfg(s_);
  }

  void observe_gamma(int, double gamma) override {
    if (!latched_ && gamma > cfg_.gamma_bar) latched_ = true;
  }

  bool latched() const { return latched_; }

 private:
  AgConfig cfg_;
  double s_;
  bool latched_ = false;
};

}  // namespace aglab
