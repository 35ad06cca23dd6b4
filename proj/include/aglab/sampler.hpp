#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "aglab/guidance.hpp"
#include "aglab/rng.hpp"
#include "aglab/schedule.hpp"
#include "aglab/score.hpp"
#include "aglab/tensor.hpp"

namespace aglab {

enum class SolverKind { DdimEta0, EulerOde };

inline SolverKind parse_solver_kind(const std::string& s) {
  if (s == "ddim") return SolverKind::DdimEta0;
  if (s == "euler") return SolverKind::EulerOde;
  throw std::invalid_argument("unknown solver '" + s + "' (expected: ddim|euler)");
}

// One update x_t -> x_{t-1}. Never calls the score model itself; eps_bar is
// whatever the guidance layer assembled. Built from tensor primitives so the
// search can differentiate straight through it.
inline Tensor solver_step(SolverKind kind, const Tensor& x, int t_index, const Tensor& eps_bar,
                          const NoiseSchedule& sched) {
  if (t_index <= 0) throw std::invalid_argument("solver_step: no step below t=0");
  if (t_index > sched.T) throw std::invalid_argument("solver_step: t=" + std::to_string(t_index) + " beyond schedule");
  detail::check_same_shape(x, eps_bar, "solver_step");
  double a_t = sched.alpha(t_index), s_t = sched.sigma(t_index);
  double a_p = sched.alpha(t_index - 1), s_p = sched.sigma(t_index - 1);
  if (kind == SolverKind::DdimEta0) {
    Tensor x0_pred = mul_scalar(add(x, mul_scalar(eps_bar, -s_t)), 1.0 / a_t);
    return add(mul_scalar(x0_pred, a_p), mul_scalar(eps_bar, s_p));
  }
  // explicit Euler on the probability-flow field, using the exact integral
  // of beta over the step: x' = x + 0.5*dln_abar*(x - eps/sigma)
  double dln = std::log(sched.a_bar(t_index - 1)) - std::log(sched.a_bar(t_index));
  if (s_t <= 0.0) throw std::runtime_error("solver_step: euler needs sigma_t > 0");
  return add(x, mul_scalar(sub(x, mul_scalar(eps_bar, 1.0 / s_t)), 0.5 * dln));
}

struct StepRecord {
  int t = 0;
  std::vector<double> x;  // latent entering the step
  std::optional<std::vector<double>> eps_cond;
  std::optional<std::vector<double>> eps_uncond;
  std::vector<double> eps_bar;
  std::optional<double> gamma;
  std::int64_t nfe_after = 0;
  std::string choice;
};

struct TrajectoryRecord {
  std::uint64_t seed = 0;
  int T = 0;
  std::vector<StepRecord> steps;
  std::vector<double> x0;
  std::int64_t total_nfe = 0;
};

struct RunResult {
  Tensor x0;
  TrajectoryRecord record;
  std::int64_t nfe = 0;
};

struct GenerateOptions {
  SolverKind solver = SolverKind::DdimEta0;
  Condition cond = Condition::of(0);
  // when set, every "unconditional" branch evaluates this condition instead
  std::optional<Condition> negative;
  bool record_steps = true;
};

// Reverse pass x_T -> x_0 under a per-step guidance controller. All model
// calls go through eval_score against the supplied counter.
inline RunResult generate(const ScoreBackend& backend, PolicyController& ctrl, std::uint64_t seed,
                          const GenerateOptions& opts, NfeCounter* counter = nullptr) {
  const NoiseSchedule& sched = backend.schedule();
  NfeCounter local;
  NfeCounter& nfe = counter ? *counter : local;
  std::int64_t nfe0 = nfe.total();

  Rng rng(seed);
  Tensor x = Tensor::vec(rng.normal_vec(backend.dim()));
  Condition ucond = opts.negative ? *opts.negative : Condition::null();

  RunResult out;
  out.record.seed = seed;
  out.record.T = sched.T;

  for (int t = sched.T; t >= 1; --t) {
    GuidanceChoice choice = ctrl.choose(t);
    StepRecord rec;
    rec.t = t;
    if (opts.record_steps) rec.x = x.values();
    Tensor eps_bar;
    switch (choice.kind) {
      case GuidanceChoice::Kind::Uncond: {
        Tensor eu = eval_score(backend, x, t, ucond, nfe);
        if (opts.record_steps) rec.eps_uncond = eu.values();
        eps_bar = eu;
        break;
      }
      case GuidanceChoice::Kind::Cond: {
        Tensor ec = eval_score(backend, x, t, opts.cond, nfe);
        if (opts.record_steps) rec.eps_cond = ec.values();
        eps_bar = ec;
        break;
      }
      case GuidanceChoice::Kind::Cfg: {
        Tensor eu = eval_score(backend, x, t, ucond, nfe);
        Tensor ec = eval_score(backend, x, t, opts.cond, nfe);
        double g = cosine_gamma(ec, eu);
        ctrl.observe_gamma(t, g);
        eps_bar = cfg_score(eu, ec, choice.s);
        if (opts.record_steps) {
          rec.eps_uncond = eu.values();
          rec.eps_cond = ec.values();
          rec.gamma = g;
        }
        break;
      }
    }
    if (!eps_bar.all_finite()) throw std::runtime_error("generate: non-finite score at t=" + std::to_string(t));
    x = solver_step(opts.solver, x, t, eps_bar, sched);
    if (!x.all_finite()) throw std::runtime_error("generate: non-finite latent at t=" + std::to_string(t - 1));
    if (opts.record_steps) {
      rec.eps_bar = eps_bar.values();
      rec.nfe_after = nfe.total() - nfe0;
      rec.choice = choice.str();
      out.record.steps.push_back(std::move(rec));
    }
  }

  out.x0 = x;
  out.record.x0 = x.values();
  out.nfe = nfe.total() - nfe0;
  out.record.total_nfe = out.nfe;
  return out;
}

struct EditOptions {
  SolverKind solver = SolverKind::DdimEta0;
  int cls = 0;
  int img = 1;
  double s_c = 7.5;
  double s_img = 1.5;
  double gamma_bar = AgConfig::never_latch();  // >= 1 keeps the triple combination throughout
  bool record_steps = true;
};

// Triple-score editing pass. Pre-latch steps evaluate all three branches
// (3 NFEs); once the minimum pairwise cosine clears gamma_bar the run
// continues on the jointly conditioned branch alone.
inline RunResult generate_edit(const ScoreBackend& backend, std::uint64_t seed, const EditOptions& opts,
                               NfeCounter* counter = nullptr) {
  const NoiseSchedule& sched = backend.schedule();
  NfeCounter local;
  NfeCounter& nfe = counter ? *counter : local;
  std::int64_t nfe0 = nfe.total();

  Rng rng(seed);
  Tensor x = Tensor::vec(rng.normal_vec(backend.dim()));
  Condition c_null = Condition::null();
  Condition c_img = Condition::null().with_image(opts.img);
  Condition c_both = Condition::of(opts.cls).with_image(opts.img);

  RunResult out;
  out.record.seed = seed;
  out.record.T = sched.T;
  bool latched = false;

  for (int t = sched.T; t >= 1; --t) {
    StepRecord rec;
    rec.t = t;
    if (opts.record_steps) rec.x = x.values();
    Tensor eps_bar;
    if (!latched) {
      Tensor e00 = eval_score(backend, x, t, c_null, nfe);
      Tensor e0i = eval_score(backend, x, t, c_img, nfe);
      Tensor eci = eval_score(backend, x, t, c_both, nfe);
      double g = std::min({cosine_gamma(eci, e0i), cosine_gamma(eci, e00), cosine_gamma(e0i, e00)});
      if (g > opts.gamma_bar) latched = true;
      eps_bar = pix2pix_score(e00, eci, e0i, opts.s_c, opts.s_img);
      if (opts.record_steps) {
        rec.eps_uncond = e00.values();
        rec.eps_cond = eci.values();
        rec.gamma = g;
        rec.choice = "pix2pix";
      }
    } else {
      eps_bar = eval_score(backend, x, t, c_both, nfe);
      if (opts.record_steps) {
        rec.eps_cond = eps_bar.values();
        rec.choice = "cond-pair";
      }
    }
    if (!eps_bar.all_finite()) throw std::runtime_error("generate_edit: non-finite score at t=" + std::to_string(t));
    x = solver_step(opts.solver, x, t, eps_bar, sched);
    if (!x.all_finite()) throw std::runtime_error("generate_edit: non-finite latent at t=" + std::to_string(t - 1));
    if (opts.record_steps) {
      rec.eps_bar = eps_bar.values();
      rec.nfe_after = nfe.total() - nfe0;
      out.record.steps.push_back(std::move(rec));
    }
  }

  out.x0 = x;
  out.record.x0 = x.values();
  out.nfe = nfe.total() - nfe0;
  out.record.total_nfe = out.nfe;
  return out;
}

}  // namespace aglab
