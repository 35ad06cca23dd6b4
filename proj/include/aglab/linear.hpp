#pragma once

// Score extrapolation: per-step least-squares coefficients predict the
// unconditional branch from everything the chain has already computed, so a
// guided step can run on one model call instead of two. Covers fitting on
// recorded paths, the single-call guided step, and the interleaved plan that
// spends 25 calls where plain guidance spends 40.

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "aglab/guidance.hpp"
#include "aglab/sampler.hpp"
#include "aglab/schedule.hpp"
#include "aglab/score.hpp"
#include "aglab/tensor.hpp"

namespace aglab {

struct PathStep {
  int t = 0;
  std::vector<double> eps_cond;
  std::vector<double> eps_uncond;
};

struct PathRecord {
  std::uint64_t seed = 0;
  Condition cond;
  std::vector<PathStep> steps;  // ordered t = T..1
};

struct PathDataset {
  int T = 0;
  std::size_t dim = 0;
  std::vector<PathRecord> trajectories;
};

inline PathDataset collect_paths(const ScoreBackend& backend, double strength, std::size_t n,
                                 std::uint64_t seed0 = 0, SolverKind solver = SolverKind::DdimEta0) {
  PathDataset ds;
  ds.T = backend.schedule().T;
  ds.dim = backend.dim();
  ds.trajectories.reserve(n);
  Rng rng(seed0, /*stream=*/0x9a7b5);
  for (std::size_t i = 0; i < n; ++i) {
    PathRecord rec;
    rec.seed = rng.next_u64();
    rec.cond = Condition::of(rng.uniform_int(0, static_cast<int>(backend.num_classes()) - 1));
    FixedPolicyController ctrl(make_full_cfg(ds.T, strength));
    GenerateOptions opts;
    opts.solver = solver;
    opts.cond = rec.cond;
    auto run = generate(backend, ctrl, rec.seed, opts);
    for (const auto& s : run.record.steps) {
      PathStep ps;
      ps.t = s.t;
      ps.eps_cond = *s.eps_cond;
      ps.eps_uncond = *s.eps_uncond;
      rec.steps.push_back(std::move(ps));
    }
    ds.trajectories.push_back(std::move(rec));
  }
  return ds;
}

// Regressor schedule for predicting the unconditional score at step t: the
// conditional history including the current step, and the unconditional
// history strictly before it. A window cap keeps only the most recent
// entries of each kind; 0 means the full chain back to T.
struct RegressorPlan {
  std::vector<int> cond_steps;    // descending
  std::vector<int> uncond_steps;  // descending

  std::size_t count() const { return cond_steps.size() + uncond_steps.size(); }
};

inline RegressorPlan regressor_plan(int T, int t, int window = 0) {
  if (t < 1 || t >= T) throw std::out_of_range("coefficients exist for steps 1..T-1");
  RegressorPlan p;
  int c_hi = (window > 0) ? std::min(T, t + window - 1) : T;
  int u_hi = (window > 0) ? std::min(T, t + window) : T;
  for (int i = c_hi; i >= t; --i) p.cond_steps.push_back(i);
  for (int i = u_hi; i >= t + 1; --i) p.uncond_steps.push_back(i);
  return p;
}

struct CoeffRow {
  std::vector<double> beta_c;  // aligned with regressor_plan cond_steps
  std::vector<double> beta_u;  // aligned with uncond_steps
};

struct LinearCoeffs {
  int T = 0;
  std::size_t dim = 0;
  int window = 0;
  std::map<int, CoeffRow> rows;
};

namespace detail {

// Solves (A + ridge*I) x = b for symmetric positive definite A in place.
inline std::vector<double> solve_spd(std::vector<double> a, std::vector<double> b, std::size_t k,
                                     double ridge) {
  for (std::size_t i = 0; i < k; ++i) a[i * k + i] += ridge;
  // Cholesky a = L L^T
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = a[i * k + j];
      for (std::size_t m = 0; m < j; ++m) s -= a[i * k + m] * a[j * k + m];
      if (i == j) {
        if (s <= 0.0) throw std::runtime_error("normal equations lost positive definiteness");
        a[i * k + i] = std::sqrt(s);
      } else {
        a[i * k + j] = s / a[j * k + j];
      }
    }
  }
  for (std::size_t i = 0; i < k; ++i) {  // L y = b
    double s = b[i];
    for (std::size_t m = 0; m < i; ++m) s -= a[i * k + m] * b[m];
    b[i] = s / a[i * k + i];
  }
  for (std::size_t ii = k; ii > 0; --ii) {  // L^T x = y
    std::size_t i = ii - 1;
    double s = b[i];
    for (std::size_t m = i + 1; m < k; ++m) s -= a[m * k + i] * b[m];
    b[i] = s / a[i * k + i];
  }
  return b;
}

inline const PathStep& step_at(const PathRecord& rec, int T, int t) {
  std::size_t idx = static_cast<std::size_t>(T - t);
  if (idx >= rec.steps.size() || rec.steps[idx].t != t) {
    throw std::invalid_argument("trajectory does not hold step " + std::to_string(t));
  }
  return rec.steps[idx];
}

}  // namespace detail

// One scalar coefficient per past tensor; every latent coordinate of every
// trajectory contributes one observation row. Normal equations with a tiny
// ridge keep the solve stable when regressors nearly coincide.
inline CoeffRow fit_ols(const PathDataset& ds, int t, int window = 0, double ridge = 1e-8) {
  RegressorPlan plan = regressor_plan(ds.T, t, window);
  std::size_t k = plan.count();
  std::size_t rows = ds.trajectories.size() * ds.dim;
  if (rows < k) {
    std::size_t need = (k + ds.dim - 1) / ds.dim;
    throw std::invalid_argument("step " + std::to_string(t) + " has " + std::to_string(k) +
                                " regressors but only " + std::to_string(rows) +
                                " observation rows; need at least " + std::to_string(need) +
                                " trajectories");
  }

  std::vector<double> xtx(k * k, 0.0), xty(k, 0.0), row(k);
  for (const auto& rec : ds.trajectories) {
    for (std::size_t d = 0; d < ds.dim; ++d) {
      std::size_t j = 0;
      for (int i : plan.cond_steps) row[j++] = detail::step_at(rec, ds.T, i).eps_cond[d];
      for (int i : plan.uncond_steps) row[j++] = detail::step_at(rec, ds.T, i).eps_uncond[d];
      double y = detail::step_at(rec, ds.T, t).eps_uncond[d];
      for (std::size_t p = 0; p < k; ++p) {
        xty[p] += row[p] * y;
        for (std::size_t q = p; q < k; ++q) xtx[p * k + q] += row[p] * row[q];
      }
    }
  }
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t q = 0; q < p; ++q) xtx[p * k + q] = xtx[q * k + p];
  }

  std::vector<double> beta = detail::solve_spd(std::move(xtx), std::move(xty), k, ridge);
  CoeffRow out;
  out.beta_c.assign(beta.begin(), beta.begin() + static_cast<long>(plan.cond_steps.size()));
  out.beta_u.assign(beta.begin() + static_cast<long>(plan.cond_steps.size()), beta.end());
  return out;
}

inline LinearCoeffs fit_linear(const PathDataset& ds, int window = 0, double ridge = 1e-8) {
  LinearCoeffs out;
  out.T = ds.T;
  out.dim = ds.dim;
  out.window = window;
  for (int t = 1; t < ds.T; ++t) out.rows[t] = fit_ols(ds, t, window, ridge);
  return out;
}

// Chain memory during deployment: whichever branch values exist at each step,
// estimated ones included once they are made.
struct ScoreHistory {
  std::map<int, std::vector<double>> cond;
  std::map<int, std::vector<double>> uncond;

  const std::vector<double>& get(const std::map<int, std::vector<double>>& m, int t,
                                 const char* kind) const {
    auto it = m.find(t);
    if (it == m.end()) {
      throw std::invalid_argument(std::string("history is missing the ") + kind + " score at step " +
                                  std::to_string(t));
    }
    return it->second;
  }
};

inline std::vector<double> lr_estimate_uncond(const LinearCoeffs& coeffs, int t,
                                              const ScoreHistory& hist) {
  auto it = coeffs.rows.find(t);
  if (it == coeffs.rows.end()) throw std::invalid_argument("no coefficients for step " + std::to_string(t));
  RegressorPlan plan = regressor_plan(coeffs.T, t, coeffs.window);
  std::vector<double> est(coeffs.dim, 0.0);
  std::size_t j = 0;
  for (int i : plan.cond_steps) {
    const auto& e = hist.get(hist.cond, i, "conditional");
    double b = it->second.beta_c[j++];
    for (std::size_t d = 0; d < coeffs.dim; ++d) est[d] += b * e[d];
  }
  j = 0;
  for (int i : plan.uncond_steps) {
    const auto& e = hist.get(hist.uncond, i, "unconditional");
    double b = it->second.beta_u[j++];
    for (std::size_t d = 0; d < coeffs.dim; ++d) est[d] += b * e[d];
  }
  return est;
}

// Guided combination with the estimated unconditional branch: one model call
// (the conditional) instead of two.
inline Tensor lr_cfg_step(const LinearCoeffs& coeffs, int t, const ScoreHistory& hist,
                          const Tensor& eps_cond_t, double strength) {
  std::vector<double> est = lr_estimate_uncond(coeffs, t, hist);
  return cfg_score(Tensor::vec(est), eps_cond_t, strength);
}

enum class LinearStepKind { Cfg, LrCfg };

// Interleaved budget plan: the front half alternates full guidance with
// extrapolated guidance, the back half is extrapolated throughout.
inline std::vector<LinearStepKind> linear_ag_plan(int T) {
  if (T < 2) throw std::invalid_argument("plan needs T >= 2");
  std::vector<LinearStepKind> plan(static_cast<std::size_t>(T), LinearStepKind::LrCfg);
  int half = (T + 1) / 2;
  for (int i = 0; i < half; i += 2) plan[static_cast<std::size_t>(i)] = LinearStepKind::Cfg;
  return plan;
}

inline int nfe_of_linear_plan(const std::vector<LinearStepKind>& plan) {
  int n = 0;
  for (auto k : plan) n += (k == LinearStepKind::Cfg) ? 2 : 1;
  return n;
}

inline RunResult run_linear_ag(const ScoreBackend& backend, const LinearCoeffs& coeffs,
                               std::uint64_t seed, const Condition& cond, double strength,
                               SolverKind solver = SolverKind::DdimEta0,
                               NfeCounter* counter = nullptr) {
  const NoiseSchedule& sched = backend.schedule();
  if (coeffs.T != sched.T) throw std::invalid_argument("coefficients were fitted for a different T");
  if (coeffs.dim != backend.dim()) throw std::invalid_argument("coefficient dimension mismatch");
  auto plan = linear_ag_plan(sched.T);

  NfeCounter local;
  NfeCounter& nfe = counter ? *counter : local;
  std::int64_t start = nfe.total();

  Rng rng(seed);
  Tensor x = Tensor::vec(rng.normal_vec(backend.dim()));
  ScoreHistory hist;
  RunResult out;
  out.record.seed = seed;
  out.record.T = sched.T;

  for (int t = sched.T; t >= 1; --t) {
    StepRecord srec;
    srec.t = t;
    srec.x = x.values();
    Tensor eps_bar;
    if (plan[static_cast<std::size_t>(sched.T - t)] == LinearStepKind::Cfg) {
      Tensor eu = eval_score(backend, x, t, Condition::null(), nfe);
      Tensor ec = eval_score(backend, x, t, cond, nfe);
      hist.cond[t] = ec.values();
      hist.uncond[t] = eu.values();
      eps_bar = cfg_score(eu, ec, strength);
      srec.eps_cond = ec.values();
      srec.eps_uncond = eu.values();
      srec.gamma = cosine_gamma(eu, ec);
      srec.choice = GuidanceChoice::cfg(strength).str();
    } else {
      Tensor ec = eval_score(backend, x, t, cond, nfe);
      hist.cond[t] = ec.values();
      std::vector<double> est = lr_estimate_uncond(coeffs, t, hist);
      hist.uncond[t] = est;  // estimates feed later rows
      eps_bar = cfg_score(Tensor::vec(est), ec, strength);
      srec.eps_cond = ec.values();
      srec.choice = "lr-cfg:" + GuidanceChoice::cfg(strength).str().substr(4);
    }
    if (!eps_bar.all_finite()) throw std::runtime_error("non-finite guidance at step " + std::to_string(t));
    x = solver_step(solver, x, t, eps_bar, sched);
    srec.eps_bar = eps_bar.values();
    srec.nfe_after = nfe.total() - start;
    out.record.steps.push_back(std::move(srec));
  }
  out.x0 = x;
  out.record.x0 = x.values();
  out.nfe = nfe.total() - start;
  out.record.total_nfe = out.nfe;
  return out;
}

}  // namespace aglab
