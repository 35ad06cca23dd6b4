#include <gtest/gtest.h>

#include <cmath>

#include "aglab/sampler.hpp"
#include "aglab/schedule.hpp"
#include "aglab/score.hpp"
#include "test_util.hpp"

namespace {

using aglab::NoiseSchedule;
using aglab::ScheduleKind;
using aglab::SolverKind;
using aglab::Tensor;

TEST(Schedule, CosineEndpoints) {
  auto s = NoiseSchedule::make(ScheduleKind::Cosine, 20);
  EXPECT_GT(s.a_bar(0), 0.99);
  EXPECT_LT(s.a_bar(20), 0.01);
  for (int t = 1; t <= 20; ++t) EXPECT_LT(s.a_bar(t), s.a_bar(t - 1));
  for (int t = 0; t <= 20; ++t) EXPECT_NEAR(s.sigma(t), std::sqrt(1.0 - s.a_bar(t)), 1e-15);
}

TEST(Schedule, LinearBetaMonotone) {
  auto s = NoiseSchedule::make(ScheduleKind::LinearBeta, 20);
  EXPECT_GT(s.a_bar(0), 0.99);
  EXPECT_LT(s.a_bar(20), 0.01);
  for (int t = 1; t <= 20; ++t) EXPECT_LT(s.a_bar(t), s.a_bar(t - 1));
}

TEST(Schedule, MinimalAndInvalidT) {
  auto s = NoiseSchedule::make(ScheduleKind::Cosine, 2);
  EXPECT_EQ(s.T, 2);
  EXPECT_EQ(s.alpha_bar.size(), 3u);
  EXPECT_THROW(NoiseSchedule::make(ScheduleKind::Cosine, 1), std::invalid_argument);
  EXPECT_THROW(NoiseSchedule::make(ScheduleKind::LinearBeta, 0), std::invalid_argument);
}

TEST(Schedule, FromAlphaBarValidates) {
  EXPECT_NO_THROW(NoiseSchedule::from_alpha_bar({1.0, 0.5, 0.1}));
  EXPECT_THROW(NoiseSchedule::from_alpha_bar({1.0, 0.5, 0.5}), std::invalid_argument);  // not strict
  EXPECT_THROW(NoiseSchedule::from_alpha_bar({1.0, 0.5, 0.0}), std::invalid_argument);  // reaches zero
  EXPECT_THROW(NoiseSchedule::from_alpha_bar({1.0, 0.9}), std::invalid_argument);       // T < 2
}

TEST(Solver, DdimZeroEpsIsPureRescale) {
  auto s = NoiseSchedule::make(ScheduleKind::Cosine, 20);
  Tensor x = Tensor::vec({1.5, -2.0});
  for (int t : {20, 13, 5, 1}) {
    Tensor y = aglab::solver_step(SolverKind::DdimEta0, x, t, Tensor::zeros({2}), s);
    double r = std::sqrt(s.a_bar(t - 1) / s.a_bar(t));
    EXPECT_NEAR(y[0], r * x[0], 1e-12 * std::abs(r * x[0]) + 1e-15);
    EXPECT_NEAR(y[1], r * x[1], 1e-12 * std::abs(r * x[1]) + 1e-15);
  }
}

TEST(Solver, NoStepBelowZeroAndBeyondSchedule) {
  auto s = NoiseSchedule::make(ScheduleKind::Cosine, 20);
  Tensor x = Tensor::vec({1.0, 1.0});
  Tensor e = Tensor::zeros({2});
  EXPECT_THROW(aglab::solver_step(SolverKind::DdimEta0, x, 0, e, s), std::invalid_argument);
  EXPECT_THROW(aglab::solver_step(SolverKind::EulerOde, x, 21, e, s), std::invalid_argument);
}

TEST(Solver, DdimPredictsSingleGaussianPosteriorMean) {
  // with an exact single-Gaussian score the x0 prediction inside the DDIM
  // update equals the closed-form posterior mean alpha*x + sigma^2*mu
  auto spec = testutil::single_gaussian_spec({1.2, -0.4}, {1.0, 1.0});
  auto sched = NoiseSchedule::make(ScheduleKind::Cosine, 20);
  aglab::AnalyticBackend backend(spec, sched);
  aglab::Rng rng(5);
  for (int t : {18, 10, 4}) {
    Tensor x = Tensor::vec(rng.normal_vec(2));
    Tensor eps = backend.raw_eval(x, t, aglab::Condition::of(0));
    double a = sched.alpha(t), sg = sched.sigma(t);
    for (std::size_t i = 0; i < 2; ++i) {
      double x0_pred = (x[i] - sg * eps[i]) / a;
      double posterior = a * x[i] + sg * sg * spec.classes[0].comps[0].mean[i];
      EXPECT_NEAR(x0_pred, posterior, 1e-9);
    }
  }
}

TEST(Solver, EulerEndpointErrorHalvesWhenStepsDouble) {
  // first-order convergence against a T=640 reference on a shared continuum
  // schedule; exact unconditional score of a single Gaussian
  auto spec = testutil::single_gaussian_spec({1.5, -0.5}, {0.8, 0.8});
  const int kSeeds = 24;
  auto endpoint = [&](int T, std::uint64_t seed) {
    auto sched = testutil::cosine_segment(T);
    aglab::AnalyticBackend backend(spec, sched);
    aglab::FixedPolicyController ctrl(aglab::make_cond_only(T));
    aglab::GenerateOptions opts;
    opts.solver = SolverKind::EulerOde;
    opts.cond = aglab::Condition::of(0);
    opts.record_steps = false;
    return aglab::generate(backend, ctrl, seed, opts).x0.values();
  };
  auto mean_err = [&](int T) {
    double s = 0;
    for (int k = 0; k < kSeeds; ++k) s += testutil::l2(endpoint(T, 1000 + k), endpoint(640, 1000 + k));
    return s / kSeeds;
  };
  double e20 = mean_err(20), e40 = mean_err(40), e80 = mean_err(80);
  EXPECT_GT(e20 / e40, 1.6);
  EXPECT_LT(e20 / e40, 2.4);
  EXPECT_GT(e40 / e80, 1.6);
  EXPECT_LT(e40 / e80, 2.4);
}

TEST(Solver, DifferentiableThroughStep) {
  // the search backprops through solver updates; check d(step)/dx against
  // finite differences for both solvers
  auto sched = NoiseSchedule::make(ScheduleKind::Cosine, 20);
  std::vector<double> xv = {0.7, -1.1};
  std::vector<double> ev = {0.2, 0.5};
  for (auto kind : {SolverKind::DdimEta0, SolverKind::EulerOde}) {
    auto f = [&](const std::vector<double>& x) {
      Tensor y = aglab::solver_step(kind, Tensor::vec(x), 10, Tensor::vec(ev), sched);
      return y[0] + 2.0 * y[1];
    };
    aglab::Tape tape;
    aglab::TapeScope scope(tape);
    Tensor x = tape.watch(Tensor::vec(xv));
    Tensor y = aglab::solver_step(kind, x, 10, Tensor::vec(ev), sched);
    tape.backward(aglab::dot(y, Tensor::vec({1.0, 2.0})));
    auto fd = testutil::finite_diff(f, xv);
    auto g = tape.grad(x);
    for (std::size_t i = 0; i < 2; ++i) EXPECT_LT(testutil::rel_err(g[i], fd[i]), 1e-6);
  }
}

}  // namespace
