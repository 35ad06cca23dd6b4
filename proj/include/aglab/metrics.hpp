#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "aglab/sampler.hpp"

namespace aglab {

struct MeanCi {
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  double sd = 0.0;
  std::size_t n = 0;
};

// normal-approximation 99% interval over independent draws
inline MeanCi mean_ci_99(const std::vector<double>& xs) {
  if (xs.empty()) throw std::invalid_argument("mean_ci_99: empty sample");
  MeanCi out;
  out.n = xs.size();
  double s = 0.0;
  for (double v : xs) s += v;
  out.mean = s / static_cast<double>(out.n);
  double ss = 0.0;
  for (double v : xs) ss += (v - out.mean) * (v - out.mean);
  out.sd = out.n > 1 ? std::sqrt(ss / static_cast<double>(out.n - 1)) : 0.0;
  double half = 2.576 * out.sd / std::sqrt(static_cast<double>(out.n));
  out.lo = out.mean - half;
  out.hi = out.mean + half;
  return out;
}

struct EndpointSet {
  std::vector<std::uint64_t> seeds;
  std::vector<std::vector<double>> endpoints;  // aligned with seeds
  std::vector<std::int64_t> nfes;
};

using ControllerFactory = std::function<std::unique_ptr<PolicyController>()>;

// One run per seed with a fresh controller each time. The returned set is
// fully determined by (backend, factory output, seeds, opts).
inline EndpointSet collect_endpoints(const ScoreBackend& backend, const ControllerFactory& make_ctrl,
                                     const std::vector<std::uint64_t>& seeds,
                                     const GenerateOptions& opts = {}) {
  EndpointSet out;
  out.seeds = seeds;
  out.endpoints.reserve(seeds.size());
  out.nfes.reserve(seeds.size());
  for (std::uint64_t seed : seeds) {
    auto ctrl = make_ctrl();
    NfeCounter counter;
    auto run = generate(backend, *ctrl, seed, opts, &counter);
    if (run.nfe != counter.total()) {
      throw std::logic_error("evaluation count does not match the counter delta");
    }
    out.endpoints.push_back(run.x0.values());
    out.nfes.push_back(run.nfe);
  }
  return out;
}

struct ReplicationStats {
  std::vector<std::uint64_t> seeds;
  std::vector<double> per_seed_mse;
  MeanCi mse;
};

// Per-seed endpoint MSE of a run set against a baseline set on the same seeds.
inline ReplicationStats endpoint_replication(const EndpointSet& run, const EndpointSet& baseline) {
  if (run.seeds != baseline.seeds) throw std::invalid_argument("seed sets differ");
  if (run.seeds.empty()) throw std::invalid_argument("endpoint_replication: empty seed set");
  ReplicationStats out;
  out.seeds = run.seeds;
  out.per_seed_mse.reserve(run.seeds.size());
  for (std::size_t i = 0; i < run.seeds.size(); ++i) {
    const auto& a = run.endpoints[i];
    const auto& b = baseline.endpoints[i];
    if (a.size() != b.size()) throw std::invalid_argument("endpoint dimension mismatch");
    double se = 0.0;
    for (std::size_t d = 0; d < a.size(); ++d) se += (a[d] - b[d]) * (a[d] - b[d]);
    out.per_seed_mse.push_back(se / static_cast<double>(a.size()));
  }
  out.mse = mean_ci_99(out.per_seed_mse);
  return out;
}

namespace detail {

// Exact 1-D Wasserstein-1 between two empirical measures, any sample counts:
// integrate |Qa - Qb| over quantile space, where the quantile functions are
// step functions with breaks at i/n and j/m.
inline double wasserstein_1d(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const std::size_t n = a.size(), m = b.size();
  std::size_t ia = 0, ib = 0;
  double q = 0.0, total = 0.0;
  while (ia < n && ib < m) {
    double qa = static_cast<double>(ia + 1) / static_cast<double>(n);
    double qb = static_cast<double>(ib + 1) / static_cast<double>(m);
    double next = std::min(qa, qb);
    total += std::abs(a[ia] - b[ib]) * (next - q);
    q = next;
    if (qa <= next) ++ia;
    if (qb <= next) ++ib;
  }
  return total;
}

}  // namespace detail

// Average 1-D transport distance over seeded random unit projections.
inline double sliced_wasserstein(const std::vector<std::vector<double>>& a,
                                 const std::vector<std::vector<double>>& b, int n_projections,
                                 std::uint64_t seed = 0) {
  if (a.empty() || b.empty()) throw std::invalid_argument("sliced_wasserstein: empty sample set");
  const std::size_t dim = a.front().size();
  for (const auto& v : a) {
    if (v.size() != dim) throw std::invalid_argument("sliced_wasserstein: ragged samples");
  }
  for (const auto& v : b) {
    if (v.size() != dim) throw std::invalid_argument("sliced_wasserstein: dimension mismatch");
  }
  if (n_projections < 1) throw std::invalid_argument("sliced_wasserstein: need at least one projection");

  Rng rng(seed, /*stream=*/0x51ce);
  double acc = 0.0;
  std::vector<double> pa(a.size()), pb(b.size());
  for (int p = 0; p < n_projections; ++p) {
    std::vector<double> u = rng.unit_vector(dim);
    for (std::size_t i = 0; i < a.size(); ++i) {
      double s = 0.0;
      for (std::size_t d = 0; d < dim; ++d) s += u[d] * a[i][d];
      pa[i] = s;
    }
    for (std::size_t i = 0; i < b.size(); ++i) {
      double s = 0.0;
      for (std::size_t d = 0; d < dim; ++d) s += u[d] * b[i][d];
      pb[i] = s;
    }
    acc += detail::wasserstein_1d(pa, pb);
  }
  return acc / static_cast<double>(n_projections);
}

struct GammaRow {
  int t = 0;
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  std::size_t n = 0;
};

// Per-step branch-alignment summary across recorded runs. Steps where no run
// evaluated both branches are omitted rather than zero-filled.
inline std::vector<GammaRow> gamma_curves(const std::vector<TrajectoryRecord>& records) {
  std::map<int, std::vector<double>> by_step;
  for (const auto& rec : records) {
    for (const auto& s : rec.steps) {
      if (s.gamma.has_value()) by_step[s.t].push_back(*s.gamma);
    }
  }
  std::vector<GammaRow> out;
  out.reserve(by_step.size());
  for (auto it = by_step.rbegin(); it != by_step.rend(); ++it) {
    MeanCi ci = mean_ci_99(it->second);
    out.push_back({it->first, ci.mean, ci.lo, ci.hi, ci.n});
  }
  return out;
}

struct EvalReport {
  std::string experiment;
  std::string policy;
  std::vector<std::uint64_t> seeds;
  MeanCi nfe;
  MeanCi endpoint_mse;
  double sliced_w = std::numeric_limits<double>::quiet_NaN();
  std::vector<GammaRow> gamma;
};

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

inline std::string frontier_csv_header() {
  return "experiment,policy,seeds,nfe_mean,nfe_sd,mse_mean,mse_ci_lo,mse_ci_hi,sliced_w";
}

inline std::string frontier_csv_row(const EvalReport& r) {
  std::ostringstream os;
  os << r.experiment << ',' << r.policy << ',' << r.seeds.size() << ',' << detail::fmt(r.nfe.mean)
     << ',' << detail::fmt(r.nfe.sd) << ',' << detail::fmt(r.endpoint_mse.mean) << ','
     << detail::fmt(r.endpoint_mse.lo) << ',' << detail::fmt(r.endpoint_mse.hi) << ','
     << detail::fmt(r.sliced_w);
  return os.str();
}

inline std::string gamma_csv(const std::vector<GammaRow>& rows) {
  std::ostringstream os;
  os << "step,gamma_mean,ci_lo,ci_hi,n\n";
  for (const auto& r : rows) {
    os << r.t << ',' << detail::fmt(r.mean) << ',' << detail::fmt(r.lo) << ',' << detail::fmt(r.hi)
       << ',' << r.n << '\n';
  }
  return os.str();
}

// Reports live at {out_dir}/{experiment}/{policy}.{ext}
inline std::string report_path(const std::string& out_dir, const std::string& experiment,
                               const std::string& policy, const std::string& ext) {
  return out_dir + "/" + experiment + "/" + policy + "." + ext;
}

}  // namespace aglab
