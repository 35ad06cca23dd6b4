#pragma once

// Differentiable search over per-step guidance choices. A soft run mixes all
// options at every step with softmax weights, so the replication loss is
// differentiable in the logits; a Gumbel cost proxy penalizes expected NFE
// spend above a cap. Discrete policies fall out by argmax or sampling.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "aglab/guidance.hpp"
#include "aglab/optim.hpp"
#include "aglab/rng.hpp"
#include "aglab/sampler.hpp"
#include "aglab/schedule.hpp"
#include "aglab/score.hpp"
#include "aglab/tensor.hpp"

namespace aglab {

// Option menu shared by every step: plain branches first, then one guided
// entry per strength. Guided entries share the two branch evaluations, so a
// soft step always costs 2 model calls no matter how many strengths are in
// play.
struct ChoiceSet {
  std::vector<double> strengths{3.75, 7.5, 15.0};

  std::size_t num_options() const { return strengths.size() + 2; }

  std::vector<double> cost_vector() const {
    std::vector<double> c(num_options(), 2.0);
    c[0] = c[1] = 1.0;
    return c;
  }

  GuidanceChoice choice_at(std::size_t j) const {
    if (j == 0) return GuidanceChoice::uncond();
    if (j == 1) return GuidanceChoice::cond();
    if (j - 2 < strengths.size()) return GuidanceChoice::cfg(strengths[j - 2]);
    throw std::out_of_range("option index " + std::to_string(j));
  }

  std::vector<Tensor> options(const Tensor& eps_u, const Tensor& eps_c) const {
    std::vector<Tensor> out;
    out.reserve(num_options());
    out.push_back(eps_u);
    out.push_back(eps_c);
    for (double s : strengths) out.push_back(cfg_score(eps_u, eps_c, s));
    return out;
  }
};

// One trainable logit row per executed step, ordered t = T..1 like Policy.
struct AlphaMatrix {
  std::vector<Tensor> rows;

  static AlphaMatrix init_uniform(int T, std::size_t options, std::uint64_t seed) {
    if (T < 1) throw std::invalid_argument("alpha needs at least one step row");
    Rng rng(seed, /*stream=*/0xa1fa);
    AlphaMatrix a;
    a.rows.reserve(static_cast<std::size_t>(T));
    for (int i = 0; i < T; ++i) {
      std::vector<double> v(options);
      for (auto& x : v) x = rng.uniform();
      a.rows.push_back(Tensor::vec(std::move(v)));
    }
    return a;
  }

  int T() const { return static_cast<int>(rows.size()); }

  const Tensor& row_for_step(int t) const {
    int T_ = T();
    if (t < 1 || t > T_) throw std::out_of_range("no alpha row for step " + std::to_string(t));
    return rows[static_cast<std::size_t>(T_ - t)];
  }

  // softmax of every row, same layout
  std::vector<std::vector<double>> weights() const {
    std::vector<std::vector<double>> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(softmax_values(r.values()));
    return out;
  }
};

struct SearchConfig {
  ChoiceSet choices;
  double lambda = 0.1;
  double cost_cap = 30.0;
  double gumbel_temperature = 1.0;
  int epochs = 5;
  double lr = 1e-2;
  std::uint64_t seed = 0;
  SolverKind solver = SolverKind::DdimEta0;
  double dataset_strength = 7.5;  // the guided baseline the targets come from

  void validate(int T) const {
    if (lambda < 0.0) throw std::invalid_argument("lambda must be nonnegative");
    if (gumbel_temperature <= 0.0) throw std::invalid_argument("gumbel temperature must be positive");
    if (epochs < 1) throw std::invalid_argument("epochs must be positive");
    if (choices.strengths.empty()) throw std::invalid_argument("need at least one guided strength");
    double lo = static_cast<double>(T), hi = 2.0 * static_cast<double>(T);
    if (cost_cap < lo || cost_cap > hi) {
      throw std::invalid_argument("cost cap " + std::to_string(cost_cap) + " outside [" +
                                  std::to_string(lo) + ", " + std::to_string(hi) + "]");
    }
  }
};

struct SearchPair {
  std::uint64_t seed = 0;
  Condition cond;
  std::vector<double> target;
};

inline std::vector<SearchPair> make_search_dataset(const ScoreBackend& backend, std::size_t n,
                                                   double strength, SolverKind solver,
                                                   std::uint64_t seed = 0) {
  std::vector<SearchPair> out;
  out.reserve(n);
  Rng rng(seed, /*stream=*/0xda7a);
  int T = backend.schedule().T;
  for (std::size_t i = 0; i < n; ++i) {
    SearchPair p;
    p.seed = rng.next_u64();
    p.cond = Condition::of(rng.uniform_int(0, static_cast<int>(backend.num_classes()) - 1));
    FixedPolicyController ctrl(make_full_cfg(T, strength));
    GenerateOptions opts;
    opts.solver = solver;
    opts.cond = p.cond;
    p.target = generate(backend, ctrl, p.seed, opts).x0.values();
    out.push_back(std::move(p));
  }
  return out;
}

// Soft rollout: every step pays both branches once, mixes all options with
// the row's softmax weights, and advances the solver on the blend. The
// endpoint is differentiable in alpha through the weights and through the
// state the later evaluations see.
inline Tensor soft_forward(const ScoreBackend& backend, const AlphaMatrix& alpha,
                           std::uint64_t seed, const Condition& cond, const ChoiceSet& choices,
                           SolverKind solver = SolverKind::DdimEta0, NfeCounter* nfe = nullptr) {
  const NoiseSchedule& sched = backend.schedule();
  if (alpha.T() != sched.T) {
    throw std::invalid_argument("alpha has " + std::to_string(alpha.T()) + " rows for T=" +
                                std::to_string(sched.T));
  }
  Rng rng(seed);
  NfeCounter local;
  NfeCounter& ctr = nfe ? *nfe : local;
  Tensor x = Tensor::vec(rng.normal_vec(backend.dim()));
  for (int t = sched.T; t >= 1; --t) {
    Tensor eps_u = eval_score(backend, x, t, Condition::null(), ctr);
    Tensor eps_c = eval_score(backend, x, t, cond, ctr);
    auto opts = choices.options(eps_u, eps_c);
    for (const auto& o : opts) {
      if (!o.all_finite()) throw std::runtime_error("non-finite option at step " + std::to_string(t));
    }
    Tensor w = softmax(alpha.row_for_step(t));
    Tensor mixed = mul(opts[0], index(w, 0));
    for (std::size_t j = 1; j < opts.size(); ++j) mixed = add(mixed, mul(opts[j], index(w, j)));
    x = solver_step(solver, x, t, mixed, sched);
  }
  return x;
}

// Expected-budget overshoot under one Gumbel draw per row. Relaxed one-hot
// samples keep the estimate differentiable; fresh noise every call.
inline Tensor cost_proxy(const AlphaMatrix& alpha, const SearchConfig& cfg, Rng& rng) {
  std::vector<double> costs = cfg.choices.cost_vector();
  Tensor total = Tensor::scalar(0.0);
  for (const auto& row : alpha.rows) {
    std::vector<double> g(row.size());
    for (auto& v : g) v = rng.gumbel();
    Tensor y = softmax(mul_scalar(add_const_vec(row, g), 1.0 / cfg.gumbel_temperature));
    total = add(total, dot(y, Tensor::vec(costs)));
  }
  return relu(add_scalar(total, -cfg.cost_cap));
}

struct SearchResult {
  AlphaMatrix alpha;
  std::vector<double> replication_history;  // per-epoch mean endpoint distance
  std::vector<double> cost_history;         // per-epoch mean proxy overshoot
};

inline SearchResult search(const ScoreBackend& backend, const std::vector<SearchPair>& dataset,
                           const SearchConfig& cfg) {
  const NoiseSchedule& sched = backend.schedule();
  cfg.validate(sched.T);
  if (dataset.empty()) throw std::invalid_argument("search needs a nonempty dataset");

  SearchResult res;
  res.alpha = AlphaMatrix::init_uniform(sched.T, cfg.choices.num_options(), cfg.seed);
  Lion opt(cfg.lr, 0.9, 0.99);
  Rng gumbel_rng(cfg.seed, /*stream=*/0x9b1);

  std::vector<Tensor*> params;
  for (auto& r : res.alpha.rows) params.push_back(&r);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double rep_sum = 0.0, cost_sum = 0.0;
    for (const auto& pair : dataset) {
      Tape tape;
      TapeScope scope(tape);
      for (auto* p : params) tape.watch_inplace(*p);
      Tensor x0 = soft_forward(backend, res.alpha, pair.seed, pair.cond, cfg.choices, cfg.solver);
      Tensor rep = mse(x0, Tensor::vec(pair.target));
      Tensor loss = rep;
      double cost_val = 0.0;
      if (cfg.lambda > 0.0) {
        Tensor g = cost_proxy(res.alpha, cfg, gumbel_rng);
        cost_val = g.item();
        loss = add(rep, mul_scalar(g, cfg.lambda));
      }
      double lv = loss.item();
      if (!std::isfinite(lv)) throw std::runtime_error("search loss diverged");
      rep_sum += rep.item();
      cost_sum += cost_val;
      tape.backward(loss);
      std::vector<Tensor> grads;
      grads.reserve(params.size());
      for (auto* p : params) grads.push_back(tape.grad(*p));
      opt.step(params, grads);
    }
    res.replication_history.push_back(rep_sum / static_cast<double>(dataset.size()));
    res.cost_history.push_back(cost_sum / static_cast<double>(dataset.size()));
  }
  return res;
}

enum class ExtractMode { Argmax, Sample };

inline Policy extract_policy(const AlphaMatrix& alpha, const ChoiceSet& choices,
                             ExtractMode mode = ExtractMode::Argmax, std::uint64_t seed = 0) {
  std::vector<double> costs = choices.cost_vector();
  Policy out;
  out.reserve(alpha.rows.size());
  Rng rng(seed, /*stream=*/0x5a);
  for (const auto& row : alpha.rows) {
    if (row.size() != choices.num_options()) {
      throw std::invalid_argument("row width " + std::to_string(row.size()) + " vs " +
                                  std::to_string(choices.num_options()) + " options");
    }
    std::size_t pick = 0;
    if (mode == ExtractMode::Argmax) {
      const auto& v = row.values();
      for (std::size_t j = 1; j < v.size(); ++j) {
        bool better = v[j] > v[pick];
        bool tie_cheaper = v[j] == v[pick] && costs[j] < costs[pick];
        if (better || tie_cheaper) pick = j;
      }
    } else {
      auto w = softmax_values(row.values());
      double u = rng.uniform(), acc = 0.0;
      pick = w.size() - 1;
      for (std::size_t j = 0; j < w.size(); ++j) {
        acc += w[j];
        if (u <= acc) {
          pick = j;
          break;
        }
      }
    }
    out.push_back(choices.choice_at(pick));
  }
  return out;
}

}  // namespace aglab
