#pragma once

// Learned epsilon predictor: a small MLP trained against noised GMM samples.
// Stands in for the big denoisers this lab's experiments are scaled down from.

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "aglab/optim.hpp"
#include "aglab/rng.hpp"
#include "aglab/schedule.hpp"
#include "aglab/score.hpp"
#include "aglab/tensor.hpp"

namespace aglab {

inline std::vector<double> time_features(int t, int T, std::size_t feat_dim) {
  if (feat_dim % 2 != 0) throw std::invalid_argument("time feature dimension must be even");
  std::vector<double> out(feat_dim);
  double u = static_cast<double>(t) / static_cast<double>(T);
  for (std::size_t i = 0; i < feat_dim / 2; ++i) {
    double freq = std::pow(2.0, static_cast<double>(i));
    out[2 * i] = std::sin(2.0 * M_PI * freq * u);
    out[2 * i + 1] = std::cos(2.0 * M_PI * freq * u);
  }
  return out;
}

class MlpScoreNet {
 public:
  MlpScoreNet(std::size_t dim, std::size_t num_classes, std::uint64_t seed = 0,
              std::size_t hidden = 128, std::size_t time_dim = 16, std::size_t emb_dim = 8)
      : dim_(dim), num_classes_(num_classes), hidden_(hidden), time_dim_(time_dim), emb_dim_(emb_dim) {
    Rng rng(seed, /*stream=*/0x6d6c70);
    std::size_t in = dim + time_dim + emb_dim;
    w1_ = init_matrix(rng, in, hidden, std::sqrt(2.0 / static_cast<double>(in)));
    b1_ = Tensor::zeros({hidden});
    w2_ = init_matrix(rng, hidden, hidden, std::sqrt(2.0 / static_cast<double>(hidden)));
    b2_ = Tensor::zeros({hidden});
    w3_ = init_matrix(rng, hidden, hidden, std::sqrt(2.0 / static_cast<double>(hidden)));
    b3_ = Tensor::zeros({hidden});
    w4_ = init_matrix(rng, hidden, dim, 1e-2);
    b4_ = Tensor::zeros({dim});
    // one embedding row per class, final row reserved for the null condition
    emb_ = init_matrix(rng, num_classes + 1, emb_dim, 0.1);
  }

  std::size_t dim() const { return dim_; }
  std::size_t num_classes() const { return num_classes_; }
  std::size_t hidden() const { return hidden_; }
  std::size_t time_dim() const { return time_dim_; }
  std::size_t emb_dim() const { return emb_dim_; }
  int null_row() const { return static_cast<int>(num_classes_); }

  int cond_row(const Condition& cond) const {
    if (cond.is_null()) return null_row();
    if (!cond.cls || *cond.cls < 0 || static_cast<std::size_t>(*cond.cls) >= num_classes_) {
      throw std::out_of_range("condition class out of range for this net");
    }
    return *cond.cls;
  }

  // rows: x [B,dim], t per row, condition row index per row
  Tensor forward(const Tensor& x, const std::vector<int>& ts, const std::vector<int>& rows,
                 int T) const {
    std::size_t batch = x.shape()[0];
    if (ts.size() != batch || rows.size() != batch) throw std::invalid_argument("batch size mismatch");
    std::vector<double> feats(batch * time_dim_);
    for (std::size_t b = 0; b < batch; ++b) {
      auto f = time_features(ts[b], T, time_dim_);
      std::copy(f.begin(), f.end(), feats.begin() + static_cast<long>(b * time_dim_));
    }
    Tensor tf = Tensor::matrix(batch, time_dim_, feats);
    Tensor e = embed_rows(emb_, rows);
    Tensor h = concat_cols({x, tf, e});
    h = silu(add_rowwise(matmul(h, w1_), b1_));
    h = silu(add_rowwise(matmul(h, w2_), b2_));
    h = silu(add_rowwise(matmul(h, w3_), b3_));
    return add_rowwise(matmul(h, w4_), b4_);
  }

  std::vector<std::pair<std::string, Tensor*>> params() {
    return {{"w1", &w1_}, {"b1", &b1_}, {"w2", &w2_}, {"b2", &b2_}, {"w3", &w3_},
            {"b3", &b3_}, {"w4", &w4_}, {"b4", &b4_}, {"emb", &emb_}};
  }
  std::vector<std::pair<std::string, const Tensor*>> params() const {
    return {{"w1", &w1_}, {"b1", &b1_}, {"w2", &w2_}, {"b2", &b2_}, {"w3", &w3_},
            {"b3", &b3_}, {"w4", &w4_}, {"b4", &b4_}, {"emb", &emb_}};
  }

  std::vector<Tensor> snapshot() const {
    std::vector<Tensor> out;
    for (auto& [name, p] : params()) {
      (void)name;
      out.push_back(Tensor(p->shape(), p->values()));
    }
    return out;
  }

  void restore(const std::vector<Tensor>& snap) {
    auto ps = params();
    if (snap.size() != ps.size()) throw std::invalid_argument("snapshot arity mismatch");
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (snap[i].shape() != ps[i].second->shape()) throw std::invalid_argument("snapshot shape mismatch");
      std::copy(snap[i].values().begin(), snap[i].values().end(), ps[i].second->values().begin());
    }
  }

 private:
  static Tensor init_matrix(Rng& rng, std::size_t rows, std::size_t cols, double std) {
    std::vector<double> v(rows * cols);
    for (auto& x : v) x = std * rng.normal();
    return Tensor::matrix(rows, cols, std::move(v));
  }

  std::size_t dim_, num_classes_, hidden_, time_dim_, emb_dim_;
  Tensor w1_, b1_, w2_, b2_, w3_, b3_, w4_, b4_, emb_;
};

class MlpBackend : public ScoreBackend {
 public:
  MlpBackend(MlpScoreNet net, NoiseSchedule sched) : net_(std::move(net)), sched_(std::move(sched)) {}

  std::size_t dim() const override { return net_.dim(); }
  std::size_t num_classes() const override { return net_.num_classes(); }
  const NoiseSchedule& schedule() const override { return sched_; }
  const MlpScoreNet& net() const { return net_; }

  Tensor raw_eval(const Tensor& x, int t, const Condition& cond) const override {
    if (t < 1 || t > sched_.T) throw std::out_of_range("step index outside schedule");
    if (cond.img) throw std::invalid_argument("image conditioning is not part of this net");
    Tensor row = reshape(x, {1, net_.dim()});
    Tensor out = net_.forward(row, {t}, {net_.cond_row(cond)}, sched_.T);
    return reshape(out, {net_.dim()});
  }

 private:
  MlpScoreNet net_;
  NoiseSchedule sched_;
};

struct TrainConfig {
  int steps = 20000;
  std::size_t batch = 64;
  double p_uncond = 0.1;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  int checkpoint_every = 100;
};

struct TrainResult {
  std::vector<double> loss_history;
  bool diverged = false;
  int aborted_at = -1;
};

// Denoising regression on noised mixture samples. The conditioning label is
// replaced by the null row with probability p_uncond so one net serves both
// guidance branches. A non-finite loss aborts and rolls the weights back to
// the last finite checkpoint.
inline TrainResult train_mlp(const GmmSpec& spec, const NoiseSchedule& sched, MlpScoreNet& net,
                             const TrainConfig& cfg) {
  if (cfg.p_uncond < 0.0 || cfg.p_uncond > 1.0) throw std::invalid_argument("p_uncond must be in [0,1]");
  if (spec.dim != net.dim()) throw std::invalid_argument("net dimension does not match data spec");
  if (cfg.steps < 1 || cfg.batch < 1) throw std::invalid_argument("steps and batch must be positive");

  Rng rng(cfg.seed, /*stream=*/0x7472);
  Adam opt(cfg.lr);
  TrainResult res;
  res.loss_history.reserve(static_cast<std::size_t>(cfg.steps));
  std::vector<Tensor> last_good = net.snapshot();

  auto ps = net.params();
  std::vector<Tensor*> plist;
  for (auto& [name, p] : ps) {
    (void)name;
    plist.push_back(p);
  }

  for (int step = 0; step < cfg.steps; ++step) {
    std::size_t B = cfg.batch;
    std::vector<double> xs(B * spec.dim), target(B * spec.dim);
    std::vector<int> ts(B);
    std::vector<int> rows(B);
    for (std::size_t b = 0; b < B; ++b) {
      int cls = sample_class(spec, rng);
      auto x0 = sample_gmm(spec, rng, cls);
      int t = rng.uniform_int(1, sched.T);
      double a = sched.alpha(t), s = sched.sigma(t);
      bool drop = rng.uniform() < cfg.p_uncond;
      rows[b] = drop ? net.null_row() : cls;
      ts[b] = t;
      for (std::size_t d = 0; d < spec.dim; ++d) {
        double eps = rng.normal();
        xs[b * spec.dim + d] = a * x0[d] + s * eps;
        target[b * spec.dim + d] = eps;
      }
    }

    Tape tape;
    TapeScope scope(tape);
    Tensor x = Tensor::matrix(B, spec.dim, std::move(xs));
    Tensor y = Tensor::matrix(B, spec.dim, std::move(target));
    for (auto* p : plist) tape.watch_inplace(*p);
    Tensor pred = net.forward(x, ts, rows, sched.T);
    Tensor loss = mse(pred, y);
    double lv = loss.item();
    if (!std::isfinite(lv)) {
      net.restore(last_good);
      res.diverged = true;
      res.aborted_at = step;
      return res;
    }
    res.loss_history.push_back(lv);
    tape.backward(loss);
    std::vector<Tensor> grads;
    grads.reserve(plist.size());
    bool grads_ok = true;
    for (auto* p : plist) {
      grads.push_back(tape.grad(*p));
      grads_ok = grads_ok && grads.back().all_finite();
    }
    if (!grads_ok) {
      net.restore(last_good);
      res.diverged = true;
      res.aborted_at = step;
      return res;
    }
    opt.step(plist, grads);

    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) {
      bool ok = true;
      for (auto* p : plist) ok = ok && p->all_finite();
      if (ok) last_good = net.snapshot();
    }
  }
  return res;
}

}  // namespace aglab
