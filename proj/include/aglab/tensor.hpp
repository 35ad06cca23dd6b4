#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace aglab {

class Tape;

namespace detail {
inline Tape*& active_tape() {
  thread_local Tape* t = nullptr;
  return t;
}
inline std::uint64_t next_tape_epoch() {
  static std::atomic<std::uint64_t> c{1};
  return c.fetch_add(1);
}
}  // namespace detail

inline std::string shape_str(const std::vector<std::size_t>& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

// Dense 64-bit float tensor. Copies share storage; ops allocate fresh
// storage, so graph values behave immutably. Optimizers mutate parameter
// storage in place on purpose.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<double>>(std::move(data))) {
    if (numel(shape_) != data_->size())
      throw std::invalid_argument("tensor: shape " + shape_str(shape_) + " wants " +
                                  std::to_string(numel(shape_)) + " values, got " +
                                  std::to_string(data_->size()));
  }

  static std::size_t numel(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
  }

  static Tensor zeros(std::vector<std::size_t> shape) {
    std::size_t n = numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
  }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor vec(std::vector<double> v) {
    std::size_t n = v.size();
    return Tensor({n}, std::move(v));
  }
  static Tensor matrix(std::size_t r, std::size_t c, std::vector<double> v) {
    return Tensor({r, c}, std::move(v));
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return data_ ? data_->size() : 0; }
  bool defined() const { return static_cast<bool>(data_); }
  double* data() { return data_->data(); }
  const double* data() const { return data_->data(); }
  const std::shared_ptr<std::vector<double>>& storage() const { return data_; }
  std::vector<double>& values() { return *data_; }
  const std::vector<double>& values() const { return *data_; }

  double item() const {
    if (size() != 1) throw std::invalid_argument("item(): tensor has " + std::to_string(size()) + " elements");
    return (*data_)[0];
  }

  double operator[](std::size_t i) const { return (*data_)[i]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double v : *data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  // tape linkage; valid only while `epoch` matches the active tape
  int node = -1;
  std::uint64_t epoch = 0;

 private:
  std::vector<std::size_t> shape_;
  std::shared_ptr<std::vector<double>> data_;
};

// Reverse-mode tape. Nodes are appended in execution order, so a single
// reverse sweep visits children before parents. Scopes are explicit: ops
// only record while a TapeScope holds this tape active on the thread.
class Tape {
 public:
  using BackFn = std::function<void(Tape&, int self)>;

  Tape() : epoch_(detail::next_tape_epoch()) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::uint64_t epoch() const { return epoch_; }
  std::size_t num_nodes() const { return nodes_.size(); }

  int record(std::size_t out_size, BackFn back) {
    nodes_.push_back(Node{std::move(back), std::vector<double>(out_size, 0.0)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  // Register a leaf whose gradient can be queried after backward().
  Tensor watch(const Tensor& t) {
    Tensor out = t;
    out.node = record(t.size(), nullptr);
    out.epoch = epoch_;
    return out;
  }

  // Same, but marks the tensor itself. Handy for long-lived parameters that
  // other code holds by reference; the mark goes stale with the tape.
  void watch_inplace(Tensor& t) {
    t.node = record(t.size(), nullptr);
    t.epoch = epoch_;
  }

  bool tracks(const Tensor& t) const { return t.epoch == epoch_ && t.node >= 0; }

  std::vector<double>& grad_buf(int node) { return nodes_[static_cast<std::size_t>(node)].grad; }

  void backward(const Tensor& loss) {
    if (!tracks(loss)) throw std::invalid_argument("backward: loss is not connected to this tape");
    if (loss.size() != 1) throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.shape()));
    for (auto& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), 0.0);
    nodes_[static_cast<std::size_t>(loss.node)].grad[0] = 1.0;
    for (int i = loss.node; i >= 0; --i) {
      auto& n = nodes_[static_cast<std::size_t>(i)];
      if (n.back) n.back(*this, i);
    }
  }

  // Zeros for leaves the loss never touched.
  Tensor grad(const Tensor& t) const {
    if (!tracks(t)) return Tensor::zeros(t.shape());
    return Tensor(t.shape(), nodes_[static_cast<std::size_t>(t.node)].grad);
  }

 private:
  struct Node {
    BackFn back;
    std::vector<double> grad;
  };
  std::vector<Node> nodes_;
  std::uint64_t epoch_;
};

class TapeScope {
 public:
  explicit TapeScope(Tape& t) : prev_(detail::active_tape()) { detail::active_tape() = &t; }
  ~TapeScope() { detail::active_tape() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

namespace detail {

inline bool tracked(const Tensor& t) {
  Tape* tp = active_tape();
  return tp && tp->tracks(t);
}

inline int node_of(const Tensor& t) { return tracked(t) ? t.node : -1; }

inline void attach(Tensor& out, Tape::BackFn back) {
  Tape* tp = active_tape();
  out.node = tp->record(out.size(), std::move(back));
  out.epoch = tp->epoch();
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---- elementwise binary ops (equal shapes, or either side a 1-element scalar) ----

namespace detail {

template <class Fwd, class BwdA, class BwdB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, BwdA bwd_a, BwdB bwd_b) {
  bool sa = a.size() == 1, sb = b.size() == 1;
  if (!sa && !sb) check_same_shape(a, b, name);
  const Tensor& big = sa && !sb ? b : a;
  std::size_t n = big.size();
  std::vector<double> out(n);
  const double* pa = a.data();
  const double* pb = b.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(pa[sa ? 0 : i], pb[sb ? 0 : i]);
  Tensor r(big.shape(), std::move(out));
  int na = node_of(a), nb = node_of(b);
  if (active_tape() && (na >= 0 || nb >= 0)) {
    auto da = a.storage();
    auto db = b.storage();
    attach(r, [na, nb, sa, sb, da, db, n, bwd_a, bwd_b](Tape& t, int self) {
      const auto& g = t.grad_buf(self);
      if (na >= 0) {
        auto& ga = t.grad_buf(na);
        for (std::size_t i = 0; i < n; ++i)
          ga[sa ? 0 : i] += bwd_a(g[i], (*da)[sa ? 0 : i], (*db)[sb ? 0 : i]);
      }
      if (nb >= 0) {
        auto& gb = t.grad_buf(nb);
        for (std::size_t i = 0; i < n; ++i)
          gb[sb ? 0 : i] += bwd_b(g[i], (*da)[sa ? 0 : i], (*db)[sb ? 0 : i]);
      }
    });
  }
  return r;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return g; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return -g; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double g, double, double y) { return g * y; },
      [](double g, double x, double) { return g * x; });
}

// ---- elementwise unary + constant ops ----

namespace detail {

template <class Fwd, class Bwd>
Tensor unary_op(const Tensor& a, Fwd fwd, Bwd bwd) {
  std::size_t n = a.size();
  std::vector<double> out(n);
  const double* pa = a.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(pa[i]);
  Tensor r(a.shape(), std::move(out));
  int na = node_of(a);
  if (active_tape() && na >= 0) {
    auto da = a.storage();
    auto ds = r.storage();
    attach(r, [na, da, ds, n, bwd](Tape& t, int self) {
      const auto& g = t.grad_buf(self);
      auto& ga = t.grad_buf(na);
      for (std::size_t i = 0; i < n; ++i) ga[i] += bwd(g[i], (*da)[i], (*ds)[i]);
    });
  }
  return r;
}

}  // namespace detail

inline Tensor mul_scalar(const Tensor& a, double c) {
  return detail::unary_op(
      a, [c](double x) { return x * c; }, [c](double g, double, double) { return g * c; });
}

inline Tensor add_scalar(const Tensor& a, double c) {
  return detail::unary_op(
      a, [c](double x) { return x + c; }, [](double g, double, double) { return g; });
}

inline Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

inline Tensor exp(const Tensor& a) {
  return detail::unary_op(
      a, [](double x) { return std::exp(x); }, [](double g, double, double y) { return g * y; });
}

inline Tensor log(const Tensor& a) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] <= 0.0) throw std::domain_error("log: non-positive input");
  return detail::unary_op(
      a, [](double x) { return std::log(x); }, [](double g, double x, double) { return g / x; });
}

inline Tensor relu(const Tensor& a) {
  return detail::unary_op(
      a, [](double x) { return x > 0 ? x : 0.0; },
      [](double g, double x, double) { return x > 0 ? g : 0.0; });
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary_op(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double g, double, double y) { return g * y * (1.0 - y); });
}

inline Tensor silu(const Tensor& a) {
  return detail::unary_op(
      a,
      [](double x) { return x / (1.0 + std::exp(-x)); },
      [](double g, double x, double) {
        double s = 1.0 / (1.0 + std::exp(-x));
        return g * s * (1.0 + x * (1.0 - s));
      });
}

// y = a + c (constant vector, no gradient into c)
inline Tensor add_const_vec(const Tensor& a, const std::vector<double>& c) {
  if (a.size() != c.size())
    throw std::invalid_argument("add_const_vec: size mismatch " + std::to_string(a.size()) + " vs " +
                                std::to_string(c.size()));
  std::size_t n = a.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + c[i];
  Tensor r(a.shape(), std::move(out));
  int na = detail::node_of(a);
  if (detail::active_tape() && na >= 0) {
    detail::attach(r, [na, n](Tape& t, int self) {
      const auto& g = t.grad_buf(self);
      auto& ga = t.grad_buf(na);
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
    });
  }
  return r;
}

// y = a ⊙ c (constant vector)
inline Tensor mul_const_vec(const Tensor& a, const std::vector<double>& c) {
  if (a.size() != c.size())
    throw std::invalid_argument("mul_const_vec: size mismatch " + std::to_string(a.size()) + " vs " +
                                std::to_string(c.size()));
  std::size_t n = a.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * c[i];
  Tensor r(a.shape(), std::move(out));
  int na = detail::node_of(a);
  if (detail::active_tape() && na >= 0) {
    auto cc = std::make_shared<std::vector<double>>(c);
    detail::attach(r, [na, n, cc](Tape& t, int self) {
      const auto& g = t.grad_buf(self);
      auto& ga = t.grad_buf(na);
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * (*cc)[i];
    });
  }
  return r;
}

// ---- reductions ----

inline Tensor sum(const Tensor& a) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i];
  Tensor r = Tensor::scalar(s);
  int na = detail::node_of(a);
  if (detail::active_tape() && na >= 0) {
    std::size_t n = a.size();
    detail::attach(r, [na, n](Tape& t, int self) {
      double g = t.grad_buf(self)[0];
      auto& ga = t.grad_buf(na);
      for (std::size_t i = 0; i < n; ++i) ga[i] += g;
    });
  }
  return r;
}

inline Tensor mean(const Tensor& a) { return mul_scalar(sum(a), 1.0 / static_cast<double>(a.size())); }

inline Tensor dot(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "dot");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  Tensor r = Tensor::scalar(s);
  int na = detail::node_of(a), nb = detail::node_of(b);
  if (detail::active_tape() && (na >= 0 || nb >= 0)) {
    auto da = a.storage();
    auto db = b.storage();
    std::size_t n = a.size();
    detail::attach(r, [na, nb, da, db, n](Tape& t, int self) {
      double g = t.grad_buf(self)[0];
      if (na >= 0) {
        auto& ga = t.grad_buf(na);
        for (std::size_t i = 0; i < n; ++i) ga[i] += g * (*db)[i];
      }
      if (nb >= 0) {
        auto& gb = t.grad_buf(nb);
        for (std::size_t i = 0; i < n; ++i) gb[i] += g * (*da)[i];
      }
    });
  }
  return r;
}

// mean squared difference, the replication distance
inline Tensor mse(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mse");
  std::size_t n = a.size();
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  Tensor r = Tensor::scalar(s / static_cast<double>(n));
  int na = detail::node_of(a), nb = detail::node_of(b);
  if (detail::active_tape() && (na >= 0 || nb >= 0)) {
    auto da = a.storage();
    auto db = b.storage();
    detail::attach(r, [na, nb, da, db, n](Tape& t, int self) {
      double g = t.grad_buf(self)[0] * 2.0 / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        double d = (*da)[i] - (*db)[i];
        if (na >= 0) t.grad_buf(na)[i] += g * d;
        if (nb >= 0) t.grad_buf(nb)[i] -= g * d;
      }
    });
  }
  return r;
}

// ---- softmax family ----

inline std::vector<double> softmax_values(const std::vector<double>& v) {
  double m = *std::max_element(v.begin(), v.end());
  std::vector<double> y(v.size());
  double z = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    y[i] = std::exp(v[i] - m);
    z += y[i];
  }
  for (auto& x : y) x /= z;
  return y;
}

inline Tensor softmax(const Tensor& a) {
  if (a.shape().size() != 1) throw std::invalid_argument("softmax: expects a vector, got " + shape_str(a.shape()));
  Tensor r(a.shape(), softmax_values(a.values()));
  int na = detail::node_of(a);
  if (detail::active_tape() && na >= 0) {
    auto dy = r.storage();
    std::size_t n = a.size();
    detail::attach(r, [na, dy, n](Tape& t, int self) {
      const auto& g = t.grad_buf(self);
      auto& ga = t.grad_buf(na);
      double gy = 0;
      for (std::size_t i = 0; i < n; ++i) gy += g[i] * (*dy)[i];
      for (std::size_t i = 0; i < n; ++i) ga[i] += (*dy)[i] * (g[i] - gy);
    });
  }
  return r;
}

inline Tensor logsumexp(const Tensor& a) {
  if (a.size() == 0) throw std::invalid_argument("logsumexp: empty input");
  const auto& v = a.values();
  double m = *std::max_element(v.begin(), v.end());
  double z = 0;
  for (double x : v) z += std::exp(x - m);
  Tensor r = Tensor::scalar(m + std::log(z));
  int na = detail::node_of(a);
  if (detail::active_tape() && na >= 0) {
    auto sm = std::make_shared<std::vector<double>>(softmax_values(v));
    detail::attach(r, [na, sm](Tape& t, int self) {
      double g = t.grad_buf(self)[0];
      auto& ga = t.grad_buf(na);
      for (std::size_t i = 0; i < sm->size(); ++i) ga[i] += g * (*sm)[i];
    });
  }
  return r;
}

// ---- structural ops ----

inline Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  std::size_t n = 0;
  for (const auto& p : parts) n += p.size();
  std::vector<double> out;
  out.reserve(n);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  Tensor r({n}, std::move(out));
  if (detail::active_tape()) {
    bool any = false;
    std::vector<int> nodes(parts.size());
    std::vector<std::size_t> sizes(parts.size());
    for (std::size_t i = 0; i < parts.size(); ++i) {
      nodes[i] = detail::node_of(parts[i]);
      sizes[i] = parts[i].size();
      any = any || nodes[i] >= 0;
    }
    if (any) {
      detail::attach(r, [nodes, sizes](Tape& t, int self) {
        const auto& g = t.grad_buf(self);
        std::size_t off = 0;
        for (std::size_t i = 0; i < nodes.size(); ++i) {
          if (nodes[i] >= 0) {
            auto& gp = t.grad_buf(nodes[i]);
            for (std::size_t j = 0; j < sizes[i]; ++j) gp[j] += g[off + j];
          }
          off += sizes[i];
        }
      });
    }
  }
  return r;
}

inline Tensor index(const Tensor& a, std::size_t i) {
  if (i >= a.size()) throw std::out_of_range("index: " + std::to_string(i) + " >= " + std::to_string(a.size()));
  Tensor r = Tensor::scalar(a[i]);
  int na = detail::node_of(a);
  if (detail::active_tape() && na >= 0) {
    detail::attach(r, [na, i](Tape& t, int self) { t.grad_buf(na)[i] += t.grad_buf(self)[0]; });
  }
  return r;
}

// ---- matrix ops (2-D, row-major) ----

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> out(m * n, 0.0);
  const double* pa = a.data();
  const double* pb = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t l = 0; l < k; ++l) {
      double av = pa[i * k + l];
      if (av == 0.0) continue;
      const double* brow = pb + l * n;
      double* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  Tensor r({m, n}, std::move(out));
  int na = detail::node_of(a), nb = detail::node_of(b);
  if (detail::active_tape() && (na >= 0 || nb >= 0)) {
    auto da = a.storage();
    auto db = b.storage();
    detail::attach(r, [na, nb, da, db, m, k, n](Tape& t, int self) {
      const auto& g = t.grad_buf(self);
      if (na >= 0) {  // gA = g . B^T
        auto& ga = t.grad_buf(na);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            double gv = g[i * n + j];
            if (gv == 0.0) continue;
            for (std::size_t l = 0; l < k; ++l) ga[i * k + l] += gv * (*db)[l * n + j];
          }
      }
      if (nb >= 0) {  // gB = A^T . g
        auto& gb = t.grad_buf(nb);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t l = 0; l < k; ++l) {
            double av = (*da)[i * k + l];
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) gb[l * n + j] += av * g[i * n + j];
          }
      }
    });
  }
  return r;
}

// rows of `m` plus bias vector
inline Tensor add_rowwise(const Tensor& m, const Tensor& bias) {
  if (m.shape().size() != 2 || bias.shape().size() != 1 || m.shape()[1] != bias.shape()[0])
    throw std::invalid_argument("add_rowwise: incompatible shapes " + shape_str(m.shape()) + " + " +
                                shape_str(bias.shape()));
  std::size_t r = m.shape()[0], c = m.shape()[1];
  std::vector<double> out(m.values());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bias[j];
  Tensor res({r, c}, std::move(out));
  int nm = detail::node_of(m), nb = detail::node_of(bias);
  if (detail::active_tape() && (nm >= 0 || nb >= 0)) {
    detail::attach(res, [nm, nb, r, c](Tape& t, int self) {
      const auto& g = t.grad_buf(self);
      if (nm >= 0) {
        auto& gm = t.grad_buf(nm);
        for (std::size_t i = 0; i < r * c; ++i) gm[i] += g[i];
      }
      if (nb >= 0) {
        auto& gb = t.grad_buf(nb);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
      }
    });
  }
  return res;
}

// out[i,:] = table[idx[i],:]
inline Tensor embed_rows(const Tensor& table, const std::vector<int>& idx) {
  if (table.shape().size() != 2) throw std::invalid_argument("embed_rows: table must be 2-D");
  std::size_t rows = table.shape()[0], e = table.shape()[1];
  for (int i : idx)
    if (i < 0 || static_cast<std::size_t>(i) >= rows)
      throw std::out_of_range("embed_rows: row " + std::to_string(i) + " out of " + std::to_string(rows));
  std::vector<double> out(idx.size() * e);
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(table.data() + static_cast<std::size_t>(idx[i]) * e, e, out.data() + i * e);
  Tensor r({idx.size(), e}, std::move(out));
  int nt = detail::node_of(table);
  if (detail::active_tape() && nt >= 0) {
    detail::attach(r, [nt, idx, e](Tape& t, int self) {
      const auto& g = t.grad_buf(self);
      auto& gt = t.grad_buf(nt);
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < e; ++j) gt[static_cast<std::size_t>(idx[i]) * e + j] += g[i * e + j];
    });
  }
  return r;
}

// column-concatenate 2-D blocks with equal row counts
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  std::size_t rows = parts[0].shape()[0], cols = 0;
  for (const auto& p : parts) {
    if (p.shape().size() != 2 || p.shape()[0] != rows)
      throw std::invalid_argument("concat_cols: blocks must be 2-D with equal rows");
    cols += p.shape()[1];
  }
  std::vector<double> out(rows * cols);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::size_t c = p.shape()[1];
    for (std::size_t i = 0; i < rows; ++i)
      std::copy_n(p.data() + i * c, c, out.data() + i * cols + off);
    off += c;
  }
  Tensor r({rows, cols}, std::move(out));
  if (detail::active_tape()) {
    bool any = false;
    std::vector<int> nodes(parts.size());
    std::vector<std::size_t> widths(parts.size());
    for (std::size_t i = 0; i < parts.size(); ++i) {
      nodes[i] = detail::node_of(parts[i]);
      widths[i] = parts[i].shape()[1];
      any = any || nodes[i] >= 0;
    }
    if (any) {
      detail::attach(r, [nodes, widths, rows, cols](Tape& t, int self) {
        const auto& g = t.grad_buf(self);
        std::size_t off2 = 0;
        for (std::size_t p = 0; p < nodes.size(); ++p) {
          if (nodes[p] >= 0) {
            auto& gp = t.grad_buf(nodes[p]);
            for (std::size_t i = 0; i < rows; ++i)
              for (std::size_t j = 0; j < widths[p]; ++j) gp[i * widths[p] + j] += g[i * cols + off2 + j];
          }
          off2 += widths[p];
        }
      });
    }
  }
  return r;
}

inline Tensor reshape(const Tensor& a, std::vector<std::size_t> shape) {
  if (Tensor::numel(shape) != a.size())
    throw std::invalid_argument("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape) +
                                " changes element count");
  Tensor r(std::move(shape), a.values());
  int na = detail::node_of(a);
  if (detail::active_tape() && na >= 0) {
    std::size_t n = a.size();
    detail::attach(r, [na, n](Tape& t, int self) {
      const auto& g = t.grad_buf(self);
      auto& ga = t.grad_buf(na);
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
    });
  }
  return r;
}

}  // namespace aglab
