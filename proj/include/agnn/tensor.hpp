#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "agnn/rng.hpp"

namespace agnn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

// Kernel parallelism cap, read once from AGNN_THREADS (default 1). Chunks
// write disjoint ranges only, so results are bitwise independent of the cap.
inline int max_kernel_threads() {
  static const int n = [] {
    const char* e = std::getenv("AGNN_THREADS");
    const int v = e ? std::atoi(e) : 1;
    return v < 1 ? 1 : v;
  }();
  return n;
}

template <class F>
void parallel_for(std::size_t n, F&& f) {
  const int nt = max_kernel_threads();
  constexpr std::size_t kGrain = 1 << 14;
  if (nt <= 1 || n < 2 * kGrain) {
    f(std::size_t{0}, n);
    return;
  }
  const std::size_t chunks = std::min<std::size_t>(nt, (n + kGrain - 1) / kGrain);
  const std::size_t per = (n + chunks - 1) / chunks;
  std::vector<std::thread> pool;
  for (std::size_t c = 0; c < chunks; ++c) {
    const std::size_t lo = c * per, hi = std::min(n, lo + per);
    if (lo >= hi) break;
    pool.emplace_back([&f, lo, hi] { f(lo, hi); });
  }
  for (auto& t : pool) t.join();
}

struct TensorData {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty means "no contribution yet"
  bool requires_grad = false;
  long node_id = -1;  // identity within the recording tape

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

// Value-semantic handle over shared storage. Copies alias the same buffer,
// which is what lets gradients accumulate into long-lived parameters.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Tensor t;
    t.d_ = std::make_shared<TensorData>();
    t.d_->shape = std::move(shape);
    t.d_->value.assign(shape_numel(t.d_->shape), 0.0);
    t.d_->requires_grad = requires_grad;
    return t;
  }

  static Tensor from_values(Shape shape, std::vector<double> values,
                            bool requires_grad = false) {
    if (values.size() != shape_numel(shape))
      throw std::invalid_argument("tensor: values length does not match shape");
    Tensor t;
    t.d_ = std::make_shared<TensorData>();
    t.d_->shape = std::move(shape);
    t.d_->value = std::move(values);
    t.d_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from_values({1}, {v}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  std::size_t rank() const { return d_->shape.size(); }
  std::size_t dim(std::size_t i) const { return d_->shape[i]; }
  std::size_t numel() const { return d_->value.size(); }
  std::size_t rows() const { return rank() == 2 ? d_->shape[0] : numel(); }
  std::size_t cols() const { return rank() == 2 ? d_->shape[1] : 1; }

  std::vector<double>& value() { return d_->value; }
  const std::vector<double>& value() const { return d_->value; }
  double val(std::size_t i = 0) const { return d_->value[i]; }
  double at(std::size_t r, std::size_t c) const { return d_->value[r * cols() + c]; }
  double& at_mut(std::size_t r, std::size_t c) { return d_->value[r * cols() + c]; }

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool b) { d_->requires_grad = b; }

  std::vector<double>& grad() { d_->ensure_grad(); return d_->grad; }
  const std::vector<double>& grad_raw() const { return d_->grad; }
  bool has_grad() const { return !d_->grad.empty(); }
  void clear_grad() { d_->grad.clear(); }

  long node_id() const { return d_->node_id; }

  Tensor clone() const {
    Tensor t;
    t.d_ = std::make_shared<TensorData>();
    t.d_->shape = d_->shape;
    t.d_->value = d_->value;
    t.d_->requires_grad = d_->requires_grad;
    return t;
  }

  void copy_values_from(const Tensor& src) {
    if (src.numel() != numel())
      throw std::runtime_error("tensor: copy_values_from size mismatch");
    d_->value = src.d_->value;
  }

  TensorData* data_ptr() const { return d_.get(); }

 private:
  std::shared_ptr<TensorData> d_;
};

// Ordered record of executed operations; backward replays it in exact
// reverse. One tape per training session; independent tapes may run on
// independent threads.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape*& current() {
    thread_local Tape* active = nullptr;
    return active;
  }

  long record(std::function<void()> backward_fn) {
    ops_.push_back(std::move(backward_fn));
    return static_cast<long>(ops_.size()) - 1;
  }

  std::size_t size() const { return ops_.size(); }

  void backward(Tensor loss) {
    if (loss.numel() != 1)
      throw std::invalid_argument("backward: loss must be a scalar tensor");
    if (loss.node_id() < 0)
      throw std::invalid_argument("backward: loss was not recorded on a tape");
    loss.grad()[0] = 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    ops_.clear();
  }

 private:
  std::vector<std::function<void()>> ops_;
};

class TapeScope {
 public:
  explicit TapeScope(Tape& t) : prev_(Tape::current()) { Tape::current() = &t; }
  ~TapeScope() { Tape::current() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

namespace detail {

inline bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::current()) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

}  // namespace detail

// Records `fn` on the active tape and stamps the output's node id.
inline void record_op(Tensor& out, std::function<void()> fn) {
  out.set_requires_grad(true);
  out.data_ptr()->node_id = Tape::current()->record(std::move(fn));
}

// ---------------------------------------------------------------------------
// Elementwise activations

enum class Activation { Sigmoid, Tanh, ReLU, Linear, Softplus, LeakyReLU, ReLU6, ELU };
constexpr int kNumActivations = 8;

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Tanh: return "tanh";
    case Activation::ReLU: return "relu";
    case Activation::Linear: return "linear";
    case Activation::Softplus: return "softplus";
    case Activation::LeakyReLU: return "leaky_relu";
    case Activation::ReLU6: return "relu6";
    case Activation::ELU: return "elu";
  }
  return "?";
}

inline double activation_fwd(Activation k, double x) {
  switch (k) {
    case Activation::Sigmoid: return 1.0 / (1.0 + std::exp(-x));
    case Activation::Tanh: return std::tanh(x);
    case Activation::ReLU: return x > 0 ? x : 0.0;
    case Activation::Linear: return x;
    case Activation::Softplus: return x > 30 ? x : std::log1p(std::exp(x));
    case Activation::LeakyReLU: return x > 0 ? x : 0.2 * x;
    case Activation::ReLU6: return x < 0 ? 0.0 : (x > 6 ? 6.0 : x);
    case Activation::ELU: return x > 0 ? x : std::expm1(x);
  }
  return x;
}

// Derivative expressed through input x and output y, whichever is cheaper.
inline double activation_bwd(Activation k, double x, double y) {
  switch (k) {
    case Activation::Sigmoid: return y * (1.0 - y);
    case Activation::Tanh: return 1.0 - y * y;
    case Activation::ReLU: return x > 0 ? 1.0 : 0.0;
    case Activation::Linear: return 1.0;
    case Activation::Softplus: return 1.0 / (1.0 + std::exp(-x));
    case Activation::LeakyReLU: return x > 0 ? 1.0 : 0.2;
    case Activation::ReLU6: return (x > 0 && x < 6) ? 1.0 : 0.0;
    case Activation::ELU: return x > 0 ? 1.0 : y + 1.0;
  }
  return 1.0;
}

inline Tensor activation(const Tensor& x, Activation k) {
  Tensor out = Tensor::zeros(x.shape());
  const auto& xv = x.value();
  auto& ov = out.value();
  parallel_for(xv.size(), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) ov[i] = activation_fwd(k, xv[i]);
  });
  if (detail::tracking({&x})) {
    Tensor xin = x;
    record_op(out, [xin, out, k]() mutable {
      if (!out.has_grad()) return;
      const auto& og = out.grad_raw();
      const auto& xv = xin.value();
      const auto& ov = out.value();
      auto& xg = xin.grad();
      parallel_for(xv.size(), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i)
          xg[i] += og[i] * activation_bwd(k, xv[i], ov[i]);
      });
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: shape mismatch (" + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " * " + std::to_string(b.rows()) +
                                "x" + std::to_string(b.cols()) + ")");
  const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
  Tensor out = Tensor::zeros({m, p});
  {
    detail::CMap ma(a.value().data(), m, k), mb(b.value().data(), k, p);
    detail::MMap mo(out.value().data(), m, p);
    mo.noalias() = ma * mb;
  }
  if (detail::tracking({&a, &b})) {
    Tensor ta = a, tb = b;
    record_op(out, [ta, tb, out, m, k, p]() mutable {
      if (!out.has_grad()) return;
      detail::CMap go(out.grad_raw().data(), m, p);
      if (ta.requires_grad()) {
        detail::CMap mb(tb.value().data(), k, p);
        detail::MMap ga(ta.grad().data(), m, k);
        ga.noalias() += go * mb.transpose();
      }
      if (tb.requires_grad()) {
        detail::CMap ma(ta.value().data(), m, k);
        detail::MMap gb(tb.grad().data(), k, p);
        gb.noalias() += ma.transpose() * go;
      }
    });
  }
  return out;
}

// (N x d) . (d) -> (N)
inline Tensor matvec(const Tensor& a, const Tensor& v) {
  if (a.rank() != 2 || v.rank() != 1 || a.dim(1) != v.dim(0))
    throw std::invalid_argument("matvec: shape mismatch");
  const std::size_t n = a.dim(0), d = a.dim(1);
  Tensor out = Tensor::zeros({n});
  {
    detail::CMap ma(a.value().data(), n, d);
    Eigen::Map<const Eigen::VectorXd> mv(v.value().data(), d);
    Eigen::Map<Eigen::VectorXd> mo(out.value().data(), n);
    mo.noalias() = ma * mv;
  }
  if (detail::tracking({&a, &v})) {
    Tensor ta = a, tv = v;
    record_op(out, [ta, tv, out, n, d]() mutable {
      if (!out.has_grad()) return;
      Eigen::Map<const Eigen::VectorXd> go(out.grad_raw().data(), n);
      if (ta.requires_grad()) {
        Eigen::Map<const Eigen::VectorXd> mv(tv.value().data(), d);
        detail::MMap ga(ta.grad().data(), n, d);
        ga.noalias() += go * mv.transpose();
      }
      if (tv.requires_grad()) {
        detail::CMap ma(ta.value().data(), n, d);
        Eigen::Map<Eigen::VectorXd> gv(tv.grad().data(), d);
        gv.noalias() += ma.transpose() * go;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise / shape ops

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("add: shape mismatch");
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.value();
  const auto& bv = b.value();
  auto& ov = out.value();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  if (detail::tracking({&a, &b})) {
    Tensor ta = a, tb = b;
    record_op(out, [ta, tb, out]() mutable {
      if (!out.has_grad()) return;
      const auto& og = out.grad_raw();
      if (ta.requires_grad()) {
        auto& g = ta.grad();
        for (std::size_t i = 0; i < og.size(); ++i) g[i] += og[i];
      }
      if (tb.requires_grad()) {
        auto& g = tb.grad();
        for (std::size_t i = 0; i < og.size(); ++i) g[i] += og[i];
      }
    });
  }
  return out;
}

// (N x d) + (d), broadcast over rows.
inline Tensor add_rowvec(const Tensor& a, const Tensor& v) {
  if (a.rank() != 2 || v.rank() != 1 || a.dim(1) != v.dim(0))
    throw std::invalid_argument("add_rowvec: shape mismatch");
  const std::size_t n = a.dim(0), d = a.dim(1);
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.value();
  const auto& vv = v.value();
  auto& ov = out.value();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) ov[r * d + c] = av[r * d + c] + vv[c];
  if (detail::tracking({&a, &v})) {
    Tensor ta = a, tv = v;
    record_op(out, [ta, tv, out, n, d]() mutable {
      if (!out.has_grad()) return;
      const auto& og = out.grad_raw();
      if (ta.requires_grad()) {
        auto& g = ta.grad();
        for (std::size_t i = 0; i < og.size(); ++i) g[i] += og[i];
      }
      if (tv.requires_grad()) {
        auto& g = tv.grad();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < d; ++c) g[c] += og[r * d + c];
      }
    });
  }
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("mul: shape mismatch");
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.value();
  const auto& bv = b.value();
  auto& ov = out.value();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  if (detail::tracking({&a, &b})) {
    Tensor ta = a, tb = b;
    record_op(out, [ta, tb, out]() mutable {
      if (!out.has_grad()) return;
      const auto& og = out.grad_raw();
      if (ta.requires_grad()) {
        auto& g = ta.grad();
        const auto& bv = tb.value();
        for (std::size_t i = 0; i < og.size(); ++i) g[i] += og[i] * bv[i];
      }
      if (tb.requires_grad()) {
        auto& g = tb.grad();
        const auto& av = ta.value();
        for (std::size_t i = 0; i < og.size(); ++i) g[i] += og[i] * av[i];
      }
    });
  }
  return out;
}

inline Tensor scale(const Tensor& a, double k) {
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.value();
  auto& ov = out.value();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * k;
  if (detail::tracking({&a})) {
    Tensor ta = a;
    record_op(out, [ta, out, k]() mutable {
      if (!out.has_grad()) return;
      const auto& og = out.grad_raw();
      auto& g = ta.grad();
      for (std::size_t i = 0; i < og.size(); ++i) g[i] += og[i] * k;
    });
  }
  return out;
}

inline Tensor concat_cols(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_cols: empty input");
  const std::size_t n = xs[0].dim(0);
  std::size_t total = 0;
  for (const auto& x : xs) {
    if (x.rank() != 2 || x.dim(0) != n)
      throw std::invalid_argument("concat_cols: row mismatch");
    total += x.dim(1);
  }
  Tensor out = Tensor::zeros({n, total});
  auto& ov = out.value();
  std::size_t off = 0;
  for (const auto& x : xs) {
    const std::size_t d = x.dim(1);
    const auto& xv = x.value();
    for (std::size_t r = 0; r < n; ++r)
      std::memcpy(&ov[r * total + off], &xv[r * d], d * sizeof(double));
    off += d;
  }
  bool track = Tape::current() != nullptr;
  bool any = false;
  for (const auto& x : xs) any = any || x.requires_grad();
  if (track && any) {
    std::vector<Tensor> ins = xs;
    record_op(out, [ins, out, n, total]() mutable {
      if (!out.has_grad()) return;
      const auto& og = out.grad_raw();
      std::size_t off = 0;
      for (auto& x : ins) {
        const std::size_t d = x.dim(1);
        if (x.requires_grad()) {
          auto& g = x.grad();
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < d; ++c) g[r * d + c] += og[r * total + off + c];
        }
        off += d;
      }
    });
  }
  return out;
}

inline Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1) {
  if (a.rank() != 2 || c1 > a.dim(1) || c0 >= c1)
    throw std::invalid_argument("slice_cols: bad range");
  const std::size_t n = a.dim(0), d = a.dim(1), w = c1 - c0;
  Tensor out = Tensor::zeros({n, w});
  const auto& av = a.value();
  auto& ov = out.value();
  for (std::size_t r = 0; r < n; ++r)
    std::memcpy(&ov[r * w], &av[r * d + c0], w * sizeof(double));
  if (detail::tracking({&a})) {
    Tensor ta = a;
    record_op(out, [ta, out, n, d, w, c0]() mutable {
      if (!out.has_grad()) return;
      const auto& og = out.grad_raw();
      auto& g = ta.grad();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < w; ++c) g[r * d + c0 + c] += og[r * w + c];
    });
  }
  return out;
}

inline Tensor slice_vec(const Tensor& a, std::size_t i0, std::size_t i1) {
  if (a.rank() != 1 || i1 > a.dim(0) || i0 >= i1)
    throw std::invalid_argument("slice_vec: bad range");
  const std::size_t w = i1 - i0;
  Tensor out = Tensor::zeros({w});
  std::memcpy(out.value().data(), a.value().data() + i0, w * sizeof(double));
  if (detail::tracking({&a})) {
    Tensor ta = a;
    record_op(out, [ta, out, i0, w]() mutable {
      if (!out.has_grad()) return;
      const auto& og = out.grad_raw();
      auto& g = ta.grad();
      for (std::size_t i = 0; i < w; ++i) g[i0 + i] += og[i];
    });
  }
  return out;
}

// Row gather; doubles as the embedding lookup. ids may repeat.
inline Tensor gather_rows(const Tensor& a, const std::vector<int>& ids) {
  const std::size_t n = a.rows(), d = a.cols();
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= n)
      throw std::invalid_argument("gather_rows: index out of range");
  Shape oshape = a.rank() == 2 ? Shape{ids.size(), d} : Shape{ids.size()};
  Tensor out = Tensor::zeros(oshape);
  const auto& av = a.value();
  auto& ov = out.value();
  for (std::size_t r = 0; r < ids.size(); ++r)
    std::memcpy(&ov[r * d], &av[static_cast<std::size_t>(ids[r]) * d], d * sizeof(double));
  if (detail::tracking({&a})) {
    Tensor ta = a;
    std::vector<int> idx = ids;
    record_op(out, [ta, out, idx, d]() mutable {
      if (!out.has_grad()) return;
      const auto& og = out.grad_raw();
      auto& g = ta.grad();
      for (std::size_t r = 0; r < idx.size(); ++r) {
        double* dst = &g[static_cast<std::size_t>(idx[r]) * d];
        const double* src = &og[r * d];
        for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
      }
    });
  }
  return out;
}

inline Tensor row_sum(const Tensor& a) {
  if (a.rank() != 2) throw std::invalid_argument("row_sum: rank-2 expected");
  const std::size_t n = a.dim(0), d = a.dim(1);
  Tensor out = Tensor::zeros({n});
  const auto& av = a.value();
  auto& ov = out.value();
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < d; ++c) s += av[r * d + c];
    ov[r] = s;
  }
  if (detail::tracking({&a})) {
    Tensor ta = a;
    record_op(out, [ta, out, n, d]() mutable {
      if (!out.has_grad()) return;
      const auto& og = out.grad_raw();
      auto& g = ta.grad();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) g[r * d + c] += og[r];
    });
  }
  return out;
}

inline Tensor sum_all(const Tensor& a) {
  Tensor out = Tensor::zeros({1});
  double s = 0;
  for (double v : a.value()) s += v;
  out.value()[0] = s;
  if (detail::tracking({&a})) {
    Tensor ta = a;
    record_op(out, [ta, out]() mutable {
      if (!out.has_grad()) return;
      const double og = out.grad_raw()[0];
      auto& g = ta.grad();
      for (auto& gi : g) gi += og;
    });
  }
  return out;
}

inline Tensor mean_all(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.numel());
  return scale(sum_all(a), inv);
}

// Inverted dropout with a counter-based mask: mask_i depends only on
// (stream, i), never on evaluation order, so parallel application is exact.
inline Tensor dropout(const Tensor& x, double rate, std::uint64_t stream, bool train) {
  if (!train || rate <= 0.0) return x;
  if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
  const double keep = 1.0 - rate;
  const double inv_keep = 1.0 / keep;
  Tensor out = Tensor::zeros(x.shape());
  const auto& xv = x.value();
  auto& ov = out.value();
  auto mask_at = [stream, rate](std::size_t i) {
    return unit_from_bits(hash_combine(stream, i)) >= rate;
  };
  parallel_for(xv.size(), [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) ov[i] = mask_at(i) ? xv[i] * inv_keep : 0.0;
  });
  if (detail::tracking({&x})) {
    Tensor tx = x;
    record_op(out, [tx, out, mask_at, inv_keep]() mutable {
      if (!out.has_grad()) return;
      const auto& og = out.grad_raw();
      auto& g = tx.grad();
      parallel_for(og.size(), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i)
          if (mask_at(i)) g[i] += og[i] * inv_keep;
      });
    });
  }
  return out;
}

// (E x d) rows scaled by (E) scalars — edge messages weighted by coefficients.
inline Tensor mul_rows(const Tensor& v, const Tensor& s) {
  if (v.rank() != 2 || s.rank() != 1 || v.dim(0) != s.dim(0))
    throw std::invalid_argument("mul_rows: shape mismatch");
  const std::size_t e = v.dim(0), d = v.dim(1);
  Tensor out = Tensor::zeros(v.shape());
  const auto& vv = v.value();
  const auto& sv = s.value();
  auto& ov = out.value();
  for (std::size_t r = 0; r < e; ++r)
    for (std::size_t c = 0; c < d; ++c) ov[r * d + c] = vv[r * d + c] * sv[r];
  if (detail::tracking({&v, &s})) {
    Tensor tv = v, ts = s;
    record_op(out, [tv, ts, out, e, d]() mutable {
      if (!out.has_grad()) return;
      const auto& og = out.grad_raw();
      if (tv.requires_grad()) {
        auto& g = tv.grad();
        const auto& sv = ts.value();
        for (std::size_t r = 0; r < e; ++r)
          for (std::size_t c = 0; c < d; ++c) g[r * d + c] += og[r * d + c] * sv[r];
      }
      if (ts.requires_grad()) {
        auto& g = ts.grad();
        const auto& vv = tv.value();
        for (std::size_t r = 0; r < e; ++r) {
          double acc = 0;
          for (std::size_t c = 0; c < d; ++c) acc += og[r * d + c] * vv[r * d + c];
          g[r] += acc;
        }
      }
    });
  }
  return out;
}

// out[e] = s[e] + s[rev[e]] — symmetrized edge scores.
inline Tensor add_reversed(const Tensor& s, const std::vector<int>& rev) {
  if (s.rank() != 1 || rev.size() != s.dim(0))
    throw std::invalid_argument("add_reversed: shape mismatch");
  const std::size_t e = s.dim(0);
  Tensor out = Tensor::zeros({e});
  const auto& sv = s.value();
  auto& ov = out.value();
  for (std::size_t i = 0; i < e; ++i) ov[i] = sv[i] + sv[static_cast<std::size_t>(rev[i])];
  if (detail::tracking({&s})) {
    Tensor ts = s;
    std::vector<int> r = rev;
    record_op(out, [ts, out, r, e]() mutable {
      if (!out.has_grad()) return;
      const auto& og = out.grad_raw();
      auto& g = ts.grad();
      for (std::size_t i = 0; i < e; ++i) {
        g[i] += og[i];
        g[static_cast<std::size_t>(r[i])] += og[i];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Segment ops. Segment ids must be sorted ascending; empty segments produce
// zero rows in every mode.

enum class Reduce { Sum, Mean, Max };

inline void check_segments(const std::vector<int>& seg, std::size_t count, int num_segments) {
  if (seg.size() != count) throw std::invalid_argument("segment op: id count mismatch");
  int prev = -1;
  for (int s : seg) {
    if (s < prev) throw std::invalid_argument("segment op: segment ids must be sorted ascending");
    if (s < 0 || s >= num_segments) throw std::invalid_argument("segment op: segment id out of range");
    prev = s;
  }
}

inline Tensor segment_reduce(const Tensor& values, const std::vector<int>& seg,
                             int num_segments, Reduce mode) {
  if (values.rank() != 2) throw std::invalid_argument("segment_reduce: rank-2 values expected");
  const std::size_t e = values.dim(0), d = values.dim(1);
  check_segments(seg, e, num_segments);
  Tensor out = Tensor::zeros({static_cast<std::size_t>(num_segments), d});
  const auto& vv = values.value();
  auto& ov = out.value();
  std::vector<int> seg_size(num_segments, 0);
  for (int s : seg) ++seg_size[s];
  std::vector<int> argmax;  // (num_segments*d) row index of current max, -1 if empty
  if (mode == Reduce::Max) argmax.assign(static_cast<std::size_t>(num_segments) * d, -1);
  for (std::size_t r = 0; r < e; ++r) {
    const std::size_t s = static_cast<std::size_t>(seg[r]);
    for (std::size_t c = 0; c < d; ++c) {
      const double x = vv[r * d + c];
      switch (mode) {
        case Reduce::Sum:
        case Reduce::Mean:
          ov[s * d + c] += x;
          break;
        case Reduce::Max:
          if (argmax[s * d + c] < 0 || x > ov[s * d + c]) {
            ov[s * d + c] = x;
            argmax[s * d + c] = static_cast<int>(r);
          }
          break;
      }
    }
  }
  if (mode == Reduce::Mean) {
    for (int s = 0; s < num_segments; ++s)
      if (seg_size[s] > 0) {
        const double inv = 1.0 / seg_size[s];
        for (std::size_t c = 0; c < d; ++c) ov[static_cast<std::size_t>(s) * d + c] *= inv;
      }
  }
  if (detail::tracking({&values})) {
    Tensor tv = values;
    std::vector<int> segc = seg;
    record_op(out, [tv, out, segc, seg_size, argmax, mode, d]() mutable {
      if (!out.has_grad()) return;
      const auto& og = out.grad_raw();
      auto& g = tv.grad();
      switch (mode) {
        case Reduce::Sum:
          for (std::size_t r = 0; r < segc.size(); ++r) {
            const std::size_t s = static_cast<std::size_t>(segc[r]);
            for (std::size_t c = 0; c < d; ++c) g[r * d + c] += og[s * d + c];
          }
          break;
        case Reduce::Mean:
          for (std::size_t r = 0; r < segc.size(); ++r) {
            const std::size_t s = static_cast<std::size_t>(segc[r]);
            const double inv = 1.0 / seg_size[segc[r]];
            for (std::size_t c = 0; c < d; ++c) g[r * d + c] += og[s * d + c] * inv;
          }
          break;
        case Reduce::Max:
          for (std::size_t i = 0; i < argmax.size(); ++i)
            if (argmax[i] >= 0) {
              const std::size_t r = static_cast<std::size_t>(argmax[i]);
              const std::size_t c = i % d;
              g[r * d + c] += og[i];
            }
          break;
      }
    });
  }
  return out;
}

inline Tensor segment_softmax(const Tensor& scores, const std::vector<int>& seg,
                              int num_segments) {
  if (scores.rank() != 1) throw std::invalid_argument("segment_softmax: rank-1 scores expected");
  const std::size_t e = scores.dim(0);
  check_segments(seg, e, num_segments);
  Tensor out = Tensor::zeros({e});
  const auto& sv = scores.value();
  auto& ov = out.value();
  std::size_t i = 0;
  while (i < e) {
    std::size_t j = i;
    while (j < e && seg[j] == seg[i]) ++j;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t r = i; r < j; ++r) mx = std::max(mx, sv[r]);
    double denom = 0;
    for (std::size_t r = i; r < j; ++r) {
      ov[r] = std::exp(sv[r] - mx);
      denom += ov[r];
    }
    for (std::size_t r = i; r < j; ++r) ov[r] /= denom;
    i = j;
  }
  if (detail::tracking({&scores})) {
    Tensor ts = scores;
    std::vector<int> segc = seg;
    record_op(out, [ts, out, segc, e]() mutable {
      if (!out.has_grad()) return;
      const auto& og = out.grad_raw();
      const auto& p = out.value();
      auto& g = ts.grad();
      std::size_t i = 0;
      while (i < e) {
        std::size_t j = i;
        while (j < e && segc[j] == segc[i]) ++j;
        double dot = 0;
        for (std::size_t r = i; r < j; ++r) dot += og[r] * p[r];
        for (std::size_t r = i; r < j; ++r) g[r] += p[r] * (og[r] - dot);
        i = j;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Softmax-family ops on a single row (controller decode heads)

inline Tensor row_log_softmax(const Tensor& x) {
  if (x.rank() > 2 || (x.rank() == 2 && x.dim(0) != 1))
    throw std::invalid_argument("row_log_softmax: expected a single row");
  const std::size_t m = x.numel();
  Tensor out = Tensor::zeros(x.shape());
  const auto& xv = x.value();
  auto& ov = out.value();
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : xv) mx = std::max(mx, v);
  double denom = 0;
  for (std::size_t i = 0; i < m; ++i) denom += std::exp(xv[i] - mx);
  const double lse = mx + std::log(denom);
  for (std::size_t i = 0; i < m; ++i) ov[i] = xv[i] - lse;
  if (detail::tracking({&x})) {
    Tensor tx = x;
    record_op(out, [tx, out, m]() mutable {
      if (!out.has_grad()) return;
      const auto& og = out.grad_raw();
      const auto& lp = out.value();
      auto& g = tx.grad();
      double sum = 0;
      for (std::size_t i = 0; i < m; ++i) sum += og[i];
      for (std::size_t i = 0; i < m; ++i) g[i] += og[i] - std::exp(lp[i]) * sum;
    });
  }
  return out;
}

inline Tensor select(const Tensor& x, std::size_t idx) {
  if (idx >= x.numel()) throw std::invalid_argument("select: index out of range");
  Tensor out = Tensor::scalar(x.value()[idx]);
  if (detail::tracking({&x})) {
    Tensor tx = x;
    record_op(out, [tx, out, idx]() mutable {
      if (!out.has_grad()) return;
      tx.grad()[idx] += out.grad_raw()[0];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Losses (mean over the listed rows)

inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                            const std::vector<int>& rows) {
  if (logits.rank() != 2) throw std::invalid_argument("cross_entropy: rank-2 logits expected");
  if (labels.size() != logits.dim(0))
    throw std::invalid_argument("cross_entropy: labels length mismatch");
  if (rows.empty()) throw std::invalid_argument("cross_entropy: empty row set");
  const std::size_t c = logits.dim(1);
  const auto& lv = logits.value();
  double total = 0;
  for (int r : rows) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || static_cast<std::size_t>(y) >= c)
      throw std::invalid_argument("cross_entropy: label out of range");
    const double* row = &lv[static_cast<std::size_t>(r) * c];
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double denom = 0;
    for (std::size_t j = 0; j < c; ++j) denom += std::exp(row[j] - mx);
    total += mx + std::log(denom) - row[static_cast<std::size_t>(y)];
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(rows.size()));
  if (detail::tracking({&logits})) {
    Tensor tl = logits;
    std::vector<int> rc = rows, lc = labels;
    record_op(out, [tl, out, rc, lc, c]() mutable {
      if (!out.has_grad()) return;
      const double og = out.grad_raw()[0] / static_cast<double>(rc.size());
      const auto& lv = tl.value();
      auto& g = tl.grad();
      for (int r : rc) {
        const double* row = &lv[static_cast<std::size_t>(r) * c];
        double* grow = &g[static_cast<std::size_t>(r) * c];
        double mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double denom = 0;
        for (std::size_t j = 0; j < c; ++j) denom += std::exp(row[j] - mx);
        for (std::size_t j = 0; j < c; ++j) grow[j] += og * std::exp(row[j] - mx) / denom;
        grow[static_cast<std::size_t>(lc[static_cast<std::size_t>(r)])] -= og;
      }
    });
  }
  return out;
}

// Logits-stable BCE, mean over rows x classes of the listed rows.
inline Tensor binary_cross_entropy(const Tensor& logits, const std::vector<std::uint8_t>& targets,
                                   const std::vector<int>& rows) {
  if (logits.rank() != 2) throw std::invalid_argument("bce: rank-2 logits expected");
  if (targets.size() != logits.numel()) throw std::invalid_argument("bce: target size mismatch");
  if (rows.empty()) throw std::invalid_argument("bce: empty row set");
  const std::size_t c = logits.dim(1);
  const auto& lv = logits.value();
  double total = 0;
  for (int r : rows)
    for (std::size_t j = 0; j < c; ++j) {
      const std::size_t i = static_cast<std::size_t>(r) * c + j;
      const double x = lv[i], t = targets[i] ? 1.0 : 0.0;
      total += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
    }
  const double denom = static_cast<double>(rows.size()) * static_cast<double>(c);
  Tensor out = Tensor::scalar(total / denom);
  if (detail::tracking({&logits})) {
    Tensor tl = logits;
    std::vector<int> rc = rows;
    std::vector<std::uint8_t> tc = targets;
    record_op(out, [tl, out, rc, tc, c, denom]() mutable {
      if (!out.has_grad()) return;
      const double og = out.grad_raw()[0] / denom;
      const auto& lv = tl.value();
      auto& g = tl.grad();
      for (int r : rc)
        for (std::size_t j = 0; j < c; ++j) {
          const std::size_t i = static_cast<std::size_t>(r) * c + j;
          const double sig = 1.0 / (1.0 + std::exp(-lv[i]));
          g[i] += og * (sig - (tc[i] ? 1.0 : 0.0));
        }
    });
  }
  return out;
}

enum class LossKind { CrossEntropy, BinaryCrossEntropy };

// ---------------------------------------------------------------------------
// Batch normalization over rows (per-feature statistics)

struct BatchNormBuffers {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  void init(std::size_t d) {
    running_mean.assign(d, 0.0);
    running_var.assign(d, 1.0);
  }
};

inline Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         BatchNormBuffers& buf, bool train, double momentum = 0.9,
                         double eps = 1e-5) {
  if (x.rank() != 2) throw std::invalid_argument("batch_norm: rank-2 input expected");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (gamma.numel() != d || beta.numel() != d || buf.running_mean.size() != d)
    throw std::invalid_argument("batch_norm: parameter width mismatch");
  Tensor out = Tensor::zeros(x.shape());
  const auto& xv = x.value();
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  auto& ov = out.value();
  std::vector<double> mean(d, 0.0), var(d, 0.0);
  if (train) {
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < d; ++c) mean[c] += xv[r * d + c];
    for (std::size_t c = 0; c < d; ++c) mean[c] /= static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < d; ++c) {
        const double dv = xv[r * d + c] - mean[c];
        var[c] += dv * dv;
      }
    for (std::size_t c = 0; c < d; ++c) var[c] /= static_cast<double>(n);
    for (std::size_t c = 0; c < d; ++c) {
      buf.running_mean[c] = momentum * buf.running_mean[c] + (1 - momentum) * mean[c];
      buf.running_var[c] = momentum * buf.running_var[c] + (1 - momentum) * var[c];
    }
  } else {
    mean = buf.running_mean;
    var = buf.running_var;
  }
  std::vector<double> inv_std(d);
  for (std::size_t c = 0; c < d; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c)
      ov[r * d + c] = gv[c] * (xv[r * d + c] - mean[c]) * inv_std[c] + bv[c];
  if (detail::tracking({&x, &gamma, &beta})) {
    Tensor tx = x, tg = gamma, tb = beta;
    record_op(out, [tx, tg, tb, out, mean, inv_std, n, d, train]() mutable {
      if (!out.has_grad()) return;
      const auto& og = out.grad_raw();
      const auto& xv = tx.value();
      const auto& gv = tg.value();
      std::vector<double> dgamma(d, 0.0), dbeta(d, 0.0), dot_xhat(d, 0.0), sum_dy(d, 0.0);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) {
          const double xhat = (xv[r * d + c] - mean[c]) * inv_std[c];
          dgamma[c] += og[r * d + c] * xhat;
          dbeta[c] += og[r * d + c];
          dot_xhat[c] += og[r * d + c] * xhat;
          sum_dy[c] += og[r * d + c];
        }
      if (tg.requires_grad()) {
        auto& g = tg.grad();
        for (std::size_t c = 0; c < d; ++c) g[c] += dgamma[c];
      }
      if (tb.requires_grad()) {
        auto& g = tb.grad();
        for (std::size_t c = 0; c < d; ++c) g[c] += dbeta[c];
      }
      if (tx.requires_grad()) {
        auto& g = tx.grad();
        if (train) {
          const double invn = 1.0 / static_cast<double>(n);
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < d; ++c) {
              const double xhat = (xv[r * d + c] - mean[c]) * inv_std[c];
              g[r * d + c] += gv[c] * inv_std[c] *
                              (og[r * d + c] - invn * sum_dy[c] - invn * xhat * dot_xhat[c]);
            }
        } else {
          for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < d; ++c)
              g[r * d + c] += og[r * d + c] * gv[c] * inv_std[c];
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// LSTM cell (four gates: input, forget, cell, output). Built from primitive
// ops so its gradient is exact by composition.

struct LstmWeights {
  Tensor w_ih;  // (in x 4H)
  Tensor w_hh;  // (H x 4H)
  Tensor bias;  // (4H), forget-gate block initialized to 1
};

inline std::pair<Tensor, Tensor> lstm_cell(const Tensor& x, const Tensor& h, const Tensor& c,
                                           const LstmWeights& w) {
  const std::size_t hidden = w.w_hh.dim(0);
  Tensor gates = add_rowvec(add(matmul(x, w.w_ih), matmul(h, w.w_hh)), w.bias);
  Tensor gi = activation(slice_cols(gates, 0, hidden), Activation::Sigmoid);
  Tensor gf = activation(slice_cols(gates, hidden, 2 * hidden), Activation::Sigmoid);
  Tensor gg = activation(slice_cols(gates, 2 * hidden, 3 * hidden), Activation::Tanh);
  Tensor go = activation(slice_cols(gates, 3 * hidden, 4 * hidden), Activation::Sigmoid);
  Tensor c_next = add(mul(gf, c), mul(gi, gg));
  Tensor h_next = mul(go, activation(c_next, Activation::Tanh));
  return {h_next, c_next};
}

// ---------------------------------------------------------------------------
// Initializers

inline Tensor glorot_init(const Shape& shape, Rng& rng) {
  if (shape.empty() || shape.size() > 2)
    throw std::invalid_argument("glorot_init: 1- or 2-D shape expected");
  const double fan_in = static_cast<double>(shape[0]);
  const double fan_out = shape.size() == 2 ? static_cast<double>(shape[1]) : 1.0;
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  Tensor t = Tensor::zeros(shape, true);
  for (auto& v : t.value()) v = rng.uniform(-bound, bound);
  return t;
}

inline Tensor uniform_init(const Shape& shape, double lo, double hi, Rng& rng) {
  Tensor t = Tensor::zeros(shape, true);
  for (auto& v : t.value()) v = rng.uniform(lo, hi);
  return t;
}

// ---------------------------------------------------------------------------
// Adam with bias correction; weight decay enters as the L2 penalty gradient.

struct AdamState {
  std::vector<double> m, v;
  long t = 0;
};

inline void adam_step(Tensor& param, AdamState& st, double lr, double beta1 = 0.9,
                      double beta2 = 0.999, double eps = 1e-8, double weight_decay = 0.0) {
  auto& p = param.value();
  if (st.m.empty()) {
    st.m.assign(p.size(), 0.0);
    st.v.assign(p.size(), 0.0);
  }
  if (st.m.size() != p.size()) throw std::invalid_argument("adam_step: state size mismatch");
  const std::vector<double>& g = param.grad_raw();
  const bool has_g = !g.empty();  // empty grad means zero gradient
  ++st.t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double gi = (has_g ? g[i] : 0.0) + weight_decay * 2.0 * p[i];
    st.m[i] = beta1 * st.m[i] + (1 - beta1) * gi;
    st.v[i] = beta2 * st.v[i] + (1 - beta2) * gi * gi;
    const double mhat = st.m[i] / bc1;
    const double vhat = st.v[i] / bc2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
  param.clear_grad();
}

}  // namespace agnn
