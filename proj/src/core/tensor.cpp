#include "core/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

namespace rlfolio {

namespace {

thread_local Graph tl_graph;
thread_local int tl_nograd_depth = 0;
std::atomic<bool> g_finite_check{false};

[[noreturn]] void fail(const std::string& op, const std::string& msg) {
  throw std::invalid_argument(op + ": " + msg);
}

void check_defined(const Tensor& t, const char* op) {
  if (!t.defined()) fail(op, "undefined tensor operand");
}

void check_finite(const Tensor& t, const char* op) {
  if (!g_finite_check.load(std::memory_order_relaxed)) return;
  for (double v : t.values()) {
    if (!std::isfinite(v)) fail(op, "non-finite input value detected in checked mode");
  }
}

std::vector<std::int64_t> strides_of(const Shape& s) {
  std::vector<std::int64_t> st(s.size());
  std::int64_t acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

// Right-aligned broadcast result shape; throws naming both shapes.
Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t ra = a.size(), rb = b.size();
  const std::size_t r = std::max(ra, rb);
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::int64_t da = i < r - ra ? 1 : a[i - (r - ra)];
    const std::int64_t db = i < r - rb ? 1 : b[i - (r - rb)];
    if (da != db && da != 1 && db != 1) {
      fail(op, "shape mismatch: " + shape_str(a) + " vs " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Strides of `shape` when broadcast against `out_shape` (0 on broadcast axes).
std::vector<std::int64_t> broadcast_strides(const Shape& shape, const Shape& out_shape) {
  const std::size_t r = out_shape.size(), rs = shape.size();
  auto st = strides_of(shape);
  std::vector<std::int64_t> out(r, 0);
  for (std::size_t i = 0; i < rs; ++i) {
    const std::size_t oi = r - rs + i;
    out[oi] = (shape[i] == 1 && out_shape[oi] != 1) ? 0 : st[i];
  }
  return out;
}

// Apply fn(out_flat_index, a_offset, b_offset) over every element of out_shape.
template <typename Fn>
void for_each_broadcast(const Shape& out_shape, const std::vector<std::int64_t>& sa,
                        const std::vector<std::int64_t>& sb, Fn&& fn) {
  const std::int64_t n = numel(out_shape);
  const std::size_t r = out_shape.size();
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t oa = 0, ob = 0;
  for (std::int64_t flat = 0; flat < n; ++flat) {
    fn(flat, oa, ob);
    for (int ax = static_cast<int>(r) - 1; ax >= 0; --ax) {
      ++idx[ax];
      oa += sa[ax];
      ob += sb[ax];
      if (idx[ax] < out_shape[ax]) break;
      oa -= sa[ax] * out_shape[ax];
      ob -= sb[ax] * out_shape[ax];
      idx[ax] = 0;
    }
  }
}

// Accumulates grad (laid out as gshape) into target laid out as tshape,
// summing over broadcast axes.
void reduce_into(const std::vector<double>& g, const Shape& gshape, std::vector<double>& target,
                 const Shape& tshape) {
  if (gshape == tshape) {
    for (std::size_t i = 0; i < g.size(); ++i) target[i] += g[i];
    return;
  }
  auto st = broadcast_strides(tshape, gshape);
  const std::size_t r = gshape.size();
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t ot = 0;
  const std::int64_t n = numel(gshape);
  for (std::int64_t flat = 0; flat < n; ++flat) {
    target[ot] += g[flat];
    for (int ax = static_cast<int>(r) - 1; ax >= 0; --ax) {
      ++idx[ax];
      ot += st[ax];
      if (idx[ax] < gshape[ax]) break;
      ot -= st[ax] * gshape[ax];
      idx[ax] = 0;
    }
  }
}

Tensor make_result(Shape shape, bool requires_grad) {
  auto d = std::make_shared<TensorData>();
  d->shape = std::move(shape);
  d->values.assign(static_cast<std::size_t>(numel(d->shape)), 0.0);
  d->requires_grad = requires_grad && Graph::recording();
  d->leaf = false;
  if (d->requires_grad) d->grad.assign(d->values.size(), 0.0);
  return Tensor::wrap(std::move(d));
}

int norm_axis(int axis, int rank, const char* op) {
  int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) fail(op, "axis " + std::to_string(axis) + " out of range for rank " +
                                       std::to_string(rank));
  return a;
}

// c[M x N] += a[M x K] * b[K x N]
void gemm_acc(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
              std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      double* crow = c + i * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[M x K] += a[M x N] * b[K x N]^T  (i.e. a * b^T)
void gemm_abt_acc(const double* a, const double* b, double* c, std::int64_t m, std::int64_t n,
                  std::int64_t k) {
  for (std::int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * n;
    for (std::int64_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::int64_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
      c[i * k + p] += acc;
    }
  }
}

// c[K x N] += a[M x K]^T * b[M x N]
void gemm_atb_acc(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
                  std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::int64_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ")";
  return os.str();
}

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  for (auto d : shape) {
    if (d <= 0) fail("Tensor", "non-positive extent in shape " + shape_str(shape));
  }
  auto d = std::make_shared<TensorData>();
  d->shape = std::move(shape);
  d->values.assign(static_cast<std::size_t>(numel(d->shape)), value);
  d->requires_grad = requires_grad;
  if (requires_grad) d->grad.assign(d->values.size(), 0.0);
  return Tensor(std::move(d));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (numel(shape) != static_cast<std::int64_t>(values.size())) {
    fail("Tensor", "value count " + std::to_string(values.size()) + " does not match shape " +
                       shape_str(shape));
  }
  auto d = std::make_shared<TensorData>();
  d->shape = std::move(shape);
  d->values = std::move(values);
  d->requires_grad = requires_grad;
  if (requires_grad) d->grad.assign(d->values.size(), 0.0);
  return Tensor(std::move(d));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev, bool requires_grad) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = dist(rng);
  return from(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::xavier(Shape shape, std::mt19937_64& rng, bool requires_grad) {
  if (shape.empty()) fail("xavier", "empty shape");
  const std::int64_t fan_out = shape.back();
  const std::int64_t fan_in = shape.size() >= 2 ? shape[shape.size() - 2] : 1;
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = dist(rng);
  return from(std::move(shape), std::move(v), requires_grad);
}

const Shape& Tensor::shape() const { return d_->shape; }
std::int64_t Tensor::size() const { return numel(d_->shape); }
std::int64_t Tensor::dim(int axis) const {
  return d_->shape[static_cast<std::size_t>(norm_axis(axis, rank(), "dim"))];
}
int Tensor::rank() const { return static_cast<int>(d_->shape.size()); }
bool Tensor::requires_grad() const { return d_->requires_grad; }

std::vector<double>& Tensor::values() { return d_->values; }
const std::vector<double>& Tensor::values() const { return d_->values; }

std::vector<double>& Tensor::grad() {
  if (!d_->requires_grad) throw std::logic_error("grad(): tensor does not require grad");
  return d_->grad;
}
const std::vector<double>& Tensor::grad() const {
  if (!d_->requires_grad) throw std::logic_error("grad(): tensor does not require grad");
  return d_->grad;
}
void Tensor::zero_grad() {
  if (d_->requires_grad) std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
}

double Tensor::item() const {
  if (size() != 1) fail("item", "tensor " + shape_str(shape()) + " is not scalar");
  return d_->values[0];
}

double Tensor::at(const std::vector<std::int64_t>& index) const {
  if (index.size() != d_->shape.size()) fail("at", "index rank mismatch");
  auto st = strides_of(d_->shape);
  std::int64_t off = 0;
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= d_->shape[i]) fail("at", "index out of range");
    off += index[i] * st[i];
  }
  return d_->values[static_cast<std::size_t>(off)];
}

Tensor Tensor::clone(bool requires_grad) const {
  return from(d_->shape, d_->values, requires_grad);
}

// ---- Graph -----------------------------------------------------------------

Graph& Graph::current() { return tl_graph; }
bool Graph::recording() { return tl_nograd_depth == 0; }

void Graph::record(const Tensor& result, std::function<void()> pull) {
  steps_.push_back(Step{result.data(), std::move(pull)});
}

void Graph::backward(const Tensor& root) {
  if (!root.defined()) fail("backward", "undefined root");
  if (root.size() != 1) {
    fail("backward", "root must be scalar, got shape " + shape_str(root.shape()));
  }
  if (!root.requires_grad()) {
    fail("backward", "root does not participate in any recorded computation");
  }
  // Op-result grads are transient per traversal; only leaves accumulate.
  for (auto& s : steps_) {
    if (s.result->requires_grad) std::fill(s.result->grad.begin(), s.result->grad.end(), 0.0);
  }
  root.data()->grad[0] += 1.0;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) it->pull();
}

void Graph::clear() { steps_.clear(); }

NoGradScope::NoGradScope() { ++tl_nograd_depth; }
NoGradScope::~NoGradScope() { --tl_nograd_depth; }

void backward(const Tensor& root) { Graph::current().backward(root); }

void set_finite_check(bool on) { g_finite_check.store(on, std::memory_order_relaxed); }
bool finite_check_enabled() { return g_finite_check.load(std::memory_order_relaxed); }

// ---- elementwise binaries ---------------------------------------------------

namespace {

template <typename Fwd>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* op, Fwd fwd,
                 double da_coef, double db_coef) {
  check_defined(a, op);
  check_defined(b, op);
  check_finite(a, op);
  check_finite(b, op);
  Shape os = broadcast_shape(a.shape(), b.shape(), op);
  Tensor out = make_result(os, a.requires_grad() || b.requires_grad());
  auto sa = broadcast_strides(a.shape(), os);
  auto sb = broadcast_strides(b.shape(), os);
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();
  for_each_broadcast(os, sa, sb, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
    ov[o] = fwd(av[ia], bv[ib]);
  });
  if (out.requires_grad()) {
    auto ad = a.data(), bd = b.data(), od = out.data();
    const bool is_mul = da_coef == 0.0;  // sentinel: mul needs operand values
    Graph::current().record(out, [ad, bd, od, os, is_mul, da_coef, db_coef]() {
      if (!is_mul) {
        if (ad->requires_grad) {
          if (da_coef == 1.0) {
            reduce_into(od->grad, os, ad->grad, ad->shape);
          } else {
            std::vector<double> g(od->grad.size());
            for (std::size_t i = 0; i < g.size(); ++i) g[i] = da_coef * od->grad[i];
            reduce_into(g, os, ad->grad, ad->shape);
          }
        }
        if (bd->requires_grad) {
          if (db_coef == 1.0) {
            reduce_into(od->grad, os, bd->grad, bd->shape);
          } else {
            std::vector<double> g(od->grad.size());
            for (std::size_t i = 0; i < g.size(); ++i) g[i] = db_coef * od->grad[i];
            reduce_into(g, os, bd->grad, bd->shape);
          }
        }
      } else {
        auto sa2 = broadcast_strides(ad->shape, os);
        auto sb2 = broadcast_strides(bd->shape, os);
        std::vector<double> ga(ad->requires_grad ? od->grad.size() : 0, 0.0);
        std::vector<double> gb(bd->requires_grad ? od->grad.size() : 0, 0.0);
        for_each_broadcast(os, sa2, sb2, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
          if (!ga.empty()) ga[o] = od->grad[o] * bd->values[ib];
          if (!gb.empty()) gb[o] = od->grad[o] * ad->values[ia];
        });
        if (ad->requires_grad) reduce_into(ga, os, ad->grad, ad->shape);
        if (bd->requires_grad) reduce_into(gb, os, bd->grad, bd->shape);
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "add", [](double x, double y) { return x + y; }, 1.0, 1.0);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "sub", [](double x, double y) { return x - y; }, 1.0, -1.0);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "mul", [](double x, double y) { return x * y; }, 0.0, 0.0);
}

// ---- matmul -----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  const char* op = "matmul";
  check_defined(a, op);
  check_defined(b, op);
  check_finite(a, op);
  check_finite(b, op);
  if (a.rank() < 2 || b.rank() < 2) {
    fail(op, "operands must have rank >= 2, got " + shape_str(a.shape()) + " and " +
                 shape_str(b.shape()));
  }
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  const std::int64_t m = as[as.size() - 2], k = as[as.size() - 1];
  const std::int64_t k2 = bs[bs.size() - 2], n = bs[bs.size() - 1];
  if (k != k2) {
    fail(op, "inner dimension mismatch: " + shape_str(as) + " vs " + shape_str(bs));
  }
  Shape abatch(as.begin(), as.end() - 2), bbatch(bs.begin(), bs.end() - 2);
  Shape batch = broadcast_shape(abatch, bbatch, op);
  Shape os = batch;
  os.push_back(m);
  os.push_back(n);

  Tensor out = make_result(os, a.requires_grad() || b.requires_grad());
  auto sa = broadcast_strides(abatch, batch);
  auto sb = broadcast_strides(bbatch, batch);
  // Panel strides: offset of each (matrix) panel within the flat buffers.
  const std::int64_t pa = m * k, pb = k * n, po = m * n;
  const std::int64_t nbatch = numel(batch);
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values();

  std::vector<std::int64_t> idx(batch.size(), 0);
  std::int64_t oa = 0, ob = 0;
  for (std::int64_t bi = 0; bi < nbatch; ++bi) {
    gemm_acc(av.data() + oa * pa, bv.data() + ob * pb, ov.data() + bi * po, m, k, n);
    for (int ax = static_cast<int>(batch.size()) - 1; ax >= 0; --ax) {
      ++idx[ax];
      oa += sa[ax];
      ob += sb[ax];
      if (idx[ax] < batch[ax]) break;
      oa -= sa[ax] * batch[ax];
      ob -= sb[ax] * batch[ax];
      idx[ax] = 0;
    }
  }

  if (out.requires_grad()) {
    auto ad = a.data(), bd = b.data(), od = out.data();
    Graph::current().record(out, [ad, bd, od, batch, sa, sb, m, k, n, pa, pb, po]() {
      const std::int64_t nb = numel(batch);
      std::vector<std::int64_t> ix(batch.size(), 0);
      std::int64_t oa2 = 0, ob2 = 0;
      for (std::int64_t bi = 0; bi < nb; ++bi) {
        const double* gout = od->grad.data() + bi * po;
        if (ad->requires_grad) {
          // dA += dC * B^T
          gemm_abt_acc(gout, bd->values.data() + ob2 * pb, ad->grad.data() + oa2 * pa, m, n, k);
        }
        if (bd->requires_grad) {
          // dB += A^T * dC
          gemm_atb_acc(ad->values.data() + oa2 * pa, gout, bd->grad.data() + ob2 * pb, m, k, n);
        }
        for (int ax = static_cast<int>(batch.size()) - 1; ax >= 0; --ax) {
          ++ix[ax];
          oa2 += sa[ax];
          ob2 += sb[ax];
          if (ix[ax] < batch[ax]) break;
          oa2 -= sa[ax] * batch[ax];
          ob2 -= sb[ax] * batch[ax];
          ix[ax] = 0;
        }
      }
    });
  }
  return out;
}

// ---- shape ops ---------------------------------------------------------------

Tensor reshape(const Tensor& t, Shape shape) {
  const char* op = "reshape";
  check_defined(t, op);
  if (numel(shape) != t.size()) {
    fail(op, "cannot reshape " + shape_str(t.shape()) + " to " + shape_str(shape));
  }
  Tensor out = make_result(shape, t.requires_grad());
  out.values() = t.values();
  if (out.requires_grad()) {
    auto td = t.data(), od = out.data();
    Graph::current().record(out, [td, od]() {
      if (!td->requires_grad) return;
      for (std::size_t i = 0; i < td->grad.size(); ++i) td->grad[i] += od->grad[i];
    });
  }
  return out;
}

Tensor permute(const Tensor& t, const std::vector<int>& axes) {
  const char* op = "permute";
  check_defined(t, op);
  const int r = t.rank();
  if (static_cast<int>(axes.size()) != r) fail(op, "axes size must equal rank");
  std::vector<bool> seen(r, false);
  Shape os(r);
  for (int i = 0; i < r; ++i) {
    const int a = norm_axis(axes[i], r, op);
    if (seen[a]) fail(op, "duplicate axis in permutation");
    seen[a] = true;
    os[i] = t.shape()[a];
  }
  Tensor out = make_result(os, t.requires_grad());
  auto in_st = strides_of(t.shape());
  // Strides of the input walked in output order.
  std::vector<std::int64_t> walk(r);
  for (int i = 0; i < r; ++i) walk[i] = in_st[axes[i]];
  const auto& tv = t.values();
  auto& ov = out.values();
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t src = 0;
  const std::int64_t n = t.size();
  for (std::int64_t flat = 0; flat < n; ++flat) {
    ov[flat] = tv[src];
    for (int ax = r - 1; ax >= 0; --ax) {
      ++idx[ax];
      src += walk[ax];
      if (idx[ax] < os[ax]) break;
      src -= walk[ax] * os[ax];
      idx[ax] = 0;
    }
  }
  if (out.requires_grad()) {
    auto td = t.data(), od = out.data();
    Graph::current().record(out, [td, od, os, walk, r]() {
      if (!td->requires_grad) return;
      std::vector<std::int64_t> ix(r, 0);
      std::int64_t src2 = 0;
      const std::int64_t n2 = static_cast<std::int64_t>(od->grad.size());
      for (std::int64_t flat = 0; flat < n2; ++flat) {
        td->grad[src2] += od->grad[flat];
        for (int ax = r - 1; ax >= 0; --ax) {
          ++ix[ax];
          src2 += walk[ax];
          if (ix[ax] < os[ax]) break;
          src2 -= walk[ax] * os[ax];
          ix[ax] = 0;
        }
      }
    });
  }
  return out;
}

namespace {

// Views a shape as (outer, axis_extent, inner) around one axis.
void axis_split(const Shape& s, int axis, std::int64_t& outer, std::int64_t& extent,
                std::int64_t& inner) {
  outer = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  extent = s[axis];
  inner = 1;
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}

}  // namespace

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  const char* op = "concat";
  if (parts.empty()) fail(op, "no tensors to concatenate");
  for (const auto& p : parts) check_defined(p, op);
  const int r = parts[0].rank();
  const int ax = norm_axis(axis, r, op);
  Shape os = parts[0].shape();
  bool rg = false;
  std::int64_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != r) fail(op, "rank mismatch among parts");
    for (int i = 0; i < r; ++i) {
      if (i != ax && p.shape()[i] != os[i]) {
        fail(op, "shape mismatch: " + shape_str(os) + " vs " + shape_str(p.shape()));
      }
    }
    total += p.shape()[ax];
    rg = rg || p.requires_grad();
  }
  os[ax] = total;
  Tensor out = make_result(os, rg);
  std::int64_t outer, extent, inner;
  axis_split(os, ax, outer, extent, inner);
  auto& ov = out.values();
  std::int64_t col = 0;
  for (const auto& p : parts) {
    const std::int64_t pe = p.shape()[ax];
    const auto& pv = p.values();
    for (std::int64_t o = 0; o < outer; ++o) {
      std::memcpy(ov.data() + (o * extent + col) * inner, pv.data() + o * pe * inner,
                  static_cast<std::size_t>(pe * inner) * sizeof(double));
    }
    col += pe;
  }
  if (out.requires_grad()) {
    std::vector<std::shared_ptr<TensorData>> pd;
    pd.reserve(parts.size());
    for (const auto& p : parts) pd.push_back(p.data());
    auto od = out.data();
    Graph::current().record(out, [pd, od, outer, extent, inner, ax]() {
      std::int64_t col2 = 0;
      for (const auto& p : pd) {
        const std::int64_t pe = p->shape[ax];
        if (p->requires_grad) {
          for (std::int64_t o = 0; o < outer; ++o) {
            const double* src = od->grad.data() + (o * extent + col2) * inner;
            double* dst = p->grad.data() + o * pe * inner;
            for (std::int64_t i = 0; i < pe * inner; ++i) dst[i] += src[i];
          }
        }
        col2 += pe;
      }
    });
  }
  return out;
}

Tensor slice(const Tensor& t, int axis, std::int64_t start, std::int64_t len) {
  const char* op = "slice";
  check_defined(t, op);
  const int ax = norm_axis(axis, t.rank(), op);
  if (start < 0 || len <= 0 || start + len > t.shape()[ax]) {
    fail(op, "range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                 ") out of bounds for axis extent " + std::to_string(t.shape()[ax]));
  }
  Shape os = t.shape();
  os[ax] = len;
  Tensor out = make_result(os, t.requires_grad());
  std::int64_t outer, extent, inner;
  axis_split(t.shape(), ax, outer, extent, inner);
  const auto& tv = t.values();
  auto& ov = out.values();
  for (std::int64_t o = 0; o < outer; ++o) {
    std::memcpy(ov.data() + o * len * inner, tv.data() + (o * extent + start) * inner,
                static_cast<std::size_t>(len * inner) * sizeof(double));
  }
  if (out.requires_grad()) {
    auto td = t.data(), od = out.data();
    Graph::current().record(out, [td, od, outer, extent, inner, start, len]() {
      if (!td->requires_grad) return;
      for (std::int64_t o = 0; o < outer; ++o) {
        const double* src = od->grad.data() + o * len * inner;
        double* dst = td->grad.data() + (o * extent + start) * inner;
        for (std::int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

Tensor pad(const Tensor& t, int axis, std::int64_t before, std::int64_t after) {
  const char* op = "pad";
  check_defined(t, op);
  if (before < 0 || after < 0) fail(op, "negative padding");
  const int ax = norm_axis(axis, t.rank(), op);
  Shape os = t.shape();
  os[ax] += before + after;
  Tensor out = make_result(os, t.requires_grad());
  std::int64_t outer, extent, inner;
  axis_split(t.shape(), ax, outer, extent, inner);
  const std::int64_t oe = os[ax];
  const auto& tv = t.values();
  auto& ov = out.values();
  for (std::int64_t o = 0; o < outer; ++o) {
    std::memcpy(ov.data() + (o * oe + before) * inner, tv.data() + o * extent * inner,
                static_cast<std::size_t>(extent * inner) * sizeof(double));
  }
  if (out.requires_grad()) {
    auto td = t.data(), od = out.data();
    Graph::current().record(out, [td, od, outer, extent, inner, before, oe]() {
      if (!td->requires_grad) return;
      for (std::int64_t o = 0; o < outer; ++o) {
        const double* src = od->grad.data() + (o * oe + before) * inner;
        double* dst = td->grad.data() + o * extent * inner;
        for (std::int64_t i = 0; i < extent * inner; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

// ---- activations ------------------------------------------------------------

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& t, const char* op, Fwd fwd, Bwd bwd_from_out) {
  check_defined(t, op);
  check_finite(t, op);
  Tensor out = make_result(t.shape(), t.requires_grad());
  const auto& tv = t.values();
  auto& ov = out.values();
  for (std::size_t i = 0; i < tv.size(); ++i) ov[i] = fwd(tv[i]);
  if (out.requires_grad()) {
    auto td = t.data(), od = out.data();
    Graph::current().record(out, [td, od, bwd_from_out]() {
      if (!td->requires_grad) return;
      for (std::size_t i = 0; i < td->grad.size(); ++i) {
        td->grad[i] += od->grad[i] * bwd_from_out(td->values[i], od->values[i]);
      }
    });
  }
  return out;
}

}  // namespace

Tensor relu(const Tensor& t) {
  return unary_op(
      t, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& t) {
  return unary_op(
      t, "tanh", [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& t) {
  return unary_op(
      t, "sigmoid", [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor scalar_mul(const Tensor& t, double c) {
  return unary_op(
      t, "scalar_mul", [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Tensor softmax(const Tensor& t) {
  const char* op = "softmax";
  check_defined(t, op);
  check_finite(t, op);
  const std::int64_t cols = t.shape().back();
  const std::int64_t rows = t.size() / cols;
  Tensor out = make_result(t.shape(), t.requires_grad());
  const auto& tv = t.values();
  auto& ov = out.values();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* x = tv.data() + r * cols;
    double* y = ov.data() + r * cols;
    double mx = x[0];
    for (std::int64_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (std::int64_t j = 0; j < cols; ++j) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
    for (std::int64_t j = 0; j < cols; ++j) y[j] /= sum;
  }
  if (out.requires_grad()) {
    auto td = t.data(), od = out.data();
    Graph::current().record(out, [td, od, rows, cols]() {
      if (!td->requires_grad) return;
      for (std::int64_t r = 0; r < rows; ++r) {
        const double* y = od->values.data() + r * cols;
        const double* gy = od->grad.data() + r * cols;
        double* gx = td->grad.data() + r * cols;
        double dot = 0.0;
        for (std::int64_t j = 0; j < cols; ++j) dot += gy[j] * y[j];
        for (std::int64_t j = 0; j < cols; ++j) gx[j] += (gy[j] - dot) * y[j];
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const char* op = "layer_norm";
  check_defined(x, op);
  check_defined(gain, op);
  check_defined(bias, op);
  check_finite(x, op);
  const std::int64_t cols = x.shape().back();
  if (gain.size() != cols || bias.size() != cols) {
    fail(op, "gain/bias shape " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
                 " does not match feature extent " + std::to_string(cols));
  }
  const std::int64_t rows = x.size() / cols;
  const bool rg = x.requires_grad() || gain.requires_grad() || bias.requires_grad();
  Tensor out = make_result(x.shape(), rg);
  // Cache per-row mean and inverse stddev for the backward pass.
  auto mean = std::make_shared<std::vector<double>>(rows);
  auto inv = std::make_shared<std::vector<double>>(rows);
  const auto& xv = x.values();
  const auto& gv = gain.values();
  const auto& bv = bias.values();
  auto& ov = out.values();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * cols;
    double mu = 0.0;
    for (std::int64_t j = 0; j < cols; ++j) mu += xr[j];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::int64_t j = 0; j < cols; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(cols);
    const double iv = 1.0 / std::sqrt(var + eps);
    (*mean)[r] = mu;
    (*inv)[r] = iv;
    double* yr = ov.data() + r * cols;
    for (std::int64_t j = 0; j < cols; ++j) yr[j] = (xr[j] - mu) * iv * gv[j] + bv[j];
  }
  if (out.requires_grad()) {
    auto xd = x.data(), gd = gain.data(), bd = bias.data(), od = out.data();
    Graph::current().record(out, [xd, gd, bd, od, mean, inv, rows, cols]() {
      const double cn = static_cast<double>(cols);
      for (std::int64_t r = 0; r < rows; ++r) {
        const double* xr = xd->values.data() + r * cols;
        const double* gy = od->grad.data() + r * cols;
        const double mu = (*mean)[r];
        const double iv = (*inv)[r];
        if (gd->requires_grad || bd->requires_grad) {
          for (std::int64_t j = 0; j < cols; ++j) {
            const double xhat = (xr[j] - mu) * iv;
            if (gd->requires_grad) gd->grad[j] += gy[j] * xhat;
            if (bd->requires_grad) bd->grad[j] += gy[j];
          }
        }
        if (xd->requires_grad) {
          // dxhat = gy * gain; dx = iv * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
          double s1 = 0.0, s2 = 0.0;
          for (std::int64_t j = 0; j < cols; ++j) {
            const double dxh = gy[j] * gd->values[j];
            const double xhat = (xr[j] - mu) * iv;
            s1 += dxh;
            s2 += dxh * xhat;
          }
          s1 /= cn;
          s2 /= cn;
          double* gx = xd->grad.data() + r * cols;
          for (std::int64_t j = 0; j < cols; ++j) {
            const double dxh = gy[j] * gd->values[j];
            const double xhat = (xr[j] - mu) * iv;
            gx[j] += iv * (dxh - s1 - xhat * s2);
          }
        }
      }
    });
  }
  return out;
}

// ---- reductions ---------------------------------------------------------------

Tensor reduce_sum(const Tensor& t) {
  const char* op = "reduce_sum";
  check_defined(t, op);
  check_finite(t, op);
  Tensor out = make_result({1}, t.requires_grad());
  double s = 0.0;
  for (double v : t.values()) s += v;
  out.values()[0] = s;
  if (out.requires_grad()) {
    auto td = t.data(), od = out.data();
    Graph::current().record(out, [td, od]() {
      if (!td->requires_grad) return;
      const double g = od->grad[0];
      for (auto& x : td->grad) x += g;
    });
  }
  return out;
}

Tensor reduce_mean(const Tensor& t) {
  Tensor s = reduce_sum(t);
  return scalar_mul(s, 1.0 / static_cast<double>(t.size()));
}

Tensor reduce_sum(const Tensor& t, int axis) {
  const char* op = "reduce_sum";
  check_defined(t, op);
  check_finite(t, op);
  const int ax = norm_axis(axis, t.rank(), op);
  Shape os = t.shape();
  os.erase(os.begin() + ax);
  if (os.empty()) os = {1};
  Tensor out = make_result(os, t.requires_grad());
  std::int64_t outer, extent, inner;
  axis_split(t.shape(), ax, outer, extent, inner);
  const auto& tv = t.values();
  auto& ov = out.values();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t e = 0; e < extent; ++e) {
      const double* src = tv.data() + (o * extent + e) * inner;
      double* dst = ov.data() + o * inner;
      for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  if (out.requires_grad()) {
    auto td = t.data(), od = out.data();
    Graph::current().record(out, [td, od, outer, extent, inner]() {
      if (!td->requires_grad) return;
      for (std::int64_t o = 0; o < outer; ++o) {
        const double* src = od->grad.data() + o * inner;
        for (std::int64_t e = 0; e < extent; ++e) {
          double* dst = td->grad.data() + (o * extent + e) * inner;
          for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return out;
}

Tensor reduce_mean(const Tensor& t, int axis) {
  const int ax = norm_axis(axis, t.rank(), "reduce_mean");
  Tensor s = reduce_sum(t, axis);
  return scalar_mul(s, 1.0 / static_cast<double>(t.shape()[ax]));
}

Tensor gather(const Tensor& t, int axis, const std::vector<std::int64_t>& indices) {
  const char* op = "gather";
  check_defined(t, op);
  if (indices.empty()) fail(op, "empty index list");
  const int ax = norm_axis(axis, t.rank(), op);
  const std::int64_t ext = t.shape()[ax];
  for (auto i : indices) {
    if (i < 0 || i >= ext) {
      fail(op, "index " + std::to_string(i) + " out of range for axis extent " +
                   std::to_string(ext));
    }
  }
  Shape os = t.shape();
  os[ax] = static_cast<std::int64_t>(indices.size());
  Tensor out = make_result(os, t.requires_grad());
  std::int64_t outer, extent, inner;
  axis_split(t.shape(), ax, outer, extent, inner);
  const std::int64_t ne = os[ax];
  const auto& tv = t.values();
  auto& ov = out.values();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t e = 0; e < ne; ++e) {
      std::memcpy(ov.data() + (o * ne + e) * inner, tv.data() + (o * extent + indices[e]) * inner,
                  static_cast<std::size_t>(inner) * sizeof(double));
    }
  }
  if (out.requires_grad()) {
    auto td = t.data(), od = out.data();
    auto idx = indices;
    Graph::current().record(out, [td, od, idx, outer, extent, inner, ne]() {
      if (!td->requires_grad) return;
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t e = 0; e < ne; ++e) {
          const double* src = od->grad.data() + (o * ne + e) * inner;
          double* dst = td->grad.data() + (o * extent + idx[e]) * inner;
          for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return out;
}

// ---- parameters & Adam ----------------------------------------------------------

void ParameterSet::add(std::string name, Tensor t) {
  items_.push_back(NamedTensor{std::move(name), std::move(t)});
}

void ParameterSet::extend(const ParameterSet& other) {
  items_.insert(items_.end(), other.items_.begin(), other.items_.end());
}

const Tensor* ParameterSet::find(const std::string& name) const {
  for (const auto& nt : items_) {
    if (nt.name == name) return &nt.tensor;
  }
  return nullptr;
}

void ParameterSet::zero_grad() {
  for (auto& nt : items_) nt.tensor.zero_grad();
}

void copy_values(const ParameterSet& src, ParameterSet& dst) {
  if (src.size() != dst.size()) {
    throw std::invalid_argument("copy_values: parameter count mismatch (" +
                                std::to_string(src.size()) + " vs " + std::to_string(dst.size()) +
                                ")");
  }
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i].tensor.shape() != dst[i].tensor.shape()) {
      throw std::invalid_argument("copy_values: shape mismatch at " + src[i].name + ": " +
                                  shape_str(src[i].tensor.shape()) + " vs " +
                                  shape_str(dst[i].tensor.shape()));
    }
    dst[i].tensor.values() = src[i].tensor.values();
  }
}

AdamOptimizer::AdamOptimizer(ParameterSet params, double lr, double beta1, double beta2,
                             double epsilon)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(epsilon) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(params_[i].tensor.values().size(), 0.0);
    v_[i].assign(params_[i].tensor.values().size(), 0.0);
  }
}

void AdamOptimizer::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].tensor.requires_grad()) {
      throw std::invalid_argument("adam_step: parameter '" + params_[i].name +
                                  "' has no gradient accumulator");
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i].tensor.values();
    const auto& g = params_[i].tensor.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void AdamOptimizer::zero_grad() { params_.zero_grad(); }

void AdamOptimizer::restore_state(std::size_t i, std::vector<double> m, std::vector<double> v) {
  if (i >= m_.size() || m.size() != m_[i].size() || v.size() != v_[i].size()) {
    throw std::invalid_argument("restore_state: moment shape mismatch");
  }
  m_[i] = std::move(m);
  v_[i] = std::move(v);
}

}  // namespace rlfolio
