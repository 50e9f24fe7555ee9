#include "trajepa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace trajepa {

namespace {

thread_local bool g_grad_enabled = true;

std::string shape_str(const std::vector<int64_t>& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

std::shared_ptr<TensorImpl> make_impl(std::vector<int64_t> shape,
                                      std::vector<double> data) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return impl;
}

// Attach graph metadata when tracking is on and any parent is tracked.
Tensor make_result(std::vector<int64_t> shape, std::vector<double> data,
                   std::vector<std::shared_ptr<TensorImpl>> parents,
                   std::function<void(TensorImpl&)> backfn) {
  auto impl = make_impl(std::move(shape), std::move(data));
  if (g_grad_enabled) {
    bool tracked = false;
    for (const auto& p : parents)
      if (p && p->requires_grad) tracked = true;
    if (tracked) {
      impl->requires_grad = true;
      impl->parents = std::move(parents);
      impl->backfn = std::move(backfn);
    }
  }
  return Tensor::wrap(impl);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw_shape(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                " vs " + shape_str(b.shape()));
}

void check_2d(const Tensor& a, const char* op) {
  if (a.rank() != 2)
    throw_shape(std::string(op) + ": expected 2-D tensor, got " +
                shape_str(a.shape()));
}

void accum(TensorImpl& dst, const std::vector<double>& g) {
  dst.ensure_grad();
  for (size_t i = 0; i < g.size(); ++i) dst.grad[i] += g[i];
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Tensor Tensor::zeros(std::vector<int64_t> shape, bool requires_grad) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  auto impl = make_impl(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0));
  impl->requires_grad = requires_grad;
  return wrap(impl);
}

Tensor Tensor::full(std::vector<int64_t> shape, double value, bool requires_grad) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  auto impl = make_impl(std::move(shape), std::vector<double>(static_cast<size_t>(n), value));
  impl->requires_grad = requires_grad;
  return wrap(impl);
}

Tensor Tensor::from(std::vector<int64_t> shape, std::vector<double> data,
                    bool requires_grad) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  if (n != static_cast<int64_t>(data.size()))
    throw_shape("Tensor::from: " + shape_str(shape) + " needs " +
                std::to_string(n) + " values, got " + std::to_string(data.size()));
  auto impl = make_impl(std::move(shape), std::move(data));
  impl->requires_grad = requires_grad;
  return wrap(impl);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

double Tensor::value() const {
  if (numel() != 1) throw_shape("value(): tensor is not a scalar");
  return impl_->data[0];
}

const std::vector<double>& Tensor::grad() const {
  if (impl_->grad.empty()) throw_state("grad(): no gradient accumulated");
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty())
    std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detached() const {
  auto impl = make_impl(impl_->shape, impl_->data);
  return wrap(impl);
}

void Tensor::backward() {
  if (numel() != 1) throw_shape("backward(): root must be a scalar");
  if (!impl_->requires_grad)
    throw_state("backward(): root does not require grad");

  // Iterative post-order DFS; each node enters the order exactly once.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  struct Frame {
    TensorImpl* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({impl_.get(), 0});
  visited.insert(impl_.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      TensorImpl* p = f.node->parents[f.next_parent++].get();
      if (p && p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  impl_->ensure_grad();
  impl_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    if (node->backfn) node->backfn(*node);
  }
}

// ---------------- elementwise ----------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  auto pa = a.impl(), pb = b.impl();
  return make_result(a.shape(), std::move(out), {pa, pb},
                     [pa, pb](TensorImpl& self) {
                       if (pa->requires_grad) accum(*pa, self.grad);
                       if (pb->requires_grad) accum(*pb, self.grad);
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  auto pa = a.impl(), pb = b.impl();
  return make_result(a.shape(), std::move(out), {pa, pb},
                     [pa, pb](TensorImpl& self) {
                       if (pa->requires_grad) accum(*pa, self.grad);
                       if (pb->requires_grad) {
                         pb->ensure_grad();
                         for (size_t i = 0; i < self.grad.size(); ++i)
                           pb->grad[i] -= self.grad[i];
                       }
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto pa = a.impl(), pb = b.impl();
  return make_result(a.shape(), std::move(out), {pa, pb},
                     [pa, pb](TensorImpl& self) {
                       if (pa->requires_grad) {
                         pa->ensure_grad();
                         for (size_t i = 0; i < self.grad.size(); ++i)
                           pa->grad[i] += self.grad[i] * pb->data[i];
                       }
                       if (pb->requires_grad) {
                         pb->ensure_grad();
                         for (size_t i = 0; i < self.grad.size(); ++i)
                           pb->grad[i] += self.grad[i] * pa->data[i];
                       }
                     });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + c;
  auto pa = a.impl();
  return make_result(a.shape(), std::move(out), {pa}, [pa](TensorImpl& self) {
    if (pa->requires_grad) accum(*pa, self.grad);
  });
}

Tensor mul_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
  auto pa = a.impl();
  return make_result(a.shape(), std::move(out), {pa}, [pa, c](TensorImpl& self) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i)
        pa->grad[i] += c * self.grad[i];
    }
  });
}

Tensor scale_by(const Tensor& a, const Tensor& s) {
  if (s.numel() != 1) throw_shape("scale_by: scale must be a scalar tensor");
  double sv = s.data()[0];
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * sv;
  auto pa = a.impl(), ps = s.impl();
  return make_result(a.shape(), std::move(out), {pa, ps},
                     [pa, ps](TensorImpl& self) {
                       double sv2 = ps->data[0];
                       if (pa->requires_grad) {
                         pa->ensure_grad();
                         for (size_t i = 0; i < self.grad.size(); ++i)
                           pa->grad[i] += sv2 * self.grad[i];
                       }
                       if (ps->requires_grad) {
                         ps->ensure_grad();
                         double acc = 0.0;
                         for (size_t i = 0; i < self.grad.size(); ++i)
                           acc += self.grad[i] * pa->data[i];
                         ps->grad[0] += acc;
                       }
                     });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
  auto pa = a.impl();
  return make_result(a.shape(), std::move(out), {pa}, [pa](TensorImpl& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i)
      if (pa->data[i] > 0.0) pa->grad[i] += self.grad[i];
  });
}

Tensor gelu(const Tensor& a) {
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) {
    double x = a.data()[i];
    out[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
  }
  auto pa = a.impl();
  return make_result(a.shape(), std::move(out), {pa}, [pa](TensorImpl& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      double x = pa->data[i];
      double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
      double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
      pa->grad[i] += self.grad[i] * (cdf + x * pdf);
    }
  });
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = 1.0 / (1.0 + std::exp(-a.data()[i]));
  auto pa = a.impl();
  return make_result(a.shape(), std::move(out), {pa}, [pa](TensorImpl& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      double s = self.data[i];
      pa->grad[i] += self.grad[i] * s * (1.0 - s);
    }
  });
}

Tensor sqrt_elem(const Tensor& a) {
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(a.data()[i]);
  auto pa = a.impl();
  return make_result(a.shape(), std::move(out), {pa}, [pa](TensorImpl& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      double y = self.data[i];
      if (y > 0.0) pa->grad[i] += self.grad[i] * 0.5 / y;
    }
  });
}

Tensor clamp01(const Tensor& a) {
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = std::min(1.0, std::max(0.0, a.data()[i]));
  auto pa = a.impl();
  return make_result(a.shape(), std::move(out), {pa}, [pa](TensorImpl& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      double x = pa->data[i];
      if (x >= 0.0 && x <= 1.0) pa->grad[i] += self.grad[i];
    }
  });
}

Tensor max_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::max(a.data()[i], c);
  auto pa = a.impl();
  return make_result(a.shape(), std::move(out), {pa}, [pa, c](TensorImpl& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i)
      if (pa->data[i] >= c) pa->grad[i] += self.grad[i];
  });
}

// ---------------- linear algebra ----------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_2d(a, "matmul");
  check_2d(b, "matmul");
  int64_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw_shape("matmul: inner dimensions disagree " + shape_str(a.shape()) +
                " vs " + shape_str(b.shape()));
  std::vector<double> out(static_cast<size_t>(m * n), 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (int64_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * n;
    const double* arow = A + i * k;
    for (int64_t kk = 0; kk < k; ++kk) {
      double av = arow[kk];
      if (av == 0.0) continue;
      const double* brow = B + kk * n;
      for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  auto pa = a.impl(), pb = b.impl();
  return make_result({m, n}, std::move(out), {pa, pb},
                     [pa, pb, m, k, n](TensorImpl& self) {
                       const double* G = self.grad.data();
                       if (pa->requires_grad) {
                         pa->ensure_grad();
                         // dA = G * B^T
                         for (int64_t i = 0; i < m; ++i)
                           for (int64_t kk = 0; kk < k; ++kk) {
                             double acc = 0.0;
                             const double* grow = G + i * n;
                             const double* brow = pb->data.data() + kk * n;
                             for (int64_t j = 0; j < n; ++j)
                               acc += grow[j] * brow[j];
                             pa->grad[static_cast<size_t>(i * k + kk)] += acc;
                           }
                       }
                       if (pb->requires_grad) {
                         pb->ensure_grad();
                         // dB = A^T * G
                         for (int64_t i = 0; i < m; ++i) {
                           const double* arow = pa->data.data() + i * k;
                           const double* grow = G + i * n;
                           for (int64_t kk = 0; kk < k; ++kk) {
                             double av = arow[kk];
                             if (av == 0.0) continue;
                             double* brow = pb->grad.data() + kk * n;
                             for (int64_t j = 0; j < n; ++j)
                               brow[j] += av * grow[j];
                           }
                         }
                       }
                     });
}

Tensor transpose(const Tensor& a) {
  check_2d(a, "transpose");
  int64_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(static_cast<size_t>(m * n));
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j)
      out[static_cast<size_t>(j * m + i)] = a.at(i, j);
  auto pa = a.impl();
  return make_result({n, m}, std::move(out), {pa}, [pa, m, n](TensorImpl& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j)
        pa->grad[static_cast<size_t>(i * n + j)] +=
            self.grad[static_cast<size_t>(j * m + i)];
  });
}

// ---------------- row-structured ----------------

Tensor masked_softmax_rows(const Tensor& a, const std::vector<uint8_t>& col_mask) {
  check_2d(a, "softmax_rows");
  int64_t m = a.dim(0), n = a.dim(1);
  if (static_cast<int64_t>(col_mask.size()) != n)
    throw_shape("softmax_rows: mask length " + std::to_string(col_mask.size()) +
                " != columns " + std::to_string(n));
  int64_t kept = 0;
  for (uint8_t v : col_mask) kept += v ? 1 : 0;
  if (kept == 0) throw_shape("softmax_rows: all columns masked out");
  std::vector<double> out(static_cast<size_t>(m * n), 0.0);
  for (int64_t i = 0; i < m; ++i) {
    double mx = -1e300;
    for (int64_t j = 0; j < n; ++j) {
      double v = a.at(i, j);
      if (std::isnan(v)) throw_numeric("softmax_rows: NaN input");
      if (col_mask[static_cast<size_t>(j)] && v > mx) mx = v;
    }
    double denom = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      if (!col_mask[static_cast<size_t>(j)]) continue;
      double e = std::exp(a.at(i, j) - mx);
      out[static_cast<size_t>(i * n + j)] = e;
      denom += e;
    }
    for (int64_t j = 0; j < n; ++j)
      if (col_mask[static_cast<size_t>(j)])
        out[static_cast<size_t>(i * n + j)] /= denom;
  }
  auto pa = a.impl();
  auto mask = col_mask;
  return make_result({m, n}, std::move(out), {pa},
                     [pa, m, n, mask](TensorImpl& self) {
                       if (!pa->requires_grad) return;
                       pa->ensure_grad();
                       for (int64_t i = 0; i < m; ++i) {
                         double dot = 0.0;
                         for (int64_t j = 0; j < n; ++j) {
                           if (!mask[static_cast<size_t>(j)]) continue;
                           size_t ix = static_cast<size_t>(i * n + j);
                           dot += self.data[ix] * self.grad[ix];
                         }
                         for (int64_t j = 0; j < n; ++j) {
                           if (!mask[static_cast<size_t>(j)]) continue;
                           size_t ix = static_cast<size_t>(i * n + j);
                           pa->grad[ix] += self.data[ix] * (self.grad[ix] - dot);
                         }
                       }
                     });
}

Tensor softmax_rows(const Tensor& a) {
  check_2d(a, "softmax_rows");
  return masked_softmax_rows(a, std::vector<uint8_t>(static_cast<size_t>(a.dim(1)), 1));
}

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
  check_2d(a, "add_rowvec");
  int64_t m = a.dim(0), n = a.dim(1);
  if (v.numel() != n)
    throw_shape("add_rowvec: vector length " + std::to_string(v.numel()) +
                " != columns " + std::to_string(n));
  std::vector<double> out(a.data());
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j)
      out[static_cast<size_t>(i * n + j)] += v.data()[static_cast<size_t>(j)];
  auto pa = a.impl(), pv = v.impl();
  return make_result(a.shape(), std::move(out), {pa, pv},
                     [pa, pv, m, n](TensorImpl& self) {
                       if (pa->requires_grad) accum(*pa, self.grad);
                       if (pv->requires_grad) {
                         pv->ensure_grad();
                         for (int64_t i = 0; i < m; ++i)
                           for (int64_t j = 0; j < n; ++j)
                             pv->grad[static_cast<size_t>(j)] +=
                                 self.grad[static_cast<size_t>(i * n + j)];
                       }
                     });
}

Tensor mul_colmask(const Tensor& a, const std::vector<uint8_t>& col_mask) {
  check_2d(a, "mul_colmask");
  int64_t m = a.dim(0), n = a.dim(1);
  if (static_cast<int64_t>(col_mask.size()) != n)
    throw_shape("mul_colmask: mask length mismatch");
  std::vector<double> out(a.data());
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j)
      if (!col_mask[static_cast<size_t>(j)]) out[static_cast<size_t>(i * n + j)] = 0.0;
  auto pa = a.impl();
  auto mask = col_mask;
  return make_result(a.shape(), std::move(out), {pa},
                     [pa, m, n, mask](TensorImpl& self) {
                       if (!pa->requires_grad) return;
                       pa->ensure_grad();
                       for (int64_t i = 0; i < m; ++i)
                         for (int64_t j = 0; j < n; ++j)
                           if (mask[static_cast<size_t>(j)])
                             pa->grad[static_cast<size_t>(i * n + j)] +=
                                 self.grad[static_cast<size_t>(i * n + j)];
                     });
}

Tensor row_sums(const Tensor& a) {
  check_2d(a, "row_sums");
  int64_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(static_cast<size_t>(m), 0.0);
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out[static_cast<size_t>(i)] += a.at(i, j);
  auto pa = a.impl();
  return make_result({m}, std::move(out), {pa}, [pa, m, n](TensorImpl& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j)
        pa->grad[static_cast<size_t>(i * n + j)] += self.grad[static_cast<size_t>(i)];
  });
}

Tensor div_rows(const Tensor& a, const Tensor& d) {
  check_2d(a, "div_rows");
  int64_t m = a.dim(0), n = a.dim(1);
  if (d.numel() != m) throw_shape("div_rows: divisor length != rows");
  std::vector<double> out(a.data());
  for (int64_t i = 0; i < m; ++i) {
    double di = d.data()[static_cast<size_t>(i)];
    for (int64_t j = 0; j < n; ++j) out[static_cast<size_t>(i * n + j)] /= di;
  }
  auto pa = a.impl(), pd = d.impl();
  return make_result(a.shape(), std::move(out), {pa, pd},
                     [pa, pd, m, n](TensorImpl& self) {
                       for (int64_t i = 0; i < m; ++i) {
                         double di = pd->data[static_cast<size_t>(i)];
                         if (pa->requires_grad) {
                           pa->ensure_grad();
                           for (int64_t j = 0; j < n; ++j)
                             pa->grad[static_cast<size_t>(i * n + j)] +=
                                 self.grad[static_cast<size_t>(i * n + j)] / di;
                         }
                         if (pd->requires_grad) {
                           pd->ensure_grad();
                           double acc = 0.0;
                           for (int64_t j = 0; j < n; ++j) {
                             size_t ix = static_cast<size_t>(i * n + j);
                             acc += self.grad[ix] * pa->data[ix];
                           }
                           pd->grad[static_cast<size_t>(i)] -= acc / (di * di);
                         }
                       }
                     });
}

Tensor gather_rows(const Tensor& a, const std::vector<int64_t>& idx) {
  check_2d(a, "gather_rows");
  int64_t m = a.dim(0), n = a.dim(1);
  for (int64_t i : idx)
    if (i < 0 || i >= m)
      throw_shape("gather_rows: index " + std::to_string(i) + " out of [0," +
                  std::to_string(m) + ")");
  int64_t k = static_cast<int64_t>(idx.size());
  std::vector<double> out(static_cast<size_t>(k * n));
  for (int64_t r = 0; r < k; ++r)
    std::copy_n(a.data().data() + idx[static_cast<size_t>(r)] * n, n,
                out.data() + r * n);
  auto pa = a.impl();
  auto indices = idx;
  return make_result({k, n}, std::move(out), {pa},
                     [pa, n, indices](TensorImpl& self) {
                       if (!pa->requires_grad) return;
                       pa->ensure_grad();
                       for (size_t r = 0; r < indices.size(); ++r)
                         for (int64_t j = 0; j < n; ++j)
                           pa->grad[static_cast<size_t>(indices[r] * n + j)] +=
                               self.grad[r * static_cast<size_t>(n) + static_cast<size_t>(j)];
                     });
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  check_2d(a, "concat_rows");
  check_2d(b, "concat_rows");
  if (a.dim(1) != b.dim(1)) throw_shape("concat_rows: column count mismatch");
  int64_t ma = a.dim(0), mb = b.dim(0), n = a.dim(1);
  std::vector<double> out;
  out.reserve(static_cast<size_t>((ma + mb) * n));
  out.insert(out.end(), a.data().begin(), a.data().end());
  out.insert(out.end(), b.data().begin(), b.data().end());
  auto pa = a.impl(), pb = b.impl();
  return make_result({ma + mb, n}, std::move(out), {pa, pb},
                     [pa, pb, ma, n](TensorImpl& self) {
                       size_t split = static_cast<size_t>(ma * n);
                       if (pa->requires_grad) {
                         pa->ensure_grad();
                         for (size_t i = 0; i < split; ++i)
                           pa->grad[i] += self.grad[i];
                       }
                       if (pb->requires_grad) {
                         pb->ensure_grad();
                         for (size_t i = split; i < self.grad.size(); ++i)
                           pb->grad[i - split] += self.grad[i];
                       }
                     });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw_shape("concat_cols: empty input");
  int64_t m = parts[0].dim(0);
  int64_t total = 0;
  for (const auto& p : parts) {
    check_2d(p, "concat_cols");
    if (p.dim(0) != m) throw_shape("concat_cols: row count mismatch");
    total += p.dim(1);
  }
  std::vector<double> out(static_cast<size_t>(m * total));
  int64_t off = 0;
  for (const auto& p : parts) {
    int64_t w = p.dim(1);
    for (int64_t i = 0; i < m; ++i)
      std::copy_n(p.data().data() + i * w, w, out.data() + i * total + off);
    off += w;
  }
  std::vector<std::shared_ptr<TensorImpl>> impls;
  std::vector<int64_t> widths;
  for (const auto& p : parts) {
    impls.push_back(p.impl());
    widths.push_back(p.dim(1));
  }
  return make_result({m, total}, std::move(out), impls,
                     [impls, widths, m, total](TensorImpl& self) {
                       int64_t o = 0;
                       for (size_t k = 0; k < impls.size(); ++k) {
                         int64_t w = widths[k];
                         if (impls[k]->requires_grad) {
                           impls[k]->ensure_grad();
                           for (int64_t i = 0; i < m; ++i)
                             for (int64_t j = 0; j < w; ++j)
                               impls[k]->grad[static_cast<size_t>(i * w + j)] +=
                                   self.grad[static_cast<size_t>(i * total + o + j)];
                         }
                         o += w;
                       }
                     });
}

Tensor slice_cols(const Tensor& a, int64_t begin, int64_t end) {
  check_2d(a, "slice_cols");
  int64_t m = a.dim(0), n = a.dim(1);
  if (begin < 0 || end > n || begin >= end)
    throw_shape("slice_cols: bad range [" + std::to_string(begin) + "," +
                std::to_string(end) + ") for " + std::to_string(n) + " columns");
  int64_t w = end - begin;
  std::vector<double> out(static_cast<size_t>(m * w));
  for (int64_t i = 0; i < m; ++i)
    std::copy_n(a.data().data() + i * n + begin, w, out.data() + i * w);
  auto pa = a.impl();
  return make_result({m, w}, std::move(out), {pa},
                     [pa, m, n, begin, w](TensorImpl& self) {
                       if (!pa->requires_grad) return;
                       pa->ensure_grad();
                       for (int64_t i = 0; i < m; ++i)
                         for (int64_t j = 0; j < w; ++j)
                           pa->grad[static_cast<size_t>(i * n + begin + j)] +=
                               self.grad[static_cast<size_t>(i * w + j)];
                     });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  check_2d(x, "layer_norm");
  int64_t m = x.dim(0), n = x.dim(1);
  if (gain.numel() != n || bias.numel() != n)
    throw_shape("layer_norm: gain/bias length != columns");
  std::vector<double> out(static_cast<size_t>(m * n));
  std::vector<double> inv_std(static_cast<size_t>(m));
  std::vector<double> xhat(static_cast<size_t>(m * n));
  for (int64_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (int64_t j = 0; j < n; ++j) mu += x.at(i, j);
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      double d = x.at(i, j) - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(i)] = is;
    for (int64_t j = 0; j < n; ++j) {
      size_t ix = static_cast<size_t>(i * n + j);
      double h = (x.at(i, j) - mu) * is;
      xhat[ix] = h;
      out[ix] = h * gain.data()[static_cast<size_t>(j)] +
                bias.data()[static_cast<size_t>(j)];
    }
  }
  auto px = x.impl(), pg = gain.impl(), pb = bias.impl();
  return make_result(
      x.shape(), std::move(out), {px, pg, pb},
      [px, pg, pb, m, n, inv_std, xhat](TensorImpl& self) {
        for (int64_t i = 0; i < m; ++i) {
          // ghat = g * gain per element; row statistics for dx
          double mean_g = 0.0, mean_gx = 0.0;
          for (int64_t j = 0; j < n; ++j) {
            size_t ix = static_cast<size_t>(i * n + j);
            double gh = self.grad[ix] * pg->data[static_cast<size_t>(j)];
            mean_g += gh;
            mean_gx += gh * xhat[ix];
          }
          mean_g /= static_cast<double>(n);
          mean_gx /= static_cast<double>(n);
          double is = inv_std[static_cast<size_t>(i)];
          if (px->requires_grad) {
            px->ensure_grad();
            for (int64_t j = 0; j < n; ++j) {
              size_t ix = static_cast<size_t>(i * n + j);
              double gh = self.grad[ix] * pg->data[static_cast<size_t>(j)];
              px->grad[ix] += (gh - mean_g - xhat[ix] * mean_gx) * is;
            }
          }
          if (pg->requires_grad) {
            pg->ensure_grad();
            for (int64_t j = 0; j < n; ++j) {
              size_t ix = static_cast<size_t>(i * n + j);
              pg->grad[static_cast<size_t>(j)] += self.grad[ix] * xhat[ix];
            }
          }
          if (pb->requires_grad) {
            pb->ensure_grad();
            for (int64_t j = 0; j < n; ++j)
              pb->grad[static_cast<size_t>(j)] +=
                  self.grad[static_cast<size_t>(i * n + j)];
          }
        }
      });
}

// ---------------- sequence ops ----------------

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b) {
  check_2d(x, "conv1d");
  if (w.rank() != 3) throw_shape("conv1d: kernel must be [k x c_in x c_out]");
  int64_t n = x.dim(0), cin = x.dim(1);
  int64_t k = w.dim(0), wcin = w.dim(1), cout = w.dim(2);
  if (k % 2 == 0) throw_config("conv1d: kernel size must be odd for same padding");
  if (wcin != cin)
    throw_shape("conv1d: kernel c_in " + std::to_string(wcin) +
                " != input channels " + std::to_string(cin));
  if (b.numel() != cout) throw_shape("conv1d: bias length != c_out");
  if (n < 1) throw_shape("conv1d: empty input");
  int64_t half = k / 2;
  std::vector<double> out(static_cast<size_t>(n * cout));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t o = 0; o < cout; ++o) {
      double acc = b.data()[static_cast<size_t>(o)];
      for (int64_t t = 0; t < k; ++t) {
        int64_t src = i + t - half;
        if (src < 0 || src >= n) continue;
        for (int64_t ci = 0; ci < cin; ++ci)
          acc += w.data()[static_cast<size_t>((t * cin + ci) * cout + o)] *
                 x.at(src, ci);
      }
      out[static_cast<size_t>(i * cout + o)] = acc;
    }
  auto px = x.impl(), pw = w.impl(), pb = b.impl();
  return make_result(
      {n, cout}, std::move(out), {px, pw, pb},
      [px, pw, pb, n, cin, k, cout, half](TensorImpl& self) {
        for (int64_t i = 0; i < n; ++i)
          for (int64_t o = 0; o < cout; ++o) {
            double g = self.grad[static_cast<size_t>(i * cout + o)];
            if (g == 0.0) continue;
            if (pb->requires_grad) {
              pb->ensure_grad();
              pb->grad[static_cast<size_t>(o)] += g;
            }
            for (int64_t t = 0; t < k; ++t) {
              int64_t src = i + t - half;
              if (src < 0 || src >= n) continue;
              for (int64_t ci = 0; ci < cin; ++ci) {
                size_t wix = static_cast<size_t>((t * cin + ci) * cout + o);
                size_t xix = static_cast<size_t>(src * cin + ci);
                if (pw->requires_grad) {
                  pw->ensure_grad();
                  pw->grad[wix] += g * px->data[xix];
                }
                if (px->requires_grad) {
                  px->ensure_grad();
                  px->grad[xix] += g * pw->data[wix];
                }
              }
            }
          }
      });
}

Tensor maxpool1d(const Tensor& x) {
  check_2d(x, "maxpool1d");
  int64_t n = x.dim(0), c = x.dim(1);
  if (n < 2) throw_shape("maxpool1d: length " + std::to_string(n) + " < 2");
  int64_t m = n / 2;
  std::vector<double> out(static_cast<size_t>(m * c));
  for (int64_t j = 0; j < m; ++j)
    for (int64_t ci = 0; ci < c; ++ci) {
      double a = x.at(2 * j, ci), bv = x.at(2 * j + 1, ci);
      out[static_cast<size_t>(j * c + ci)] = a >= bv ? a : bv;
    }
  auto px = x.impl();
  return make_result({m, c}, std::move(out), {px}, [px, m, c](TensorImpl& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    int64_t cols = c;
    for (int64_t j = 0; j < m; ++j)
      for (int64_t ci = 0; ci < cols; ++ci) {
        double a = px->data[static_cast<size_t>((2 * j) * cols + ci)];
        double bv = px->data[static_cast<size_t>((2 * j + 1) * cols + ci)];
        int64_t src = a >= bv ? 2 * j : 2 * j + 1;  // first index wins ties
        px->grad[static_cast<size_t>(src * cols + ci)] +=
            self.grad[static_cast<size_t>(j * cols + ci)];
      }
  });
}

Tensor upsample2_rows(const Tensor& x, const Tensor& w, const Tensor& b) {
  check_2d(x, "upsample2_rows");
  if (w.numel() != 2) throw_shape("upsample2_rows: kernel must have 2 taps");
  if (b.numel() != 1) throw_shape("upsample2_rows: bias must be a scalar");
  int64_t m = x.dim(0), n = x.dim(1);
  std::vector<double> out(static_cast<size_t>(2 * m * n));
  double w0 = w.data()[0], w1 = w.data()[1], bv = b.data()[0];
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      double v = x.at(i, j);
      out[static_cast<size_t>((2 * i) * n + j)] = w0 * v + bv;
      out[static_cast<size_t>((2 * i + 1) * n + j)] = w1 * v + bv;
    }
  auto px = x.impl(), pw = w.impl(), pb = b.impl();
  return make_result(
      {2 * m, n}, std::move(out), {px, pw, pb},
      [px, pw, pb, m, n](TensorImpl& self) {
        double w0 = pw->data[0], w1 = pw->data[1];
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < n; ++j) {
            double g0 = self.grad[static_cast<size_t>((2 * i) * n + j)];
            double g1 = self.grad[static_cast<size_t>((2 * i + 1) * n + j)];
            if (px->requires_grad) {
              px->ensure_grad();
              px->grad[static_cast<size_t>(i * n + j)] += w0 * g0 + w1 * g1;
            }
            if (pw->requires_grad) {
              pw->ensure_grad();
              double xv = px->data[static_cast<size_t>(i * n + j)];
              pw->grad[0] += xv * g0;
              pw->grad[1] += xv * g1;
            }
            if (pb->requires_grad) {
              pb->ensure_grad();
              pb->grad[0] += g0 + g1;
            }
          }
      });
}

Tensor deconv2x_square(const Tensor& a, const Tensor& w, const Tensor& b) {
  check_2d(a, "deconv2x_square");
  if (a.dim(0) != a.dim(1))
    throw_shape("deconv2x_square: input must be square, got " +
                shape_str(a.shape()));
  Tensor rows = upsample2_rows(a, w, b);
  return transpose(upsample2_rows(transpose(rows), w, b));
}

// ---------------- reductions / losses ----------------

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  auto pa = a.impl();
  return make_result({}, {s}, {pa}, [pa](TensorImpl& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    double g = self.grad[0];
    for (size_t i = 0; i < pa->grad.size(); ++i) pa->grad[i] += g;
  });
}

Tensor mean_all(const Tensor& a) {
  return mul_scalar(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor smooth_l1(const Tensor& x, const Tensor& y, double beta) {
  if (beta <= 0.0) throw_config("smooth_l1: beta must be > 0");
  check_same_shape(x, y, "smooth_l1");
  std::vector<double> out(x.data().size());
  for (size_t i = 0; i < out.size(); ++i) {
    double d = x.data()[i] - y.data()[i];
    double ad = std::abs(d);
    out[i] = ad < beta ? 0.5 * d * d / beta : ad - 0.5 * beta;
  }
  auto px = x.impl(), py = y.impl();
  return make_result(x.shape(), std::move(out), {px, py},
                     [px, py, beta](TensorImpl& self) {
                       for (size_t i = 0; i < self.grad.size(); ++i) {
                         double d = px->data[i] - py->data[i];
                         double slope = std::abs(d) < beta
                                            ? d / beta
                                            : (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
                         double g = self.grad[i] * slope;
                         if (px->requires_grad) {
                           px->ensure_grad();
                           px->grad[i] += g;
                         }
                         if (py->requires_grad) {
                           py->ensure_grad();
                           py->grad[i] -= g;
                         }
                       }
                     });
}

}  // namespace trajepa
