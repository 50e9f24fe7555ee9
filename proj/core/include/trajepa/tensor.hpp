#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "trajepa/error.hpp"

namespace trajepa {

// Reverse-mode autodiff over dense 64-bit float tensors. The graph is
// rebuilt on every forward pass; backward() walks it once in reverse
// topological order. Single-threaded within a graph; distinct graphs are
// independent.

struct TensorImpl {
  std::vector<int64_t> shape;
  std::vector<double> data;
  std::vector<double> grad;  // sized lazily, same length as data
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl&)> backfn;  // pushes grad into parents

  int64_t numel() const {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
  }
  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

// Gradient tracking is on by default; the target branch and inference run
// under NoGradGuard.
bool grad_enabled();

struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int64_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<int64_t> shape, double value,
                     bool requires_grad = false);
  static Tensor from(std::vector<int64_t> shape, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int64_t>& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int64_t dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return impl_->numel(); }

  std::vector<double>& data() { return impl_->data; }
  const std::vector<double>& data() const { return impl_->data; }

  double value() const;                 // scalar tensors only
  double at(int64_t i) const { return impl_->data[static_cast<size_t>(i)]; }
  double at(int64_t i, int64_t j) const {
    return impl_->data[static_cast<size_t>(i * impl_->shape[1] + j)];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  bool has_grad() const { return !impl_->grad.empty(); }
  const std::vector<double>& grad() const;
  void zero_grad();

  // Backpropagate from this scalar node; every reachable node is visited
  // exactly once.
  void backward();

  // Same data, cut off from the graph and from gradient tracking.
  Tensor detached() const;

  std::shared_ptr<TensorImpl> impl() const { return impl_; }
  static Tensor wrap(std::shared_ptr<TensorImpl> impl) {
    Tensor t;
    t.impl_ = std::move(impl);
    return t;
  }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// A named trainable tensor; names are path-like and used as checkpoint keys.
struct Parameter {
  std::string name;
  Tensor tensor;
};

// ---- elementwise / scalar ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
Tensor scale_by(const Tensor& a, const Tensor& s);  // s is a 0-d tensor
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor sqrt_elem(const Tensor& a);
Tensor clamp01(const Tensor& a);
Tensor max_scalar(const Tensor& a, double c);

// ---- 2-D linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// ---- row-structured ops over [n x c] ----
Tensor softmax_rows(const Tensor& a);
// col_mask[j] == 0 excludes column j: excluded entries are exactly 0, rows
// renormalize over the kept columns.
Tensor masked_softmax_rows(const Tensor& a, const std::vector<uint8_t>& col_mask);
Tensor add_rowvec(const Tensor& a, const Tensor& v);  // v: [c]
Tensor mul_colmask(const Tensor& a, const std::vector<uint8_t>& col_mask);
Tensor row_sums(const Tensor& a);                 // -> [n]
Tensor div_rows(const Tensor& a, const Tensor& d);  // row i divided by d[i]
Tensor gather_rows(const Tensor& a, const std::vector<int64_t>& idx);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, int64_t begin, int64_t end);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

// ---- sequence ops ----
// x: [n x c_in], w: [k x c_in x c_out] (k odd), b: [c_out]; same zero padding.
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b);
// window 2, stride 2, floor length; ties route gradient to the first index.
Tensor maxpool1d(const Tensor& x);
// transposed conv along rows, kernel 2 stride 2: out[2i+t][j] = w[t]*x[i][j] + b.
Tensor upsample2_rows(const Tensor& x, const Tensor& w, const Tensor& b);
// square maps only: the row upsampling applied along both axes sequentially,
// [n x n] -> [2n x 2n].
Tensor deconv2x_square(const Tensor& a, const Tensor& w, const Tensor& b);

// ---- reductions / losses ----
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor smooth_l1(const Tensor& x, const Tensor& y, double beta);

}  // namespace trajepa
