#include "trajepa/losses.hpp"

namespace trajepa {

Tensor jepa_loss(const std::vector<Tensor>& preds,
                 const std::vector<Tensor>& targets, int64_t batch,
                 int64_t num_masks, double beta) {
  if (preds.size() != targets.size())
    throw_shape("jepa_loss: prediction/target count mismatch");
  if (static_cast<int64_t>(preds.size()) != batch * num_masks)
    throw_shape("jepa_loss: expected batch*num_masks pairs");
  Tensor acc = Tensor::scalar(0.0);
  for (size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].shape() != targets[i].shape())
      throw_shape("jepa_loss: prediction/target shape mismatch at pair " +
                  std::to_string(i));
    acc = add(acc, sum_all(smooth_l1(preds[i], targets[i], beta)));
  }
  return mul_scalar(acc, 1.0 / static_cast<double>(batch * num_masks));
}

std::pair<Tensor, Tensor> vicreg(const Tensor& z, double eps) {
  if (z.rank() != 2) throw_shape("vicreg: expected [samples x dim]");
  int64_t n = z.dim(0), d = z.dim(1);
  if (n < 2) throw_shape("vicreg: needs at least 2 samples");
  if (eps <= 0.0) throw_config("vicreg: eps must be > 0");

  Tensor ones_row = Tensor::full({1, n}, 1.0 / static_cast<double>(n));
  Tensor mean = matmul(ones_row, z);                       // [1 x d]
  Tensor centered = add_rowvec(z, mul_scalar(mean, -1.0));  // broadcast subtract

  // unbiased per-dimension variance
  Tensor sumsq = matmul(Tensor::full({1, n}, 1.0), mul(centered, centered));
  Tensor var = mul_scalar(sumsq, 1.0 / static_cast<double>(n - 1));
  Tensor hinge = relu(add_scalar(mul_scalar(sqrt_elem(add_scalar(var, eps)), -1.0), 1.0));
  Tensor var_loss = mean_all(hinge);

  Tensor cov = mul_scalar(matmul(transpose(centered), centered),
                          1.0 / static_cast<double>(n - 1));
  std::vector<double> offdiag(static_cast<size_t>(d * d), 1.0);
  for (int64_t i = 0; i < d; ++i) offdiag[static_cast<size_t>(i * d + i)] = 0.0;
  Tensor cov_sq = mul(cov, cov);
  Tensor masked = mul(cov_sq, Tensor::from({d, d}, std::move(offdiag)));
  Tensor cov_loss = mul_scalar(sum_all(masked), 1.0 / static_cast<double>(d));
  return {var_loss, cov_loss};
}

Tensor expand_for_vicreg(const Tensor& rows, const LevelModel& lm) {
  return gelu(add_rowvec(matmul(rows, lm.expander_w), lm.expander_b));
}

Tensor total_loss(const std::array<Tensor, 3>& level_losses,
                  const std::array<bool, 3>& active, double lambda, double mu,
                  double nu) {
  if (lambda < 0.0 || mu < 0.0 || nu < 0.0)
    throw_config("total_loss: level weights must be >= 0");
  const double weights[3] = {lambda, mu, nu};
  Tensor total = Tensor::scalar(0.0);
  for (int l = 0; l < 3; ++l) {
    if (!active[static_cast<size_t>(l)]) continue;
    total = add(total, mul_scalar(level_losses[static_cast<size_t>(l)],
                                  weights[l]));
  }
  return total;
}

}  // namespace trajepa
