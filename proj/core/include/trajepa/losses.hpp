#pragma once

#include <array>
#include <vector>

#include "trajepa/model.hpp"
#include "trajepa/tensor.hpp"

namespace trajepa {

struct LevelLossValues {
  double jepa = 0.0;
  double var_tar = 0.0;
  double var_ctx = 0.0;
  double cov_tar = 0.0;
  double cov_ctx = 0.0;
  double total_level = 0.0;
  bool active = false;
};

struct LossReport {
  std::array<LevelLossValues, 3> level;
  double total = 0.0;
  double lambda = 0.0, mu = 0.0, nu = 0.0;
};

// SmoothL1 summed over sequence and channel axes, averaged over batch and
// mask count: preds/targets hold batch*num_masks per-mask tensors.
Tensor jepa_loss(const std::vector<Tensor>& preds,
                 const std::vector<Tensor>& targets, int64_t batch,
                 int64_t num_masks, double beta);

// Variance hinge at unit std plus off-diagonal covariance penalty on the
// centered sample matrix z [samples x dim].
std::pair<Tensor, Tensor> vicreg(const Tensor& z, double eps = 1e-4);

// single hidden layer expander used before the regularizer
Tensor expand_for_vicreg(const Tensor& rows, const LevelModel& lm);

Tensor total_loss(const std::array<Tensor, 3>& level_losses,
                  const std::array<bool, 3>& active, double lambda, double mu,
                  double nu);

}  // namespace trajepa
