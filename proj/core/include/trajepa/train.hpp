#pragma once

#include <functional>
#include <string>

#include "trajepa/losses.hpp"
#include "trajepa/model.hpp"

namespace trajepa {

class Adam {
 public:
  Adam(std::vector<Parameter>& params, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);

  void step(double lr);
  void zero_grad();

  int64_t t() const { return t_; }
  const std::vector<std::vector<double>>& m() const { return m_; }
  const std::vector<std::vector<double>>& v() const { return v_; }
  void restore(std::vector<std::vector<double>> m,
               std::vector<std::vector<double>> v, int64_t t);

 private:
  std::vector<Parameter>* params_;
  double beta1_, beta2_, eps_;
  std::vector<std::vector<double>> m_, v_;
  int64_t t_ = 0;
};

struct LossParams {
  double lambda = 0.05;
  double mu = 0.15;
  double nu = 0.8;
  double smooth_l1_beta = 1.0;
  double vicreg_eps = 1e-4;
};

struct BatchLoss {
  Tensor total;
  LossReport report;
};

// One training step's loss graph over per-item forwards: per level, the
// SmoothL1 prediction loss plus variance/covariance regularization of the
// expanded context and target rows.
BatchLoss compute_batch_loss(const std::vector<AbstractionStack>& stacks,
                             const std::vector<std::array<MaskPlan, 3>>& plans,
                             const ModelState& model, const LossParams& lp);

// mask-plan seeding shared by training and tests:
// (global seed, step, batch slot, level)
uint64_t plan_seed(uint64_t seed, int64_t step, int64_t slot, int level);

struct TrainOptions {
  int64_t epochs = 20;
  int64_t batch = 64;
  double lr = 1e-4;
  int64_t lr_halve_every = 5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double ema_tau = 0.996;
  uint64_t seed = 42;
  LossParams loss;
  std::string log_csv;  // appended when non-empty
  int64_t start_epoch = 0;
  std::function<void(int64_t epoch, const TrainOptions&)> on_epoch_end;
};

struct TrainStats {
  std::vector<double> epoch_total;     // mean weighted total per epoch
  std::vector<double> epoch_var_loss;  // mean summed var terms per epoch
  int64_t steps = 0;
};

double lr_at_epoch(double base_lr, int64_t epoch, int64_t halve_every);

TrainStats train_model(ModelState& model, Adam& opt, const Dataset& data,
                       const EmbeddingTable& table, const HexGridSpec& spec,
                       const TrainOptions& opts);

}  // namespace trajepa
