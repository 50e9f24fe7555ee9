#include "trajepa/train.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace trajepa {

Adam::Adam(std::vector<Parameter>& params, double beta1, double beta2,
           double eps)
    : params_(&params), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const Parameter& p : params) {
    m_.emplace_back(p.tensor.data().size(), 0.0);
    v_.emplace_back(p.tensor.data().size(), 0.0);
  }
}

void Adam::step(double lr) {
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t pi = 0; pi < params_->size(); ++pi) {
    Tensor& t = (*params_)[pi].tensor;
    if (!t.has_grad()) continue;
    const auto& g = t.grad();
    auto& m = m_[pi];
    auto& v = v_[pi];
    auto& x = t.data();
    for (size_t i = 0; i < x.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      x[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void Adam::zero_grad() {
  for (Parameter& p : *params_) p.tensor.zero_grad();
}

void Adam::restore(std::vector<std::vector<double>> m,
                   std::vector<std::vector<double>> v, int64_t t) {
  if (m.size() != m_.size() || v.size() != v_.size())
    throw_state("Adam::restore: moment count mismatch");
  for (size_t i = 0; i < m.size(); ++i)
    if (m[i].size() != m_[i].size() || v[i].size() != v_[i].size())
      throw_state("Adam::restore: moment shape mismatch");
  m_ = std::move(m);
  v_ = std::move(v);
  t_ = t;
}

uint64_t plan_seed(uint64_t seed, int64_t step, int64_t slot, int level) {
  return derive_seed({seed, static_cast<uint64_t>(step),
                      static_cast<uint64_t>(slot), static_cast<uint64_t>(level)});
}

BatchLoss compute_batch_loss(const std::vector<AbstractionStack>& stacks,
                             const std::vector<std::array<MaskPlan, 3>>& plans,
                             const ModelState& model, const LossParams& lp) {
  if (stacks.empty() || stacks.size() != plans.size())
    throw_shape("compute_batch_loss: stacks/plans mismatch");
  const ModelConfig& cfg = model.cfg;
  int64_t batch = static_cast<int64_t>(stacks.size());
  int top = cfg.levels == 1 ? 0 : 2;

  std::vector<ItemForward> forwards;
  forwards.reserve(stacks.size());
  for (size_t b = 0; b < stacks.size(); ++b)
    forwards.push_back(forward_hierarchy(stacks[b], plans[b], model));

  BatchLoss out;
  out.report.lambda = lp.lambda;
  out.report.mu = lp.mu;
  out.report.nu = lp.nu;
  std::array<Tensor, 3> level_losses;
  std::array<bool, 3> active{false, false, false};

  for (int l = 0; l <= top; ++l) {
    std::vector<Tensor> preds, targets;
    Tensor ctx_rows, tar_rows;
    for (int64_t b = 0; b < batch; ++b) {
      const LevelForward& lf = forwards[static_cast<size_t>(b)].level[static_cast<size_t>(l)];
      for (const Tensor& p : lf.predictions) preds.push_back(p);
      for (const Tensor& t : lf.targets) targets.push_back(t);
      ctx_rows = b == 0 ? lf.ctx_seq : concat_rows(ctx_rows, lf.ctx_seq);
      // only real (non-pad) target positions enter the regularizer
      std::vector<int64_t> real(
          static_cast<size_t>(stacks[static_cast<size_t>(b)].real_len[static_cast<size_t>(l)]));
      std::iota(real.begin(), real.end(), 0);
      Tensor treal = gather_rows(lf.target_seq, real);
      tar_rows = b == 0 ? treal : concat_rows(tar_rows, treal);
    }

    const LevelModel& lm = model.levels[static_cast<size_t>(l)];
    Tensor jepa = jepa_loss(preds, targets, batch, cfg.num_masks, lp.smooth_l1_beta);
    // a lone row has no sample variance; skip regularization in that corner
    auto reg = [&](const Tensor& rows) -> std::pair<Tensor, Tensor> {
      if (rows.dim(0) < 2) return {Tensor::scalar(0.0), Tensor::scalar(0.0)};
      return vicreg(expand_for_vicreg(rows, lm), lp.vicreg_eps);
    };
    auto [var_ctx, cov_ctx] = reg(ctx_rows);
    auto [var_tar, cov_tar] = reg(tar_rows);
    Tensor level_total =
        add(jepa, add(add(var_tar, var_ctx), add(cov_tar, cov_ctx)));

    level_losses[static_cast<size_t>(l)] = level_total;
    active[static_cast<size_t>(l)] = true;
    LevelLossValues& lv = out.report.level[static_cast<size_t>(l)];
    lv.active = true;
    lv.jepa = jepa.value();
    lv.var_tar = var_tar.value();
    lv.var_ctx = var_ctx.value();
    lv.cov_tar = cov_tar.value();
    lv.cov_ctx = cov_ctx.value();
    lv.total_level = level_total.value();
  }

  out.total = total_loss(level_losses, active, lp.lambda, lp.mu, lp.nu);
  out.report.total = out.total.value();
  return out;
}

double lr_at_epoch(double base_lr, int64_t epoch, int64_t halve_every) {
  if (halve_every <= 0) return base_lr;
  return base_lr * std::pow(0.5, static_cast<double>(epoch / halve_every));
}

namespace {

void append_log(const std::string& path, int64_t step, const LossReport& rep) {
  bool fresh = !std::filesystem::exists(path) ||
               std::filesystem::file_size(path) == 0;
  std::ofstream out(path, std::ios::app);
  if (!out) throw_data("cannot append training log: " + path);
  if (fresh) out << "step,level,component,value\n";
  out.precision(17);
  for (int l = 0; l < 3; ++l) {
    const LevelLossValues& lv = rep.level[static_cast<size_t>(l)];
    if (!lv.active) continue;
    int level_no = l + 1;
    out << step << "," << level_no << ",jepa," << lv.jepa << "\n";
    out << step << "," << level_no << ",var_tar," << lv.var_tar << "\n";
    out << step << "," << level_no << ",var_ctx," << lv.var_ctx << "\n";
    out << step << "," << level_no << ",cov_tar," << lv.cov_tar << "\n";
    out << step << "," << level_no << ",cov_ctx," << lv.cov_ctx << "\n";
    out << step << "," << level_no << ",total_level," << lv.total_level << "\n";
  }
  out << step << ",0,total," << rep.total << "\n";
}

}  // namespace

TrainStats train_model(ModelState& model, Adam& opt, const Dataset& data,
                       const EmbeddingTable& table, const HexGridSpec& spec,
                       const TrainOptions& opts) {
  if (data.empty()) throw_data("train: empty dataset");
  if (opts.batch < 1) throw_config("train: batch must be >= 1");
  const ModelConfig& cfg = model.cfg;
  int top = cfg.levels == 1 ? 0 : 2;

  int64_t n = static_cast<int64_t>(data.size());
  int64_t steps_per_epoch = (n + opts.batch - 1) / opts.batch;
  TrainStats stats;

  for (int64_t epoch = opts.start_epoch; epoch < opts.epochs; ++epoch) {
    double lr = lr_at_epoch(opts.lr, epoch, opts.lr_halve_every);
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed({opts.seed, 0x45504f43ULL, static_cast<uint64_t>(epoch)}));
    shuffle_rng.shuffle(order);

    double epoch_total = 0.0, epoch_var = 0.0;
    int64_t epoch_steps = 0;
    for (int64_t bstart = 0; bstart < n; bstart += opts.batch) {
      int64_t step = epoch * steps_per_epoch + bstart / opts.batch;
      int64_t bend = std::min(n, bstart + opts.batch);

      std::vector<const Trajectory*> items;
      for (int64_t i = bstart; i < bend; ++i)
        items.push_back(&data[static_cast<size_t>(order[static_cast<size_t>(i)])]);
      Batch batch = embed_batch(items, table, spec);
      std::vector<AbstractionStack> stacks =
          build_abstractions(batch, model.conv, cfg.conv_activation);

      std::vector<std::array<MaskPlan, 3>> plans(stacks.size());
      for (size_t b = 0; b < stacks.size(); ++b)
        for (int l = 0; l <= top; ++l)
          plans[b][static_cast<size_t>(l)] = sample_mask_plan(
              stacks[b].real_len[static_cast<size_t>(l)], cfg,
              plan_seed(opts.seed, step, static_cast<int64_t>(b), l));

      BatchLoss loss = compute_batch_loss(stacks, plans, model, opts.loss);
      if (!std::isfinite(loss.report.total))
        throw_numeric("train: non-finite loss at step " + std::to_string(step) +
                      " (seed " + std::to_string(opts.seed) + ", epoch " +
                      std::to_string(epoch) + ", batch offset " +
                      std::to_string(bstart) + ")");

      loss.total.backward();
      opt.step(lr);
      opt.zero_grad();
      ema_update(model, opts.ema_tau);

      if (!opts.log_csv.empty()) append_log(opts.log_csv, step, loss.report);
      epoch_total += loss.report.total;
      for (int l = 0; l <= top; ++l)
        epoch_var += loss.report.level[static_cast<size_t>(l)].var_tar +
                     loss.report.level[static_cast<size_t>(l)].var_ctx;
      ++epoch_steps;
      ++stats.steps;
    }
    stats.epoch_total.push_back(epoch_total / static_cast<double>(epoch_steps));
    stats.epoch_var_loss.push_back(epoch_var / static_cast<double>(epoch_steps));
    if (opts.on_epoch_end) opts.on_epoch_end(epoch, opts);
  }
  return stats;
}

}  // namespace trajepa
