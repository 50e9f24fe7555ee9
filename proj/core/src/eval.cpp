#include "trajepa/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

namespace trajepa {

namespace {

double embedding_distance(const std::vector<double>& a,
                          const std::vector<double>& b, bool cosine) {
  if (a.size() != b.size())
    throw_shape("embedding_distance: width mismatch");
  if (!cosine) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
      double d = a[i] - b[i];
      s += d * d;
    }
    return std::sqrt(s);
  }
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  double denom = std::sqrt(na) * std::sqrt(nb);
  return denom > 0 ? 1.0 - dot / denom : 1.0;
}

// downsampling can shave a short twin below the model's minimum length;
// retry deterministically with derived seeds
Trajectory downsample_keep4(const Trajectory& t, double rate, uint64_t seed) {
  for (uint64_t attempt = 0; attempt < 100; ++attempt) {
    Trajectory d = downsample(t, rate, derive_seed({seed, attempt}));
    if (d.size() >= 4) return d;
  }
  throw_data("downsample: trajectory '" + t.id + "' cannot keep 4 points");
}

// mean 1-based rank of each query's twin within the database slice [0, size)
double mean_twin_rank(const std::vector<std::vector<double>>& query_emb,
                      const std::vector<std::vector<double>>& db_emb,
                      int64_t db_size, bool cosine) {
  double total = 0.0;
  for (size_t qi = 0; qi < query_emb.size(); ++qi) {
    double twin_dist = embedding_distance(query_emb[qi], db_emb[qi], cosine);
    int64_t twin_index = static_cast<int64_t>(qi);
    int64_t rank = 1;
    for (int64_t j = 0; j < db_size; ++j) {
      if (j == twin_index) continue;
      double d = embedding_distance(query_emb[qi], db_emb[static_cast<size_t>(j)],
                                    cosine);
      if (d < twin_dist || (d == twin_dist && j < twin_index)) ++rank;
    }
    total += static_cast<double>(rank);
  }
  return total / static_cast<double>(query_emb.size());
}

}  // namespace

RankReport self_similarity(const Embedder& embed, const Dataset& test_pool,
                           const SelfSimConfig& cfg, const HexGridSpec& spec) {
  if (cfg.query_count < 1) throw_config("self_similarity: query_count must be >= 1");
  if (cfg.db_size < cfg.query_count)
    throw_config("self_similarity: db_size smaller than query count");
  int64_t fill_needed = cfg.db_size - cfg.query_count;
  if (static_cast<int64_t>(test_pool.size()) < cfg.query_count + fill_needed)
    throw_config("self_similarity: test pool of " +
                 std::to_string(test_pool.size()) + " cannot supply " +
                 std::to_string(cfg.query_count) + " queries plus " +
                 std::to_string(fill_needed) + " fillers");
  for (double f : cfg.db_fractions) {
    int64_t sz = std::llround(f * static_cast<double>(cfg.db_size));
    if (sz < cfg.query_count)
      throw_config("self_similarity: db fraction " + std::to_string(f) +
                   " leaves fewer entries than queries");
  }

  // queries split into twins; twins head the database so every fraction
  // keeps them
  std::vector<Trajectory> queries, database;
  for (int64_t i = 0; i < cfg.query_count; ++i) {
    auto [qa, qb] = odd_even_split(test_pool[static_cast<size_t>(i)]);
    queries.push_back(std::move(qa));
    database.push_back(std::move(qb));
  }
  for (int64_t i = 0; i < fill_needed; ++i)
    database.push_back(test_pool[static_cast<size_t>(cfg.query_count + i)]);

  RankReport report;

  // base embeddings (no augmentation)
  std::vector<std::vector<double>> query_emb, db_emb;
  query_emb.reserve(queries.size());
  db_emb.reserve(database.size());
  for (const auto& q : queries) query_emb.push_back(embed(q));
  for (const auto& t : database) db_emb.push_back(embed(t));

  for (double f : cfg.db_fractions) {
    int64_t sz = std::llround(f * static_cast<double>(cfg.db_size));
    report.cells.push_back({"db_size", f,
                            mean_twin_rank(query_emb, db_emb, sz, cfg.cosine),
                            cfg.query_count});
  }

  auto augmented_cell = [&](const std::string& variant, double rate) {
    std::vector<std::vector<double>> qe, de;
    qe.reserve(queries.size());
    de.reserve(database.size());
    for (size_t i = 0; i < queries.size(); ++i) {
      uint64_t s = derive_seed({cfg.seed, 0x51554552ULL, static_cast<uint64_t>(i)});
      if (variant == "downsample")
        qe.push_back(embed(downsample_keep4(queries[i], rate, s)));
      else
        qe.push_back(embed(distort(queries[i], rate, cfg.distort_std_m, spec, s)));
    }
    for (size_t i = 0; i < database.size(); ++i) {
      uint64_t s = derive_seed({cfg.seed, 0x44424153ULL, static_cast<uint64_t>(i)});
      if (variant == "downsample")
        de.push_back(embed(downsample_keep4(database[i], rate, s)));
      else
        de.push_back(embed(distort(database[i], rate, cfg.distort_std_m, spec, s)));
    }
    report.cells.push_back({variant, rate,
                            mean_twin_rank(qe, de, cfg.db_size, cfg.cosine),
                            cfg.query_count});
  };

  for (double rate : cfg.rho_s_grid) augmented_cell("downsample", rate);
  for (double rate : cfg.rho_d_grid) augmented_cell("distort", rate);
  return report;
}

void save_rank_report_csv(const RankReport& rep, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw_data("cannot write rank report: " + path);
  out << "variant,grid_value,mean_rank,count\n";
  out.precision(17);
  for (const RankCell& c : rep.cells)
    out << c.variant << "," << c.grid_value << "," << c.mean_rank << ","
        << c.count << "\n";
}

void save_rank_report_summary(const RankReport& rep, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw_data("cannot write summary: " + path);
  auto row = [&](const std::string& variant, const std::string& label) {
    out << label;
    for (const RankCell& c : rep.cells)
      if (c.variant == variant) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "  %6.2f->%-9.3f", c.grid_value,
                      c.mean_rank);
        out << buf;
      }
    out << "\n";
  };
  out << "mean rank by variant (grid value -> mean rank)\n";
  row("db_size", "|D|       ");
  row("downsample", "rho_s     ");
  row("distort", "rho_d     ");
}

double hr_at_k(const std::vector<int64_t>& pred_ranking,
               const std::vector<int64_t>& true_ranking, int64_t k) {
  if (pred_ranking.size() != true_ranking.size())
    throw_data("hr_at_k: rankings cover different candidate counts");
  if (static_cast<int64_t>(pred_ranking.size()) < k)
    throw_data("hr_at_k: ranking shorter than k");
  std::vector<int64_t> ps(pred_ranking.begin(), pred_ranking.end());
  std::vector<int64_t> ts(true_ranking.begin(), true_ranking.end());
  std::sort(ps.begin(), ps.end());
  std::sort(ts.begin(), ts.end());
  if (ps != ts) throw_data("hr_at_k: rankings cover different candidates");

  std::set<int64_t> top_pred(pred_ranking.begin(), pred_ranking.begin() + k);
  int64_t hits = 0;
  for (int64_t i = 0; i < k; ++i)
    hits += top_pred.count(true_ranking[static_cast<size_t>(i)]) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(k);
}

double r5_at_20(const std::vector<int64_t>& pred_ranking,
                const std::vector<int64_t>& true_ranking) {
  if (pred_ranking.size() != true_ranking.size() || pred_ranking.size() < 20)
    throw_data("r5_at_20: rankings must cover >= 20 shared candidates");
  std::set<int64_t> top20_pred(pred_ranking.begin(), pred_ranking.begin() + 20);
  int64_t hits = 0;
  for (int64_t i = 0; i < 5; ++i)
    hits += top20_pred.count(true_ranking[static_cast<size_t>(i)]) ? 1 : 0;
  return static_cast<double>(hits) / 5.0;
}

std::vector<Parameter> PairDecoder::params() {
  return {{"decoder.w1", w1}, {"decoder.b1", b1},
          {"decoder.w2", w2}, {"decoder.b2", b2}};
}

std::vector<double> PairDecoder::features(const std::vector<double>& ea,
                                          const std::vector<double>& eb) const {
  size_t d = ea.size();
  std::vector<double> feat(2 * d);
  for (size_t i = 0; i < d; ++i) {
    feat[i] = std::abs(ea[i] - eb[i]);
    feat[d + i] = ea[i] * eb[i];
  }
  if (!feat_mean.empty())
    for (size_t i = 0; i < feat.size(); ++i)
      feat[i] = (feat[i] - feat_mean[i]) / feat_std[i];
  return feat;
}

double PairDecoder::score(const std::vector<double>& ea,
                          const std::vector<double>& eb) const {
  std::vector<double> feat = features(ea, eb);
  int64_t width = static_cast<int64_t>(feat.size());
  Tensor x = Tensor::from({1, width}, std::move(feat));
  NoGradGuard ng;
  Tensor h = gelu(add_rowvec(matmul(x, w1), b1));
  Tensor y = add_rowvec(matmul(h, w2), b2);
  return y.at(0, 0);
}

FinetuneResult finetune_decoder(const std::vector<std::vector<double>>& embeddings,
                                const PairwiseResult& ground_truth,
                                const FinetuneConfig& cfg) {
  int64_t n = static_cast<int64_t>(embeddings.size());
  if (n != ground_truth.count)
    throw_shape("finetune: embeddings and matrix disagree on count");
  if (n < 30) throw_data("finetune: pool too small");
  if (cfg.train_frac <= 0 || cfg.val_frac < 0 ||
      cfg.train_frac + cfg.val_frac >= 1.0)
    throw_config("finetune: bad split fractions");
  int64_t d = static_cast<int64_t>(embeddings[0].size());
  for (const auto& e : embeddings)
    if (static_cast<int64_t>(e.size()) != d)
      throw_shape("finetune: ragged embedding widths");

  // 7:1:2-style split
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(derive_seed({cfg.seed, 0x53504c49ULL}));
  split_rng.shuffle(order);
  int64_t n_train = std::llround(cfg.train_frac * static_cast<double>(n));
  int64_t n_val = std::llround(cfg.val_frac * static_cast<double>(n));
  std::vector<int64_t> train(order.begin(), order.begin() + n_train);
  std::vector<int64_t> val(order.begin() + n_train, order.begin() + n_train + n_val);
  std::vector<int64_t> test(order.begin() + n_train + n_val, order.end());
  if (static_cast<int64_t>(test.size()) < 21)
    throw_config("finetune: test split must keep at least 21 trajectories");

  // min-max normalization fitted on training pairs
  double dmin = 1e300, dmax = -1e300;
  for (size_t i = 0; i < train.size(); ++i)
    for (size_t j = i + 1; j < train.size(); ++j) {
      double v = ground_truth.at(train[i], train[j]);
      dmin = std::min(dmin, v);
      dmax = std::max(dmax, v);
    }
  double scale = dmax > dmin ? 1.0 / (dmax - dmin) : 0.0;
  auto norm_target = [&](double v) { return (v - dmin) * scale; };

  // decoder 2d -> d -> 1
  Rng init_rng(derive_seed({cfg.seed, 0x4445434fULL}));
  auto glorot = [&](int64_t in, int64_t out) {
    double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::vector<double> w(static_cast<size_t>(in * out));
    for (auto& v : w) v = init_rng.uniform(-limit, limit);
    return Tensor::from({in, out}, std::move(w), true);
  };
  FinetuneResult result;
  result.decoder.w1 = glorot(2 * d, d);
  result.decoder.b1 = Tensor::zeros({d}, true);
  result.decoder.w2 = glorot(d, 1);
  result.decoder.b2 = Tensor::zeros({1}, true);
  std::vector<Parameter> params = result.decoder.params();
  Adam opt(params);

  // fit feature standardization on sampled training pairs
  {
    Rng stat_rng(derive_seed({cfg.seed, 0x53544154ULL}));
    int64_t samples = std::min<int64_t>(
        20000, static_cast<int64_t>(train.size()) *
                   (static_cast<int64_t>(train.size()) - 1) / 2);
    samples = std::max<int64_t>(samples, 1);
    std::vector<double> mean(static_cast<size_t>(2 * d), 0.0);
    std::vector<double> sq(static_cast<size_t>(2 * d), 0.0);
    for (int64_t s = 0; s < samples; ++s) {
      int64_t a = train[stat_rng.uniform_int(train.size())];
      int64_t b = train[stat_rng.uniform_int(train.size())];
      while (b == a) b = train[stat_rng.uniform_int(train.size())];
      const auto& ea = embeddings[static_cast<size_t>(a)];
      const auto& eb = embeddings[static_cast<size_t>(b)];
      for (int64_t i = 0; i < d; ++i) {
        double fd = std::abs(ea[static_cast<size_t>(i)] - eb[static_cast<size_t>(i)]);
        double fp = ea[static_cast<size_t>(i)] * eb[static_cast<size_t>(i)];
        mean[static_cast<size_t>(i)] += fd;
        mean[static_cast<size_t>(d + i)] += fp;
        sq[static_cast<size_t>(i)] += fd * fd;
        sq[static_cast<size_t>(d + i)] += fp * fp;
      }
    }
    result.decoder.feat_mean.resize(static_cast<size_t>(2 * d));
    result.decoder.feat_std.resize(static_cast<size_t>(2 * d));
    for (int64_t i = 0; i < 2 * d; ++i) {
      double m = mean[static_cast<size_t>(i)] / static_cast<double>(samples);
      double v = sq[static_cast<size_t>(i)] / static_cast<double>(samples) - m * m;
      result.decoder.feat_mean[static_cast<size_t>(i)] = m;
      result.decoder.feat_std[static_cast<size_t>(i)] =
          std::max(std::sqrt(std::max(v, 0.0)), 1e-8);
    }
  }

  auto pair_features = [&](int64_t a, int64_t b, std::vector<double>& dst) {
    std::vector<double> f = result.decoder.features(
        embeddings[static_cast<size_t>(a)], embeddings[static_cast<size_t>(b)]);
    dst.insert(dst.end(), f.begin(), f.end());
  };

  Rng pair_rng(derive_seed({cfg.seed, 0x50414952ULL}));
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int64_t step = 0; step < cfg.steps_per_epoch; ++step) {
      std::vector<double> feats;
      std::vector<double> targets;
      feats.reserve(static_cast<size_t>(cfg.pair_batch * 2 * d));
      for (int64_t k = 0; k < cfg.pair_batch; ++k) {
        int64_t a = train[pair_rng.uniform_int(train.size())];
        int64_t b = train[pair_rng.uniform_int(train.size())];
        while (b == a) b = train[pair_rng.uniform_int(train.size())];
        pair_features(a, b, feats);
        targets.push_back(norm_target(ground_truth.at(a, b)));
      }
      Tensor x = Tensor::from({cfg.pair_batch, 2 * d}, std::move(feats));
      Tensor y = Tensor::from({cfg.pair_batch, 1}, std::move(targets));
      Tensor h = gelu(add_rowvec(matmul(x, result.decoder.w1), result.decoder.b1));
      Tensor pred = add_rowvec(matmul(h, result.decoder.w2), result.decoder.b2);
      Tensor diff = sub(pred, y);
      Tensor loss = mean_all(mul(diff, diff));
      loss.backward();
      opt.step(cfg.lr);
      opt.zero_grad();
    }
  }

  // validation MSE over all validation pairs
  if (val.size() >= 2) {
    double se = 0.0;
    int64_t cnt = 0;
    for (size_t i = 0; i < val.size(); ++i)
      for (size_t j = i + 1; j < val.size(); ++j) {
        double p = result.decoder.score(embeddings[static_cast<size_t>(val[i])],
                                        embeddings[static_cast<size_t>(val[j])]);
        double t = norm_target(ground_truth.at(val[i], val[j]));
        se += (p - t) * (p - t);
        ++cnt;
      }
    result.metrics.val_mse = se / static_cast<double>(cnt);
  }

  // rankings over the test split
  double hr5 = 0, hr20 = 0, r520 = 0;
  for (size_t qi = 0; qi < test.size(); ++qi) {
    std::vector<int64_t> cands;
    for (size_t j = 0; j < test.size(); ++j)
      if (j != qi) cands.push_back(test[j]);

    std::vector<std::pair<double, int64_t>> pred, truth;
    for (int64_t c : cands) {
      pred.emplace_back(result.decoder.score(embeddings[static_cast<size_t>(test[qi])],
                                             embeddings[static_cast<size_t>(c)]),
                        c);
      truth.emplace_back(ground_truth.at(test[qi], c), c);
    }
    auto by_dist = [](const std::pair<double, int64_t>& a,
                      const std::pair<double, int64_t>& b) {
      if (a.first != b.first) return a.first < b.first;
      return a.second < b.second;
    };
    std::sort(pred.begin(), pred.end(), by_dist);
    std::sort(truth.begin(), truth.end(), by_dist);
    std::vector<int64_t> pred_rank, true_rank;
    for (auto& [dv, c] : pred) pred_rank.push_back(c);
    for (auto& [dv, c] : truth) true_rank.push_back(c);
    hr5 += hr_at_k(pred_rank, true_rank, 5);
    hr20 += hr_at_k(pred_rank, true_rank, 20);
    r520 += r5_at_20(pred_rank, true_rank);
  }
  double q = static_cast<double>(test.size());
  result.metrics.hr5 = hr5 / q;
  result.metrics.hr20 = hr20 / q;
  result.metrics.r5_20 = r520 / q;
  result.metrics.test_count = static_cast<int64_t>(test.size());
  return result;
}

}  // namespace trajepa
