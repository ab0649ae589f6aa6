#include "sosuq/uncertainty.hpp"

#include <algorithm>
#include <cmath>

#include "sosuq/errors.hpp"
#include "sosuq/parallel.hpp"
#include "sosuq/rng.hpp"

namespace sosuq {

void draw_dropout_masks(const VnParams& net, double p, uint64_t seed,
                        std::vector<std::vector<uint8_t>>& analysis,
                        std::vector<std::vector<uint8_t>>& synthesis) {
  if (p < 0.0 || p > 1.0) throw ConfigError("dropout: p outside [0, 1]");
  Rng rng(derive_seed(seed, "dropout-mask"));
  analysis.assign(static_cast<size_t>(net.n_layers),
                  std::vector<uint8_t>(static_cast<size_t>(net.n_filters), 1));
  synthesis = analysis;
  for (int k = 0; k < net.n_layers; ++k)
    for (int j = 0; j < net.n_filters; ++j) {
      analysis[static_cast<size_t>(k)][static_cast<size_t>(j)] = rng.bernoulli(1.0 - p) ? 1 : 0;
      synthesis[static_cast<size_t>(k)][static_cast<size_t>(j)] = rng.bernoulli(1.0 - p) ? 1 : 0;
    }
}

SosMap mcd_forward(const VnParams& net, const ForwardModel& model,
                   const MeasurementSet& d, double p, uint64_t mask_seed) {
  std::vector<std::vector<uint8_t>> m_ana, m_syn;
  draw_dropout_masks(net, p, mask_seed, m_ana, m_syn);
  VnForwardOptions opts;
  opts.analysis_mask = &m_ana;
  opts.synthesis_mask = &m_syn;
  return vn_forward(net, model, d, opts);
}

void BviPosterior::validate() const {
  params.validate();
  int taps = params.kernel_size * params.kernel_size;
  if (block_dim != taps) throw ConfigError("bvi posterior: block dim must equal kernel taps");
  if (n_blocks != params.n_layers * params.n_filters)
    throw ConfigError("bvi posterior: block count mismatch");
  if (static_cast<int>(d_blocks.size()) != n_blocks)
    throw ConfigError("bvi posterior: wrong number of blocks");
  for (const auto& blk : d_blocks) {
    if (static_cast<int>(blk.size()) != block_dim * block_dim)
      throw ConfigError("bvi posterior: block size mismatch");
    for (int r = 0; r < block_dim; ++r) {
      if (!(blk[static_cast<size_t>(r * block_dim + r)] > 0.0))
        throw ConfigError("bvi posterior: non-positive Cholesky diagonal");
      for (int c = r + 1; c < block_dim; ++c)
        if (blk[static_cast<size_t>(r * block_dim + c)] != 0.0)
          throw ConfigError("bvi posterior: block must be lower triangular");
    }
  }
}

double bvi_kl(const BviPosterior& post, double alpha) {
  double tr_ddt = 0.0, tr_log = 0.0;
  for (const auto& blk : post.d_blocks) {
    int n = post.block_dim;
    for (int r = 0; r < n; ++r) {
      double diag = blk[static_cast<size_t>(r * n + r)];
      if (!(diag > 0.0)) throw ConfigError("bvi_kl: non-positive Cholesky diagonal");
      tr_log += std::log(diag);
      for (int c = 0; c <= r; ++c) {
        double v = blk[static_cast<size_t>(r * n + c)];
        tr_ddt += v * v;
      }
    }
  }
  return alpha * tr_ddt - 2.0 * tr_log;
}

std::vector<std::vector<std::vector<double>>> bvi_sample_filters(const BviPosterior& post,
                                                                 uint64_t seed) {
  const VnParams& p = post.params;
  int taps = post.block_dim;
  Rng rng(derive_seed(seed, "bvi-noise"));
  std::vector<std::vector<std::vector<double>>> out(
      static_cast<size_t>(p.n_layers),
      std::vector<std::vector<double>>(static_cast<size_t>(p.n_filters)));
  std::vector<double> y(static_cast<size_t>(taps));
  for (int k = 0; k < p.n_layers; ++k)
    for (int j = 0; j < p.n_filters; ++j) {
      for (double& v : y) v = rng.gaussian();
      const auto& mu = p.layers[static_cast<size_t>(k)].filters[static_cast<size_t>(j)];
      const auto& blk = post.d_blocks[static_cast<size_t>(k * p.n_filters + j)];
      std::vector<double> r(mu);
      for (int a = 0; a < taps; ++a) {
        double acc = 0.0;
        for (int b = 0; b <= a; ++b)
          acc += blk[static_cast<size_t>(a * taps + b)] * y[static_cast<size_t>(b)];
        r[static_cast<size_t>(a)] += acc;
      }
      out[static_cast<size_t>(k)][static_cast<size_t>(j)] = std::move(r);
    }
  return out;
}

double bvi_loss(const VnTrajectory& traj, const std::vector<double>& xstar_norm,
                const BviPosterior& post, double tau, double lambda_r,
                double epsilon, double alpha, double beta) {
  return vn_data_loss(traj, xstar_norm, tau) +
         lambda_r * knot_smoothing(post.params, epsilon) + beta * bvi_kl(post, alpha);
}

MeanStd twopass_stats(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw ConfigError("stats: no rows");
  size_t n = rows.size(), m = rows.front().size();
  MeanStd out;
  out.mean.assign(m, 0.0);
  out.deviation.assign(m, 0.0);
  // Neumaier-compensated accumulation keeps both passes order-insensitive
  // at the 1e-10 agreement level.
  std::vector<double> comp(m, 0.0);
  for (const auto& row : rows) {
    if (row.size() != m) throw ConfigError("stats: ragged rows");
    for (size_t i = 0; i < m; ++i) {
      double t = out.mean[i] + row[i];
      if (std::abs(out.mean[i]) >= std::abs(row[i]))
        comp[i] += (out.mean[i] - t) + row[i];
      else
        comp[i] += (row[i] - t) + out.mean[i];
      out.mean[i] = t;
    }
  }
  for (size_t i = 0; i < m; ++i) out.mean[i] = (out.mean[i] + comp[i]) / static_cast<double>(n);
  std::fill(comp.begin(), comp.end(), 0.0);
  for (const auto& row : rows)
    for (size_t i = 0; i < m; ++i) {
      double d = row[i] - out.mean[i];
      comp[i] += d * d;
    }
  for (size_t i = 0; i < m; ++i) out.deviation[i] = std::sqrt(comp[i] / static_cast<double>(n));
  return out;
}

MeanStd welford_stats(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw ConfigError("stats: no rows");
  size_t n = rows.size(), m = rows.front().size();
  MeanStd out;
  out.mean.assign(m, 0.0);
  out.deviation.assign(m, 0.0);
  std::vector<double> m2(m, 0.0);
  size_t count = 0;
  for (const auto& row : rows) {
    if (row.size() != m) throw ConfigError("stats: ragged rows");
    ++count;
    for (size_t i = 0; i < m; ++i) {
      double delta = row[i] - out.mean[i];
      out.mean[i] += delta / static_cast<double>(count);
      m2[i] += delta * (row[i] - out.mean[i]);
    }
  }
  for (size_t i = 0; i < m; ++i) out.deviation[i] = std::sqrt(m2[i] / static_cast<double>(n));
  return out;
}

PosteriorSummary posterior_summary(const std::function<SosMap(uint64_t)>& draw,
                                   int n_samples, uint64_t seed, int threads) {
  if (n_samples < 1) throw ConfigError("posterior_summary: need at least one sample");
  std::vector<std::vector<double>> rows(static_cast<size_t>(n_samples));
  GridSpec grid;
  std::vector<GridSpec> grids(static_cast<size_t>(n_samples));
  parallel_for(n_samples, threads, [&](int i) {
    SosMap c = draw(seed + static_cast<uint64_t>(i));
    grids[static_cast<size_t>(i)] = c.grid;
    rows[static_cast<size_t>(i)] = std::move(c.values);
  });
  grid = grids.front();
  for (const auto& g : grids)
    if (!(g == grid)) throw ConfigError("posterior_summary: draws on different grids");

  MeanStd stats = twopass_stats(rows);
  PosteriorSummary s;
  s.n_samples = n_samples;
  s.mean.grid = grid;
  s.mean.values = std::move(stats.mean);
  s.deviation.grid = grid;
  s.deviation.values = std::move(stats.deviation);
  return s;
}

PosteriorSummary mcd_summary(const VnParams& net, const ForwardModel& model,
                             const MeasurementSet& d, const McdConfig& cfg,
                             int threads) {
  return posterior_summary(
      [&](uint64_t draw_seed) { return mcd_forward(net, model, d, cfg.p, draw_seed); },
      cfg.n_samples, cfg.seed, threads);
}

PosteriorSummary bvi_summary(const BviPosterior& post, const ForwardModel& model,
                             const MeasurementSet& d, int n_samples, uint64_t seed,
                             int threads) {
  post.validate();
  return posterior_summary(
      [&](uint64_t draw_seed) {
        auto filters = bvi_sample_filters(post, draw_seed);
        VnForwardOptions opts;
        opts.filter_override = &filters;
        return vn_forward(post.params, model, d, opts);
      },
      n_samples, seed, threads);
}

} // namespace sosuq
