#include "sosuq/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sosuq/errors.hpp"
#include "sosuq/parallel.hpp"
#include "sosuq/rng.hpp"

namespace sosuq {

namespace {

size_t tri_size(int n) { return static_cast<size_t>(n) * (n + 1) / 2; }

/// Raw optimizer parameterization of the Cholesky blocks: lower-triangular
/// entries row-major, diagonal entries stored as logarithms so any raw value
/// maps to a valid (positive-diagonal) factor.
void blocks_to_raw(const std::vector<std::vector<double>>& blocks, int taps,
                   std::vector<double>& raw) {
  raw.resize(blocks.size() * tri_size(taps));
  size_t k = 0;
  for (const auto& blk : blocks)
    for (int r = 0; r < taps; ++r)
      for (int c = 0; c <= r; ++c) {
        double v = blk[static_cast<size_t>(r * taps + c)];
        raw[k++] = (r == c) ? std::log(v) : v;
      }
}

void raw_to_blocks(const std::vector<double>& raw, int taps,
                   std::vector<std::vector<double>>& blocks) {
  size_t k = 0;
  for (auto& blk : blocks) {
    std::fill(blk.begin(), blk.end(), 0.0);
    for (int r = 0; r < taps; ++r)
      for (int c = 0; c <= r; ++c) {
        double v = raw[k++];
        blk[static_cast<size_t>(r * taps + c)] = (r == c) ? std::exp(v) : v;
      }
  }
}

/// beta * (alpha * tr(DD^T) - 2 tr(log D)) and its gradient in raw space.
double kl_raw(const std::vector<double>& raw, int taps, size_t n_blocks, double alpha,
              double beta, std::vector<double>& grad) {
  double loss = 0.0;
  size_t tri = tri_size(taps);
  for (size_t b = 0; b < n_blocks; ++b) {
    size_t base = b * tri;
    size_t k = 0;
    for (int r = 0; r < taps; ++r)
      for (int c = 0; c <= r; ++c, ++k) {
        double v = raw[base + k];
        if (r == c) {
          double d = std::exp(v);
          loss += alpha * d * d - 2.0 * v;
          grad[base + k] += beta * (2.0 * alpha * d * d - 2.0);
        } else {
          loss += alpha * v * v;
          grad[base + k] += beta * 2.0 * alpha * v;
        }
      }
  }
  return beta * loss;
}

} // namespace

std::string train_mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::vn: return "vn";
    case TrainMode::mcd: return "mcd";
    case TrainMode::bvi: return "bvi";
  }
  return "vn";
}

TrainMode parse_train_mode(const std::string& s) {
  if (s == "vn") return TrainMode::vn;
  if (s == "mcd") return TrainMode::mcd;
  if (s == "bvi") return TrainMode::bvi;
  throw ConfigError("unknown training mode: " + s);
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("train config: " + m); };
  if (tau < 0) fail("tau must be non-negative");
  if (lambda_r < 0) fail("lambda_r must be non-negative");
  if (!(epsilon_smooth > 0)) fail("epsilon_smooth must be positive");
  if (batch_size < 1) fail("batch size must be positive");
  if (iterations < 0) fail("iterations must be non-negative");
  if (!(adam_lr > 0)) fail("learning rate must be positive");
  if (adam_beta1 < 0 || adam_beta1 >= 1 || adam_beta2 < 0 || adam_beta2 >= 1)
    fail("adam betas must lie in [0, 1)");
  if (!(adam_eps > 0)) fail("adam epsilon must be positive");
  if (n_layers < 1 || n_filters < 1 || kernel_size < 1 || n_knots < 2)
    fail("architecture sizes invalid");
  if (!(knot_range > 0) || !(slowness_scale > 0) || !(delay_scale > 0))
    fail("scales must be positive");
  if (!(filter_init_std >= 0)) fail("filter init std must be non-negative");
  if (dropout_p < 0 || dropout_p >= 1) fail("dropout p must lie in [0, 1)");
  if (!(bvi_alpha > 0)) fail("bvi alpha must be positive");
  if (bvi_beta < 0) fail("bvi beta must be non-negative");
  if (!(bvi_d_init_lo > 0) || bvi_d_init_lo > bvi_d_init_hi)
    fail("bvi Cholesky init range invalid");
  if (log_every < 1 || checkpoint_every < 1) fail("logging cadence must be positive");
}

TrainResult train(const std::vector<TrainSample>& data, const ForwardModel& model,
                  const TrainConfig& cfg, TrainMode mode, int threads,
                  const std::function<void(const TrainSnapshot&)>& on_checkpoint,
                  const TrainSnapshot* resume) {
  cfg.validate();
  if (data.empty()) throw ConfigError("train: no samples");

  VnParams params = resume ? resume->params
                           : init_vn_params(model, cfg.n_layers, cfg.n_filters,
                                            cfg.kernel_size, cfg.n_knots, cfg.knot_range,
                                            cfg.slowness_scale, cfg.delay_scale, cfg.seed,
                                            cfg.filter_init_std, cfg.reg_weight_init);
  params.validate_against(model);

  const ParamLayout lay = layout_of(params);
  const int taps = params.kernel_size * params.kernel_size;
  const size_t n_blocks = static_cast<size_t>(params.n_layers) *
                          static_cast<size_t>(params.n_filters);

  // Normalized targets, precomputed once.
  const int n = static_cast<int>(data.size());
  std::vector<std::vector<double>> targets(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    targets[static_cast<size_t>(i)] = normalize_target(params, data[static_cast<size_t>(i)].x_star);

  // Cholesky blocks (bvi only), dense lower-triangular per filter.
  std::vector<std::vector<double>> d_blocks;
  if (mode == TrainMode::bvi) {
    if (resume) {
      resume->posterior.validate();
      d_blocks = resume->posterior.d_blocks;
    } else {
      d_blocks.assign(n_blocks, std::vector<double>(static_cast<size_t>(taps) * taps, 0.0));
      Rng rng(derive_seed(cfg.seed, "init-cholesky"));
      for (auto& blk : d_blocks)
        for (int r = 0; r < taps; ++r)
          blk[static_cast<size_t>(r * taps + r)] = rng.uniform(cfg.bvi_d_init_lo, cfg.bvi_d_init_hi);
    }
  }

  // Optimizer vector: flat network parameters, then (bvi) raw block entries.
  const size_t nraw = mode == TrainMode::bvi ? n_blocks * tri_size(taps) : 0;
  std::vector<double> theta;
  flatten(params, theta);
  if (mode == TrainMode::bvi) {
    std::vector<double> raw;
    blocks_to_raw(d_blocks, taps, raw);
    theta.insert(theta.end(), raw.begin(), raw.end());
  }
  const size_t ntheta = lay.total + nraw;

  std::vector<double> adam_m(ntheta, 0.0), adam_v(ntheta, 0.0);
  int64_t start_iter = 0;
  if (resume) {
    if (resume->mode != mode) throw ConfigError("train: resume snapshot has different mode");
    if (resume->adam_m.size() != ntheta || resume->adam_v.size() != ntheta)
      throw ConfigError("train: resume optimizer state has wrong size");
    adam_m = resume->adam_m;
    adam_v = resume->adam_v;
    start_iter = resume->iteration;
  }

  auto make_snapshot = [&](int64_t iter) {
    TrainSnapshot s;
    s.mode = mode;
    s.iteration = iter;
    s.seed = cfg.seed;
    s.params = params;
    s.params.train_seed = cfg.seed;
    s.params.train_iterations = iter;
    if (mode == TrainMode::bvi) {
      s.posterior.params = s.params;
      s.posterior.block_dim = taps;
      s.posterior.n_blocks = static_cast<int>(n_blocks);
      s.posterior.d_blocks = d_blocks;
    }
    s.adam_m = adam_m;
    s.adam_v = adam_v;
    if (resume) s.config_echo = resume->config_echo;
    return s;
  };

  TrainResult result;
  result.snap = make_snapshot(start_iter);
  TrainSnapshot last_good = result.snap;

  const int B = std::min<int>(cfg.batch_size, n);
  std::vector<std::vector<double>> slot_grads(static_cast<size_t>(B));
  std::vector<double> slot_loss(static_cast<size_t>(B));
  std::vector<double> grad(ntheta);
  std::vector<int> pool(static_cast<size_t>(n));

  for (int64_t it = start_iter; it < cfg.iterations; ++it) {
    // Distinct batch indices by partial Fisher-Yates.
    Rng brng(derive_seed(cfg.seed, "batch", static_cast<uint64_t>(it)));
    std::iota(pool.begin(), pool.end(), 0);
    for (int t = 0; t < B; ++t) {
      int swap_at = t + static_cast<int>(brng.uniform_int(static_cast<uint64_t>(n - t)));
      std::swap(pool[static_cast<size_t>(t)], pool[static_cast<size_t>(swap_at)]);
    }

    // Shared per-iteration posterior draw (bvi).
    std::vector<std::vector<std::vector<double>>> filters_eff;
    std::vector<std::vector<double>> y_blocks;
    if (mode == TrainMode::bvi) {
      Rng yrng(derive_seed(cfg.seed, "bvi-noise", static_cast<uint64_t>(it)));
      y_blocks.assign(n_blocks, std::vector<double>(static_cast<size_t>(taps)));
      for (auto& y : y_blocks)
        for (double& v : y) v = yrng.gaussian();
      filters_eff.assign(static_cast<size_t>(params.n_layers),
                         std::vector<std::vector<double>>(static_cast<size_t>(params.n_filters)));
      for (int k = 0; k < params.n_layers; ++k)
        for (int j = 0; j < params.n_filters; ++j) {
          size_t b = static_cast<size_t>(k) * static_cast<size_t>(params.n_filters) +
                     static_cast<size_t>(j);
          const auto& mu = params.layers[static_cast<size_t>(k)].filters[static_cast<size_t>(j)];
          const auto& y = y_blocks[b];
          const auto& blk = d_blocks[b];
          std::vector<double> f(mu);
          for (int a = 0; a < taps; ++a) {
            double acc = 0.0;
            for (int c = 0; c <= a; ++c)
              acc += blk[static_cast<size_t>(a * taps + c)] * y[static_cast<size_t>(c)];
            f[static_cast<size_t>(a)] += acc;
          }
          filters_eff[static_cast<size_t>(k)][static_cast<size_t>(j)] = std::move(f);
        }
    }

    // Per-slot gradients, reduced in slot order below.
    parallel_for(B, threads, [&](int slot) {
      auto& g = slot_grads[static_cast<size_t>(slot)];
      g.assign(lay.total, 0.0);
      int idx = pool[static_cast<size_t>(slot)];

      VnForwardOptions opts;
      std::vector<std::vector<uint8_t>> m_ana, m_syn;
      if (mode == TrainMode::mcd) {
        uint64_t mask_seed = derive_seed(cfg.seed, "dropout",
                                         static_cast<uint64_t>(it) * static_cast<uint64_t>(B) +
                                             static_cast<uint64_t>(slot));
        draw_dropout_masks(params, cfg.dropout_p, mask_seed, m_ana, m_syn);
        opts.analysis_mask = &m_ana;
        opts.synthesis_mask = &m_syn;
      } else if (mode == TrainMode::bvi) {
        opts.filter_override = &filters_eff;
      }
      slot_loss[static_cast<size_t>(slot)] =
          vn_grad(params, model, data[static_cast<size_t>(idx)].d,
                  targets[static_cast<size_t>(idx)], cfg.tau, opts, g);
    });

    std::fill(grad.begin(), grad.end(), 0.0);
    double data_loss = 0.0;
    for (int slot = 0; slot < B; ++slot) {
      const auto& g = slot_grads[static_cast<size_t>(slot)];
      for (size_t i = 0; i < lay.total; ++i) grad[i] += g[i];
      data_loss += slot_loss[static_cast<size_t>(slot)];
    }
    double invB = 1.0 / B;
    for (size_t i = 0; i < lay.total; ++i) grad[i] *= invB;
    data_loss *= invB;

    std::vector<double> smooth_grad(lay.total, 0.0);
    knot_smoothing_grad(params, cfg.lambda_r, cfg.epsilon_smooth, smooth_grad);
    for (size_t i = 0; i < lay.total; ++i) grad[i] += smooth_grad[i];
    double loss = data_loss + cfg.lambda_r * knot_smoothing(params, cfg.epsilon_smooth);

    if (mode == TrainMode::bvi) {
      // Chain mean-filter gradients through the sampled filters to D.
      size_t tri = tri_size(taps);
      for (int k = 0; k < params.n_layers; ++k) {
        const auto& off = lay.layers[static_cast<size_t>(k)];
        for (int j = 0; j < params.n_filters; ++j) {
          size_t b = static_cast<size_t>(k) * static_cast<size_t>(params.n_filters) +
                     static_cast<size_t>(j);
          const double* fg = grad.data() + off.filters + static_cast<size_t>(j) * static_cast<size_t>(taps);
          const auto& y = y_blocks[b];
          const auto& blk = d_blocks[b];
          double* graw = grad.data() + lay.total + b * tri;
          size_t kk = 0;
          for (int a = 0; a < taps; ++a)
            for (int c = 0; c <= a; ++c, ++kk) {
              double dD = fg[a] * y[static_cast<size_t>(c)];
              if (a == c) dD *= blk[static_cast<size_t>(a * taps + a)];
              graw[kk] += dD;
            }
        }
      }
      std::vector<double> raw(theta.begin() + static_cast<long>(lay.total), theta.end());
      std::vector<double> klgrad_view(nraw, 0.0);
      double kl = kl_raw(raw, taps, n_blocks, cfg.bvi_alpha, cfg.bvi_beta, klgrad_view);
      for (size_t i = 0; i < nraw; ++i) grad[lay.total + i] += klgrad_view[i];
      loss += kl;
    }

    if (!std::isfinite(loss)) {
      result.diverged = true;
      result.snap = last_good;
      result.loss_log.emplace_back(it + 1, loss);
      return result;
    }

    // ADAM step with bias correction.
    int64_t step = it + 1;
    double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(step));
    double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(step));
    for (size_t i = 0; i < ntheta; ++i) {
      adam_m[i] = cfg.adam_beta1 * adam_m[i] + (1.0 - cfg.adam_beta1) * grad[i];
      adam_v[i] = cfg.adam_beta2 * adam_v[i] + (1.0 - cfg.adam_beta2) * grad[i] * grad[i];
      double mhat = adam_m[i] / bc1;
      double vhat = adam_v[i] / bc2;
      theta[i] -= cfg.adam_lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }

    // Write the step back into the structured parameters.
    std::vector<double> flat(theta.begin(), theta.begin() + static_cast<long>(lay.total));
    unflatten(params, flat);
    if (mode == TrainMode::bvi) {
      std::vector<double> raw(theta.begin() + static_cast<long>(lay.total), theta.end());
      raw_to_blocks(raw, taps, d_blocks);
      // Canonicalize the raw diagonal through the block representation
      // (log of exp) so a run resumed from a snapshot, which rebuilds the
      // raw vector from the blocks, continues bit-identically.
      blocks_to_raw(d_blocks, taps, raw);
      std::copy(raw.begin(), raw.end(), theta.begin() + static_cast<long>(lay.total));
    }

    if (step == start_iter + 1 || step % cfg.log_every == 0 || step == cfg.iterations)
      result.loss_log.emplace_back(step, loss);

    if (step % cfg.checkpoint_every == 0 || step == cfg.iterations) {
      last_good = make_snapshot(step);
      if (on_checkpoint) on_checkpoint(last_good);
    }
  }

  result.snap = make_snapshot(cfg.iterations);
  return result;
}

} // namespace sosuq
