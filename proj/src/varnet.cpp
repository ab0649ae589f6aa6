#include "sosuq/varnet.hpp"

#include <algorithm>
#include <cmath>

#include "sosuq/errors.hpp"
#include "sosuq/kernels.hpp"
#include "sosuq/rng.hpp"

namespace sosuq {

namespace {

std::vector<double> flip2(const std::vector<double>& ker, int o) {
  std::vector<double> f(ker.size());
  for (int z = 0; z < o; ++z)
    for (int x = 0; x < o; ++x)
      f[static_cast<size_t>((o - 1 - z) * o + (o - 1 - x))] = ker[static_cast<size_t>(z * o + x)];
  return f;
}

double sign(double t) { return (t > 0.0) - (t < 0.0); }

struct LayerTape {
  std::vector<double> u;                // nmeas residuals, u = lscale*Lx - d'
  std::vector<std::vector<double>> q;   // per filter, npix analysis responses
};

/// Forward pass shared by inference and the gradient. When tape != nullptr,
/// per-layer intermediates and all states are stored.
void run_network(const VnParams& p, const ForwardModel& model, const MeasurementSet& d,
                 const VnForwardOptions& opts, std::vector<std::vector<double>>* states,
                 std::vector<LayerTape>* tape, std::vector<double>& x_out) {
  p.validate_against(model);
  const int npix = p.grid.npix();
  const int npts = model.geom.lattice.npix();
  const int nmeas = model.geom.n_meas();
  const int o = p.kernel_size;
  const int a0 = p.anchor();
  const int a1 = o - 1 - a0;
  const double lscale = p.delay_scale / p.slowness_scale;

  if (d.size() != nmeas || !(d.lattice == model.geom.lattice) ||
      d.n_pairs != model.geom.n_pairs())
    throw ConfigError("vn_forward: measurement set does not match geometry");
  auto check_bank = [&](const auto* bank, const char* what) {
    if (!bank) return;
    if (static_cast<int>(bank->size()) != p.n_layers ||
        (!bank->empty() && static_cast<int>(bank->front().size()) != p.n_filters))
      throw ConfigError(std::string("vn_forward: ") + what + " has wrong shape");
  };
  check_bank(opts.analysis_mask, "analysis mask");
  check_bank(opts.synthesis_mask, "synthesis mask");
  check_bank(opts.filter_override, "filter override");

  std::vector<double> dt(d.values.size());
  for (size_t i = 0; i < dt.size(); ++i) dt[i] = p.delay_scale * d.values[i];

  std::vector<double> x(static_cast<size_t>(npix), 0.0);
  std::vector<double> r(static_cast<size_t>(nmeas));
  std::vector<double> b(static_cast<size_t>(nmeas));
  std::vector<double> g(static_cast<size_t>(npix));
  std::vector<double> q_local(static_cast<size_t>(npix));
  std::vector<double> h(static_cast<size_t>(npix));

  if (states) {
    states->clear();
    states->push_back(x);  // x_0
  }
  if (tape) tape->assign(static_cast<size_t>(p.n_layers), {});

  for (int k = 0; k < p.n_layers; ++k) {
    const VnLayerParams& layer = p.layers[static_cast<size_t>(k)];

    // Data step: g = lscale * Lt (s . psi(s . (lscale * L x - d'))).
    model.L.matvec(x.data(), r.data(), false);
    for (int i = 0; i < nmeas; ++i)
      r[static_cast<size_t>(i)] = lscale * r[static_cast<size_t>(i)] - dt[static_cast<size_t>(i)];
    if (tape) (*tape)[static_cast<size_t>(k)].u = r;
    for (int i = 0; i < nmeas; ++i) {
      double s = layer.data_weights[static_cast<size_t>(i % npts)];
      b[static_cast<size_t>(i)] = s * layer.data_activation.eval(s * r[static_cast<size_t>(i)]);
    }
    model.Lt.matvec(b.data(), g.data(), false);
    for (double& v : g) v *= lscale;

    // Regularization step, one filter at a time.
    if (tape)
      (*tape)[static_cast<size_t>(k)].q.assign(static_cast<size_t>(p.n_filters),
                                               std::vector<double>(static_cast<size_t>(npix), 0.0));
    for (int j = 0; j < p.n_filters; ++j) {
      bool ana_on = !opts.analysis_mask || (*opts.analysis_mask)[static_cast<size_t>(k)][static_cast<size_t>(j)];
      bool syn_on = !opts.synthesis_mask || (*opts.synthesis_mask)[static_cast<size_t>(k)][static_cast<size_t>(j)];
      const std::vector<double>& base =
          opts.filter_override ? (*opts.filter_override)[static_cast<size_t>(k)][static_cast<size_t>(j)]
                               : layer.filters[static_cast<size_t>(j)];
      if (static_cast<int>(base.size()) != o * o)
        throw ConfigError("vn_forward: filter size mismatch");

      if (ana_on) {
        kernels::conv2d(x.data(), p.grid.nx, p.grid.nz, base.data(), o, a0, a0,
                        q_local.data(), false);
      } else {
        std::fill(q_local.begin(), q_local.end(), 0.0);
      }
      if (tape) (*tape)[static_cast<size_t>(k)].q[static_cast<size_t>(j)] = q_local;
      if (!syn_on) continue;

      const KnotFunction& phi = layer.reg_activations[static_cast<size_t>(j)];
      const std::vector<double>& w = layer.reg_weights[static_cast<size_t>(j)];
      for (int i = 0; i < npix; ++i)
        h[static_cast<size_t>(i)] = w[static_cast<size_t>(i)] * phi.eval(q_local[static_cast<size_t>(i)]);
      std::vector<double> syn = flip2(base, o);
      kernels::conv2d(h.data(), p.grid.nx, p.grid.nz, syn.data(), o, a1, a1, g.data(), true);
    }

    for (int i = 0; i < npix; ++i) x[static_cast<size_t>(i)] -= g[static_cast<size_t>(i)];
    if (states) states->push_back(x);
  }
  x_out = std::move(x);
}

} // namespace

void VnParams::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("vn params: " + m); };
  if (n_layers < 1) fail("need at least one layer");
  if (n_filters < 1) fail("need at least one filter");
  if (kernel_size < 1) fail("kernel size must be positive");
  if (n_knots < 2) fail("need at least two knots");
  if (!(knot_range > 0)) fail("knot range must be positive");
  if (!(slowness_scale > 0) || !(delay_scale > 0)) fail("scales must be positive");
  if (!(c0 > 0)) fail("background speed must be positive");
  if (static_cast<int>(layers.size()) != n_layers) fail("layer count mismatch");
  size_t npix = static_cast<size_t>(grid.npix());
  size_t taps = static_cast<size_t>(kernel_size) * kernel_size;
  for (const auto& l : layers) {
    if (static_cast<int>(l.filters.size()) != n_filters ||
        static_cast<int>(l.reg_weights.size()) != n_filters ||
        static_cast<int>(l.reg_activations.size()) != n_filters)
      fail("filter bank size mismatch");
    for (const auto& f : l.filters)
      if (f.size() != taps) fail("filter tap count mismatch");
    for (const auto& w : l.reg_weights)
      if (w.size() != npix) fail("regularization weight size mismatch");
    for (const auto& a : l.reg_activations)
      if (a.n_knots() != n_knots) fail("phi knot count mismatch");
    if (l.data_activation.n_knots() != n_knots) fail("psi knot count mismatch");
    if (l.data_weights.empty()) fail("data weights empty");
  }
}

void VnParams::validate_against(const ForwardModel& model) const {
  validate();
  if (!(grid == model.grid)) throw ConfigError("vn params: grid mismatch with model");
  size_t npts = static_cast<size_t>(model.geom.lattice.npix());
  for (const auto& l : layers)
    if (l.data_weights.size() != npts)
      throw ConfigError("vn params: data weight count must match measurement lattice");
}

ParamLayout layout_of(const VnParams& p) {
  ParamLayout lay;
  lay.n_filters = p.n_filters;
  lay.kernel_taps = p.kernel_size * p.kernel_size;
  lay.npix = p.grid.npix();
  lay.n_knots = p.n_knots;
  lay.n_lattice = static_cast<int>(p.layers.empty() ? 0 : p.layers.front().data_weights.size());
  size_t off = 0;
  for (int k = 0; k < p.n_layers; ++k) {
    ParamLayout::Layer L;
    L.filters = off;
    off += static_cast<size_t>(p.n_filters) * static_cast<size_t>(lay.kernel_taps);
    L.reg_weights = off;
    off += static_cast<size_t>(p.n_filters) * static_cast<size_t>(lay.npix);
    L.phi = off;
    off += static_cast<size_t>(p.n_filters) * static_cast<size_t>(lay.n_knots);
    L.data_weights = off;
    off += static_cast<size_t>(lay.n_lattice);
    L.psi = off;
    off += static_cast<size_t>(lay.n_knots);
    lay.layers.push_back(L);
  }
  lay.total = off;
  return lay;
}

ParamLayout::Kind ParamLayout::kind_of(size_t idx) const {
  for (const auto& L : layers) {
    if (idx < L.reg_weights) return Kind::filter;
    if (idx < L.phi) return Kind::reg_weight;
    if (idx < L.data_weights) return Kind::phi;
    if (idx < L.psi) return Kind::data_weight;
    if (idx < L.psi + static_cast<size_t>(n_knots)) return Kind::psi;
  }
  throw ConfigError("param layout: flat index out of range");
}

void flatten(const VnParams& p, std::vector<double>& out) {
  ParamLayout lay = layout_of(p);
  out.resize(lay.total);
  for (int k = 0; k < p.n_layers; ++k) {
    const auto& layer = p.layers[static_cast<size_t>(k)];
    double* dst = out.data() + lay.layers[static_cast<size_t>(k)].filters;
    for (const auto& f : layer.filters) dst = std::copy(f.begin(), f.end(), dst);
    for (const auto& w : layer.reg_weights) dst = std::copy(w.begin(), w.end(), dst);
    for (const auto& a : layer.reg_activations)
      dst = std::copy(a.ordinates().begin(), a.ordinates().end(), dst);
    dst = std::copy(layer.data_weights.begin(), layer.data_weights.end(), dst);
    std::copy(layer.data_activation.ordinates().begin(),
              layer.data_activation.ordinates().end(), dst);
  }
}

void unflatten(VnParams& p, const std::vector<double>& in) {
  ParamLayout lay = layout_of(p);
  if (in.size() != lay.total) throw ConfigError("unflatten: size mismatch");
  for (int k = 0; k < p.n_layers; ++k) {
    auto& layer = p.layers[static_cast<size_t>(k)];
    const double* src = in.data() + lay.layers[static_cast<size_t>(k)].filters;
    for (auto& f : layer.filters) {
      std::copy(src, src + f.size(), f.begin());
      src += f.size();
    }
    for (auto& w : layer.reg_weights) {
      std::copy(src, src + w.size(), w.begin());
      src += w.size();
    }
    for (auto& a : layer.reg_activations) {
      std::copy(src, src + a.ordinates().size(), a.ordinates().begin());
      src += a.ordinates().size();
    }
    std::copy(src, src + layer.data_weights.size(), layer.data_weights.begin());
    src += layer.data_weights.size();
    std::copy(src, src + layer.data_activation.ordinates().size(),
              layer.data_activation.ordinates().begin());
  }
}

std::vector<double> normalize_target(const VnParams& p, const SlownessMap& x_star) {
  if (!(x_star.grid == p.grid)) throw ConfigError("normalize_target: grid mismatch");
  std::vector<double> t(x_star.values.size());
  double x0 = 1.0 / p.c0;
  for (size_t i = 0; i < t.size(); ++i)
    t[i] = p.slowness_scale * (x_star.values[i] - x0);
  return t;
}

SosMap denormalize_state(const VnParams& p, const std::vector<double>& state) {
  SosMap c(p.grid, 0.0);
  if (state.size() != c.values.size())
    throw ConfigError("denormalize_state: size mismatch");
  double x0 = 1.0 / p.c0;
  for (size_t i = 0; i < state.size(); ++i) {
    double slowness = state[i] / p.slowness_scale + x0;
    if (!(slowness > 0))
      throw NumericError("denormalize_state: non-positive slowness");
    c.values[i] = 1.0 / slowness;
  }
  return c;
}

SosMap vn_forward(const VnParams& p, const ForwardModel& model, const MeasurementSet& d,
                  const VnForwardOptions& opts, VnTrajectory* trajectory) {
  std::vector<double> x;
  std::vector<std::vector<double>> states;
  run_network(p, model, d, opts, trajectory ? &states : nullptr, nullptr, x);
  if (trajectory) {
    trajectory->states.assign(states.begin() + 1, states.end());
  }
  return denormalize_state(p, x);
}

double vn_data_loss(const VnTrajectory& traj, const std::vector<double>& xstar_norm,
                    double tau) {
  int K = static_cast<int>(traj.states.size());
  if (K == 0) throw ConfigError("vn_data_loss: empty trajectory");
  double loss = 0.0;
  for (int k = 1; k <= K; ++k) {
    const auto& x = traj.states[static_cast<size_t>(k - 1)];
    if (x.size() != xstar_norm.size()) throw ConfigError("vn_data_loss: size mismatch");
    double l1 = 0.0;
    for (size_t i = 0; i < x.size(); ++i) l1 += std::abs(x[i] - xstar_norm[i]);
    loss += std::exp(-tau * (K - k)) * l1;
  }
  return loss;
}

double knot_smoothing(const VnParams& p, double epsilon) {
  double total = 0.0;
  auto add = [&](const KnotFunction& f) {
    const auto& y = f.ordinates();
    for (size_t j = 1; j + 1 < y.size(); ++j) {
      double t = y[j - 1] - 2.0 * y[j] + y[j + 1];
      total += std::sqrt(t * t + epsilon);
    }
  };
  for (const auto& l : p.layers) {
    for (const auto& a : l.reg_activations) add(a);
    add(l.data_activation);
  }
  return total;
}

void knot_smoothing_grad(const VnParams& p, double lambda_r, double epsilon,
                         std::vector<double>& grad_flat) {
  ParamLayout lay = layout_of(p);
  if (grad_flat.size() != lay.total)
    throw ConfigError("knot_smoothing_grad: gradient size mismatch");
  auto add = [&](const KnotFunction& f, double* g) {
    const auto& y = f.ordinates();
    for (size_t j = 1; j + 1 < y.size(); ++j) {
      double t = y[j - 1] - 2.0 * y[j] + y[j + 1];
      double dd = lambda_r * t / std::sqrt(t * t + epsilon);
      g[j - 1] += dd;
      g[j] -= 2.0 * dd;
      g[j + 1] += dd;
    }
  };
  for (int k = 0; k < p.n_layers; ++k) {
    const auto& L = lay.layers[static_cast<size_t>(k)];
    const auto& layer = p.layers[static_cast<size_t>(k)];
    for (int j = 0; j < p.n_filters; ++j)
      add(layer.reg_activations[static_cast<size_t>(j)],
          grad_flat.data() + L.phi + static_cast<size_t>(j) * static_cast<size_t>(lay.n_knots));
    add(layer.data_activation, grad_flat.data() + L.psi);
  }
}

double vn_grad(const VnParams& p, const ForwardModel& model, const MeasurementSet& d,
               const std::vector<double>& xstar_norm, double tau,
               const VnForwardOptions& opts, std::vector<double>& grad_flat) {
  ParamLayout lay = layout_of(p);
  if (grad_flat.size() != lay.total)
    throw ConfigError("vn_grad: gradient size mismatch");
  if (xstar_norm.size() != static_cast<size_t>(p.grid.npix()))
    throw ConfigError("vn_grad: target size mismatch");

  std::vector<std::vector<double>> states;
  std::vector<LayerTape> tape;
  std::vector<double> x_final;
  run_network(p, model, d, opts, &states, &tape, x_final);

  const int npix = p.grid.npix();
  const int npts = model.geom.lattice.npix();
  const int nmeas = model.geom.n_meas();
  const int o = p.kernel_size;
  const int a0 = p.anchor();
  const int a1 = o - 1 - a0;
  const int K = p.n_layers;
  const double lscale = p.delay_scale / p.slowness_scale;

  // Data loss and per-state supervision weights.
  double loss = 0.0;
  std::vector<double> omega(static_cast<size_t>(K));
  for (int k = 1; k <= K; ++k) {
    omega[static_cast<size_t>(k - 1)] = std::exp(-tau * (K - k));
    const auto& x = states[static_cast<size_t>(k)];
    double l1 = 0.0;
    for (int i = 0; i < npix; ++i) l1 += std::abs(x[static_cast<size_t>(i)] - xstar_norm[static_cast<size_t>(i)]);
    loss += omega[static_cast<size_t>(k - 1)] * l1;
  }

  std::vector<double> xbar(static_cast<size_t>(npix), 0.0);
  std::vector<double> gbar(static_cast<size_t>(npix));
  std::vector<double> xprev_bar(static_cast<size_t>(npix));
  std::vector<double> bbar(static_cast<size_t>(nmeas));
  std::vector<double> ubar(static_cast<size_t>(nmeas));
  std::vector<double> hbar(static_cast<size_t>(npix));
  std::vector<double> qbar(static_cast<size_t>(npix));
  std::vector<double> z(static_cast<size_t>(npix));
  std::vector<double> h(static_cast<size_t>(npix));
  std::vector<double> kg(static_cast<size_t>(o) * o);

  for (int k = K; k >= 1; --k) {
    const size_t kk = static_cast<size_t>(k - 1);
    const VnLayerParams& layer = p.layers[kk];
    const ParamLayout::Layer& off = lay.layers[kk];
    const auto& x_in = states[kk];
    const auto& x_out = states[kk + 1];
    const auto& u = tape[kk].u;

    for (int i = 0; i < npix; ++i)
      xbar[static_cast<size_t>(i)] +=
          omega[kk] * sign(x_out[static_cast<size_t>(i)] - xstar_norm[static_cast<size_t>(i)]);
    for (int i = 0; i < npix; ++i) gbar[static_cast<size_t>(i)] = -xbar[static_cast<size_t>(i)];

    // Data path backward.
    model.L.matvec(gbar.data(), bbar.data(), false);
    for (double& v : bbar) v *= lscale;
    double* sgrad = grad_flat.data() + off.data_weights;
    double* psigrad = grad_flat.data() + off.psi;
    for (int i = 0; i < nmeas; ++i) {
      int li = i % npts;
      double s = layer.data_weights[static_cast<size_t>(li)];
      double ui = u[static_cast<size_t>(i)];
      KnotFunction::Eval E = layer.data_activation.eval_full(s * ui);
      double bb = bbar[static_cast<size_t>(i)];
      double abar = s * bb;
      sgrad[li] += E.value * bb;
      psigrad[E.j0] += E.w0 * abar;
      psigrad[E.j1] += E.w1 * abar;
      double vbar = E.slope * abar;
      sgrad[li] += ui * vbar;
      ubar[static_cast<size_t>(i)] = lscale * s * vbar;
    }
    xprev_bar = xbar;
    model.Lt.matvec(ubar.data(), xprev_bar.data(), true);

    // Regularization path backward, one filter at a time.
    for (int j = 0; j < p.n_filters; ++j) {
      bool ana_on = !opts.analysis_mask || (*opts.analysis_mask)[kk][static_cast<size_t>(j)];
      bool syn_on = !opts.synthesis_mask || (*opts.synthesis_mask)[kk][static_cast<size_t>(j)];
      if (!syn_on) continue;
      const std::vector<double>& base =
          opts.filter_override ? (*opts.filter_override)[kk][static_cast<size_t>(j)]
                               : layer.filters[static_cast<size_t>(j)];
      const KnotFunction& phi = layer.reg_activations[static_cast<size_t>(j)];
      const std::vector<double>& w = layer.reg_weights[static_cast<size_t>(j)];
      const auto& q = tape[kk].q[static_cast<size_t>(j)];
      double* fgrad = grad_flat.data() + off.filters +
                      static_cast<size_t>(j) * static_cast<size_t>(lay.kernel_taps);
      double* wgrad = grad_flat.data() + off.reg_weights +
                      static_cast<size_t>(j) * static_cast<size_t>(lay.npix);
      double* phigrad = grad_flat.data() + off.phi +
                        static_cast<size_t>(j) * static_cast<size_t>(lay.n_knots);

      for (int i = 0; i < npix; ++i) z[static_cast<size_t>(i)] = phi.eval(q[static_cast<size_t>(i)]);
      for (int i = 0; i < npix; ++i)
        h[static_cast<size_t>(i)] = w[static_cast<size_t>(i)] * z[static_cast<size_t>(i)];

      // hbar: adjoint of the synthesis convolution.
      kernels::conv2d(gbar.data(), p.grid.nx, p.grid.nz, base.data(), o, a0, a0,
                      hbar.data(), false);
      // Synthesis kernel gradient, computed w.r.t. the flipped kernel then
      // unflipped into the filter slot.
      std::fill(kg.begin(), kg.end(), 0.0);
      kernels::conv2d_kernel_grad(h.data(), p.grid.nx, p.grid.nz, gbar.data(), o, a1, a1,
                                  kg.data());
      for (int zt = 0; zt < o; ++zt)
        for (int xt = 0; xt < o; ++xt)
          fgrad[zt * o + xt] += kg[static_cast<size_t>((o - 1 - zt) * o + (o - 1 - xt))];

      for (int i = 0; i < npix; ++i) {
        KnotFunction::Eval E = phi.eval_full(q[static_cast<size_t>(i)]);
        double hb = hbar[static_cast<size_t>(i)];
        double zbar = w[static_cast<size_t>(i)] * hb;
        wgrad[i] += z[static_cast<size_t>(i)] * hb;
        phigrad[E.j0] += E.w0 * zbar;
        phigrad[E.j1] += E.w1 * zbar;
        qbar[static_cast<size_t>(i)] = E.slope * zbar;
      }

      if (ana_on) {
        std::fill(kg.begin(), kg.end(), 0.0);
        kernels::conv2d_kernel_grad(x_in.data(), p.grid.nx, p.grid.nz, qbar.data(), o, a0,
                                    a0, kg.data());
        for (int t = 0; t < o * o; ++t) fgrad[t] += kg[static_cast<size_t>(t)];
        std::vector<double> fl = flip2(base, o);
        kernels::conv2d(qbar.data(), p.grid.nx, p.grid.nz, fl.data(), o, a1, a1,
                        xprev_bar.data(), true);
      }
    }
    xbar.swap(xprev_bar);
  }
  return loss;
}

VnParams init_vn_params(const ForwardModel& model, int n_layers, int n_filters,
                        int kernel_size, int n_knots, double knot_range,
                        double slowness_scale, double delay_scale, uint64_t seed,
                        double filter_std, double reg_weight_init) {
  VnParams p;
  p.grid = model.grid;
  p.n_layers = n_layers;
  p.n_filters = n_filters;
  p.kernel_size = kernel_size;
  p.n_knots = n_knots;
  p.knot_range = knot_range;
  p.slowness_scale = slowness_scale;
  p.delay_scale = delay_scale;
  p.c0 = model.c0;
  p.train_seed = seed;

  double lscale = delay_scale / slowness_scale;
  double sigma = lscale * operator_norm_estimate(model);
  double s0 = sigma > 0 ? std::sqrt(0.9) / sigma : 1.0;

  Rng rng(derive_seed(seed, "init-filters"));
  size_t npix = static_cast<size_t>(model.grid.npix());
  size_t npts = static_cast<size_t>(model.geom.lattice.npix());
  size_t taps = static_cast<size_t>(kernel_size) * kernel_size;

  p.layers.resize(static_cast<size_t>(n_layers));
  for (auto& layer : p.layers) {
    layer.filters.assign(static_cast<size_t>(n_filters), std::vector<double>(taps));
    for (auto& f : layer.filters)
      for (double& v : f) v = filter_std * rng.gaussian();
    layer.reg_weights.assign(static_cast<size_t>(n_filters),
                             std::vector<double>(npix, reg_weight_init));
    layer.reg_activations.assign(static_cast<size_t>(n_filters),
                                 KnotFunction(n_knots, knot_range));
    layer.data_weights.assign(npts, s0);
    layer.data_activation = KnotFunction(n_knots, knot_range);
    layer.data_activation.set_identity();
  }
  p.validate();
  return p;
}

} // namespace sosuq
