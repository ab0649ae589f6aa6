#include "sosuq/cli.hpp"

#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "sosuq/checkpoint.hpp"
#include "sosuq/config.hpp"
#include "sosuq/errors.hpp"
#include "sosuq/forward_model.hpp"
#include "sosuq/geometry.hpp"
#include "sosuq/grid.hpp"
#include "sosuq/parallel.hpp"
#include "sosuq/phantom.hpp"
#include "sosuq/rng.hpp"
#include "sosuq/selection.hpp"
#include "sosuq/solver.hpp"
#include "sosuq/tensor.hpp"
#include "sosuq/train.hpp"
#include "sosuq/uncertainty.hpp"
#include "sosuq/varnet.hpp"

namespace sosuq::cli {
namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Logging: line-oriented key=value records on stdout.

std::string quote_if_needed(const std::string& v) {
  if (v.find_first_of(" \t,") == std::string::npos) return v;
  return "\"" + v + "\"";
}

void log_kv(const std::vector<std::pair<std::string, std::string>>& fields) {
  std::string line;
  for (size_t i = 0; i < fields.size(); ++i) {
    if (i) line += ' ';
    line += fields[i].first;
    line += '=';
    line += quote_if_needed(fields[i].second);
  }
  std::cout << line << '\n' << std::flush;
}

std::string fmt_u64(uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%" PRIu64, v);
  return buf;
}

std::string fmt_hash(uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

std::string fmt_g12(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string fmt_g17(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Filesystem helpers.

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (!fs::is_directory(p))
    throw IoError("cannot create output directory " + p.string());
}

void write_text_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + p.string() + " for writing");
  f << text;
  f.flush();
  if (!f) throw IoError("write failed for " + p.string());
}

std::string read_text_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot open " + p.string());
  std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (f.bad()) throw IoError("read failed for " + p.string());
  return s;
}

ordered_json read_json_file(const fs::path& p) {
  try {
    return ordered_json::parse(read_text_file(p));
  } catch (const IoError&) {
    throw;
  } catch (const std::exception& e) {
    throw IoError("cannot parse " + p.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& p, const ordered_json& j) {
  write_text_file(p, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Config plumbing shared by the subcommands.

Config load_config(const std::string& path) {
  if (path.empty()) return Config();
  return Config::parse_file(path);
}

GridSpec grid_from_config(Config& c) {
  return make_grid(c.get_int("grid.nx", 84), c.get_int("grid.nz", 64),
                   c.get_double("grid.pitch_x_mm", 0.3) * 1e-3,
                   c.get_double("grid.pitch_z_mm", 0.3) * 1e-3);
}

AcquisitionGeometry geom_from_config(Config& c, const GridSpec& img) {
  AcquisitionGeometry g = default_geometry(
      img, c.get_int("geom.n_transmits", 17), c.get_int("geom.pair_stride", 2),
      c.get_double("geom.max_angle_deg", 25.0), c.get_int("geom.lattice_nx", 57),
      c.get_int("geom.lattice_nz", 77));
  g.validate(img);
  return g;
}

double c0_from_config(Config& c) { return c.get_double("c0_mps", 1540.0); }

/// Keys fully determining the acquisition setup. A training run inherits
/// them from its dataset, and inference commands inherit them from the
/// checkpoint's config echo, so geometry can never silently drift.
void copy_geometry_keys(Config& dst, const Config& src) {
  static const std::pair<const char*, const char*> keys[] = {
      {"grid.nx", "84"},          {"grid.nz", "64"},
      {"grid.pitch_x_mm", "0.3"}, {"grid.pitch_z_mm", "0.3"},
      {"geom.n_transmits", "17"}, {"geom.pair_stride", "2"},
      {"geom.max_angle_deg", "25"}, {"geom.lattice_nx", "57"},
      {"geom.lattice_nz", "77"},  {"c0_mps", "1540"},
  };
  for (const auto& [key, def] : keys) dst.set(key, src.get_string(key, def));
}

PhantomConfig phantom_from_config(Config& c) {
  PhantomConfig p;
  p.background_min_mps = c.get_double("phantom.background_min_mps", p.background_min_mps);
  p.background_max_mps = c.get_double("phantom.background_max_mps", p.background_max_mps);
  p.contrast_min_mps = c.get_double("phantom.contrast_min_mps", p.contrast_min_mps);
  p.contrast_max_mps = c.get_double("phantom.contrast_max_mps", p.contrast_max_mps);
  p.inclusion_count_min = c.get_int("phantom.inclusion_count_min", p.inclusion_count_min);
  p.inclusion_count_max = c.get_int("phantom.inclusion_count_max", p.inclusion_count_max);
  p.semi_axis_min_m = c.get_double("phantom.semi_axis_min_mm", p.semi_axis_min_m * 1e3) * 1e-3;
  p.semi_axis_max_m = c.get_double("phantom.semi_axis_max_mm", p.semi_axis_max_m * 1e3) * 1e-3;
  p.deformation_amplitude = c.get_double("phantom.deformation_amplitude", p.deformation_amplitude);
  p.smooth_fraction = c.get_double("phantom.smooth_fraction", p.smooth_fraction);
  p.empty_probability = c.get_double("phantom.empty_probability", 0.05);
  p.signed_contrast = c.get_bool("phantom.signed_contrast", p.signed_contrast);
  p.validate();
  return p;
}

SolverConfig solver_from_config(Config& c) {
  SolverConfig s;
  s.lambda = c.get_double("solver.lambda", s.lambda);
  const std::string norm = c.get_string("solver.data_norm", "l2");
  if (norm == "l2")
    s.data_norm = SolverConfig::DataNorm::l2;
  else if (norm == "smoothed_l1")
    s.data_norm = SolverConfig::DataNorm::smoothed_l1;
  else
    throw ConfigError("solver.data_norm must be l2 or smoothed_l1");
  s.tv_epsilon = c.get_double("solver.tv_epsilon", s.tv_epsilon);
  s.max_iters = c.get_int("solver.max_iters", s.max_iters);
  s.grad_tolerance = c.get_double("solver.grad_tolerance", s.grad_tolerance);
  s.lbfgs_memory = c.get_int("solver.memory", s.lbfgs_memory);
  s.validate();
  return s;
}

TrainConfig traincfg_from_config(Config& c, uint64_t seed) {
  TrainConfig t;
  t.tau = c.get_double("train.tau", t.tau);
  t.lambda_r = c.get_double("train.lambda_r", t.lambda_r);
  t.epsilon_smooth = c.get_double("train.epsilon_smooth", t.epsilon_smooth);
  t.batch_size = c.get_int("train.batch_size", t.batch_size);
  t.iterations = c.get_int64("train.iterations", t.iterations);
  t.adam_lr = c.get_double("train.adam_lr", t.adam_lr);
  t.adam_beta1 = c.get_double("train.adam_beta1", t.adam_beta1);
  t.adam_beta2 = c.get_double("train.adam_beta2", t.adam_beta2);
  t.adam_eps = c.get_double("train.adam_eps", t.adam_eps);
  t.n_layers = c.get_int("train.n_layers", t.n_layers);
  t.n_filters = c.get_int("train.n_filters", t.n_filters);
  t.kernel_size = c.get_int("train.kernel_size", t.kernel_size);
  t.n_knots = c.get_int("train.n_knots", t.n_knots);
  t.knot_range = c.get_double("train.knot_range", t.knot_range);
  t.slowness_scale = c.get_double("train.slowness_scale", t.slowness_scale);
  t.delay_scale = c.get_double("train.delay_scale", t.delay_scale);
  t.filter_init_std = c.get_double("train.filter_init_std", t.filter_init_std);
  t.reg_weight_init = c.get_double("train.reg_weight_init", t.reg_weight_init);
  t.dropout_p = c.get_double("train.dropout_p", t.dropout_p);
  t.bvi_alpha = c.get_double("train.bvi_alpha", t.bvi_alpha);
  t.bvi_beta = c.get_double("train.bvi_beta", t.bvi_beta);
  t.bvi_d_init_lo = c.get_double("train.bvi_d_init_lo", t.bvi_d_init_lo);
  t.bvi_d_init_hi = c.get_double("train.bvi_d_init_hi", t.bvi_d_init_hi);
  t.log_every = c.get_int("train.log_every", t.log_every);
  t.checkpoint_every = c.get_int("train.checkpoint_every", t.checkpoint_every);
  t.seed = seed;
  t.validate();
  return t;
}

uint64_t seed_from_config(Config& c) {
  const std::string s = c.get_string("seed", "0");
  try {
    size_t used = 0;
    const uint64_t v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key 'seed': not an unsigned integer: " + s);
  }
}

// ---------------------------------------------------------------------------
// Tensor <-> domain-type conversions. Image maps are stored as [nz, nx]
// tensors, measurements as [n_pairs, lattice_nz, lattice_nx]; both row-major
// with x fastest, matching the in-memory layouts.

Tensor image_tensor(const std::vector<double>& values, const GridSpec& g) {
  Tensor t(Dtype::f64, {static_cast<uint64_t>(g.nz), static_cast<uint64_t>(g.nx)});
  t.values = values;
  return t;
}

std::vector<double> image_from_tensor(const Tensor& t, const GridSpec& g,
                                      const std::string& what) {
  if (t.dims.size() != 2 || t.dims[0] != static_cast<uint64_t>(g.nz) ||
      t.dims[1] != static_cast<uint64_t>(g.nx))
    throw ConfigError(what + ": tensor shape does not match the " +
                      std::to_string(g.nx) + "x" + std::to_string(g.nz) +
                      " image grid");
  return t.values;
}

Tensor meas_tensor(const MeasurementSet& m) {
  Tensor t(Dtype::f64,
           {static_cast<uint64_t>(m.n_pairs), static_cast<uint64_t>(m.lattice.nz),
            static_cast<uint64_t>(m.lattice.nx)});
  t.values = m.values;
  return t;
}

MeasurementSet meas_from_tensor(const Tensor& t, const AcquisitionGeometry& geom,
                                const std::string& what) {
  if (t.dims.size() != 3 || t.dims[0] != static_cast<uint64_t>(geom.n_pairs()) ||
      t.dims[1] != static_cast<uint64_t>(geom.lattice.nz) ||
      t.dims[2] != static_cast<uint64_t>(geom.lattice.nx))
    throw ConfigError(what + ": geometry mismatch (expected " +
                      std::to_string(geom.n_pairs()) + "x" +
                      std::to_string(geom.lattice.nz) + "x" +
                      std::to_string(geom.lattice.nx) + " measurements)");
  MeasurementSet m;
  m.n_pairs = geom.n_pairs();
  m.lattice = geom.lattice;
  m.values = t.values;
  return m;
}

Mask mask_from_tensor(const Tensor& t, const GridSpec& g, const std::string& what) {
  const std::vector<double> v = image_from_tensor(t, g, what);
  Mask m(g);
  for (size_t i = 0; i < v.size(); ++i) m.bits[i] = v[i] != 0.0 ? 1 : 0;
  return m;
}

// ---------------------------------------------------------------------------
// Checkpoint-backed inference helpers.

struct InferenceContext {
  TrainSnapshot snap;
  Config echo;  // the training run's resolved configuration
  GridSpec grid;
  AcquisitionGeometry geom;
  double c0 = 1540.0;
  ForwardModel model;
};

InferenceContext load_inference_context(const fs::path& ckpt_path, Config& cfg,
                                        int threads) {
  InferenceContext ctx;
  ctx.snap = load_checkpoint(ckpt_path);
  ctx.echo = Config::parse_string(ctx.snap.config_echo);
  copy_geometry_keys(cfg, ctx.echo);
  ctx.grid = grid_from_config(cfg);
  ctx.geom = geom_from_config(cfg, ctx.grid);
  ctx.c0 = c0_from_config(cfg);
  ctx.model = build_operator(ctx.grid, ctx.geom, ctx.c0, threads);
  ctx.snap.params.validate_against(ctx.model);
  return ctx;
}

/// Dropout probability to sample with: explicit config override, else the
/// value the checkpoint was trained with (0 for plain VN / BVI checkpoints).
double resolve_mcd_p(Config& cfg, const InferenceContext& ctx, const char* key) {
  double trained_p = 0.0;
  if (ctx.snap.mode == TrainMode::mcd)
    trained_p = ctx.echo.get_double("train.dropout_p", 0.25);
  const double p = cfg.get_double(key, trained_p);
  if (!(p >= 0.0 && p < 1.0))
    throw ConfigError(std::string(key) + " must be in [0, 1)");
  return p;
}

// ---------------------------------------------------------------------------
// dataset

void cmd_dataset(const std::string& config_path, const std::string& out_dir,
                 std::optional<uint64_t> seed_flag, int threads) {
  Config cfg = load_config(config_path);
  if (seed_flag) cfg.set("seed", fmt_u64(*seed_flag));
  const uint64_t seed = seed_from_config(cfg);
  const GridSpec img = grid_from_config(cfg);
  const AcquisitionGeometry geom = geom_from_config(cfg, img);
  const double c0 = c0_from_config(cfg);
  const PhantomConfig pc = phantom_from_config(cfg);
  const int count = cfg.get_int("dataset.count", 2000);
  const int hr_factor = cfg.get_int("dataset.hr_factor", 2);
  const double noise_sigma_s = cfg.get_double("dataset.noise_sigma_ns", 2.0) * 1e-9;
  if (count < 1) throw ConfigError("dataset.count must be >= 1");
  if (hr_factor < 1) throw ConfigError("dataset.hr_factor must be >= 1");
  if (!(noise_sigma_s >= 0.0)) throw ConfigError("dataset.noise_sigma_ns must be >= 0");
  cfg.require_all_read();

  const fs::path out(out_dir);
  ensure_dir(out);
  log_kv({{"event", "dataset_start"},
          {"count", std::to_string(count)},
          {"seed", fmt_u64(seed)},
          {"out", out.string()}});

  const GridSpec hr = refine_grid(img, hr_factor);
  const ForwardModel sim = build_operator(hr, geom, c0, threads);

  std::vector<ordered_json> entries(count);
  parallel_for(count, threads, [&](int i) {
    const uint64_t scene_seed = derive_seed(seed, "sample-scene", static_cast<uint64_t>(i));
    const uint64_t noise_seed = derive_seed(seed, "sample-noise", static_cast<uint64_t>(i));
    const PhantomScene scene = sample_scene(scene_seed, pc, img.extent_x(), img.extent_z());
    const SlownessMap truth = to_slowness(rasterize_scene(scene, img));
    const SlownessMap hi = to_slowness(rasterize_scene(scene, hr));
    const MeasurementSet d = simulate_measurements(sim, hi, noise_sigma_s, noise_seed);

    char tn[32], mn[32];
    std::snprintf(tn, sizeof tn, "truth_%06d.t", i);
    std::snprintf(mn, sizeof mn, "meas_%06d.t", i);
    write_tensor(out / tn, image_tensor(truth.values, img));
    write_tensor(out / mn, meas_tensor(d));

    ordered_json e;
    e["index"] = i;
    e["scene_seed"] = scene_seed;
    e["noise_seed"] = noise_seed;
    e["empty"] = scene.inclusions.empty();
    e["truth"] = tn;
    e["meas"] = mn;
    entries[i] = std::move(e);
  });

  int n_empty = 0;
  for (const auto& e : entries)
    if (e["empty"].get<bool>()) ++n_empty;

  ordered_json man;
  man["kind"] = "dataset";
  man["format"] = 1;
  man["config_hash"] = fmt_hash(cfg.resolved_hash());
  man["count"] = count;
  man["empty_count"] = n_empty;
  man["samples"] = entries;
  write_json_file(out / "manifest.json", man);
  write_text_file(out / "resolved.cfg", cfg.resolved_text());
  log_kv({{"event", "dataset_done"},
          {"count", std::to_string(count)},
          {"empty", std::to_string(n_empty)}});
}

// ---------------------------------------------------------------------------
// train

void cmd_train(const std::string& config_path, const std::string& data_dir,
               const std::string& out_dir, std::optional<uint64_t> seed_flag,
               int threads, const std::string& resume_path) {
  Config cfg = load_config(config_path);
  if (seed_flag) cfg.set("seed", fmt_u64(*seed_flag));

  const fs::path data(data_dir);
  const ordered_json man = read_json_file(data / "manifest.json");
  if (man.value("kind", std::string()) != "dataset")
    throw ConfigError(data_dir + " is not a dataset directory");
  const Config dcfg = Config::parse_file(data / "resolved.cfg");
  copy_geometry_keys(cfg, dcfg);

  const uint64_t seed = seed_from_config(cfg);
  const GridSpec img = grid_from_config(cfg);
  const AcquisitionGeometry geom = geom_from_config(cfg, img);
  const double c0 = c0_from_config(cfg);
  const TrainMode mode = parse_train_mode(cfg.get_string("train.mode", "vn"));
  const TrainConfig tc = traincfg_from_config(cfg, seed);
  const int max_samples = cfg.get_int("train.max_samples", 0);  // 0 = all
  cfg.require_all_read();

  const ForwardModel model = build_operator(img, geom, c0, threads);

  std::vector<TrainSample> samples;
  for (const auto& e : man.at("samples")) {
    if (max_samples > 0 && static_cast<int>(samples.size()) >= max_samples) break;
    TrainSample s;
    s.x_star.grid = img;
    s.x_star.values = image_from_tensor(
        read_tensor(data / e.at("truth").get<std::string>()), img, "train");
    s.d = meas_from_tensor(read_tensor(data / e.at("meas").get<std::string>()),
                           geom, "train");
    samples.push_back(std::move(s));
  }
  if (samples.empty()) throw ConfigError("dataset has no samples");

  const fs::path out(out_dir);
  ensure_dir(out);
  const std::string echo = cfg.resolved_text();
  write_text_file(out / "resolved.cfg", echo);

  TrainSnapshot resume_snap;
  const TrainSnapshot* resume = nullptr;
  if (!resume_path.empty()) {
    resume_snap = load_checkpoint(resume_path);
    if (resume_snap.mode != mode)
      throw ConfigError("resume checkpoint mode " + train_mode_name(resume_snap.mode) +
                        " does not match train.mode " + train_mode_name(mode));
    resume = &resume_snap;
  }

  log_kv({{"event", "train_start"},
          {"mode", train_mode_name(mode)},
          {"samples", std::to_string(samples.size())},
          {"iterations", std::to_string(tc.iterations)},
          {"seed", fmt_u64(seed)}});

  const fs::path ckpt_path = out / "checkpoint.ckpt";
  auto on_checkpoint = [&](const TrainSnapshot& s) {
    TrainSnapshot copy = s;
    copy.config_echo = echo;
    save_checkpoint(ckpt_path, copy);
    log_kv({{"event", "checkpoint"}, {"iteration", std::to_string(s.iteration)}});
  };

  TrainResult res = train(samples, model, tc, mode, threads, on_checkpoint, resume);
  res.snap.config_echo = echo;
  save_checkpoint(ckpt_path, res.snap);

  std::string csv = "iteration,loss\n";
  for (const auto& [it, loss] : res.loss_log)
    csv += std::to_string(it) + "," + fmt_g12(loss) + "\n";
  write_text_file(out / "loss.csv", csv);

  ordered_json m;
  m["kind"] = "train";
  m["format"] = 1;
  m["config_hash"] = fmt_hash(cfg.resolved_hash());
  m["dataset_hash"] = man.value("config_hash", std::string());
  m["mode"] = train_mode_name(mode);
  m["iteration"] = res.snap.iteration;
  m["diverged"] = res.diverged;
  m["final_loss"] = res.loss_log.empty() ? 0.0 : res.loss_log.back().second;
  m["checkpoint"] = "checkpoint.ckpt";
  write_json_file(out / "manifest.json", m);

  if (res.diverged)
    throw NumericError("training diverged; last good checkpoint written to " +
                       ckpt_path.string());
  log_kv({{"event", "train_done"},
          {"iteration", std::to_string(res.snap.iteration)},
          {"final_loss", res.loss_log.empty() ? "nan" : fmt_g12(res.loss_log.back().second)}});
}

// ---------------------------------------------------------------------------
// reconstruct

void cmd_reconstruct(const std::string& config_path, const std::string& out_dir,
                     std::string method, const std::string& ckpt_path,
                     const std::vector<std::string>& inputs, int threads) {
  Config cfg = load_config(config_path);
  if (inputs.empty()) throw ConfigError("reconstruct: no input measurement files");
  if (method.empty()) method = ckpt_path.empty() ? "lbfgs" : "vn";
  if (method != "lbfgs" && method != "vn")
    throw ConfigError("reconstruct: method must be lbfgs or vn");

  const fs::path out(out_dir);
  std::vector<SosMap> maps;

  if (method == "vn") {
    if (ckpt_path.empty()) throw ConfigError("reconstruct: method vn needs --checkpoint");
    InferenceContext ctx = load_inference_context(ckpt_path, cfg, threads);
    cfg.require_all_read();
    ensure_dir(out);
    for (const std::string& in : inputs) {
      const MeasurementSet d =
          meas_from_tensor(read_tensor(in), ctx.geom, "reconstruct " + in);
      maps.push_back(vn_forward(ctx.snap.params, ctx.model, d));
    }
  } else {
    const GridSpec img = grid_from_config(cfg);
    const AcquisitionGeometry geom = geom_from_config(cfg, img);
    const double c0 = c0_from_config(cfg);
    const SolverConfig scfg = solver_from_config(cfg);
    cfg.require_all_read();
    ensure_dir(out);
    const ForwardModel model = build_operator(img, geom, c0, threads);
    maps.resize(inputs.size());
    std::vector<MeasurementSet> ds(inputs.size());
    for (size_t i = 0; i < inputs.size(); ++i)
      ds[i] = meas_from_tensor(read_tensor(inputs[i]), geom,
                               "reconstruct " + inputs[i]);
    parallel_for(static_cast<int>(inputs.size()), threads,
                 [&](int i) { maps[i] = lbfgs_reconstruct(model, ds[i], scfg); });
  }

  ordered_json entries = ordered_json::array();
  for (size_t i = 0; i < inputs.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "sos_%03d.t", static_cast<int>(i));
    write_tensor(out / name, image_tensor(maps[i].values, maps[i].grid));
    ordered_json e;
    e["input"] = inputs[i];
    e["output"] = name;
    e["method"] = method;
    entries.push_back(std::move(e));
  }

  ordered_json m;
  m["kind"] = "reconstruct";
  m["format"] = 1;
  m["config_hash"] = fmt_hash(cfg.resolved_hash());
  m["method"] = method;
  m["outputs"] = entries;
  write_json_file(out / "manifest.json", m);
  write_text_file(out / "resolved.cfg", cfg.resolved_text());
  log_kv({{"event", "reconstruct_done"},
          {"method", method},
          {"outputs", std::to_string(inputs.size())}});
}

// ---------------------------------------------------------------------------
// uncertainty

void cmd_uncertainty(const std::string& config_path, const std::string& out_dir,
                     const std::string& ckpt_path, const std::string& input,
                     std::optional<uint64_t> seed_flag, std::optional<int> samples_flag,
                     int threads) {
  Config cfg = load_config(config_path);
  if (seed_flag) cfg.set("seed", fmt_u64(*seed_flag));
  if (samples_flag) cfg.set("uncertainty.n_samples", std::to_string(*samples_flag));
  if (ckpt_path.empty()) throw ConfigError("uncertainty: --checkpoint is required");

  InferenceContext ctx = load_inference_context(ckpt_path, cfg, threads);
  const uint64_t seed = seed_from_config(cfg);
  const int n_samples = cfg.get_int("uncertainty.n_samples", 100);
  if (n_samples < 2) throw ConfigError("uncertainty.n_samples must be >= 2");

  const MeasurementSet d = meas_from_tensor(read_tensor(input), ctx.geom, "uncertainty");

  PosteriorSummary summary;
  std::string method;
  double p = 0.0;
  if (ctx.snap.mode == TrainMode::bvi) {
    method = "bvi";
    cfg.require_all_read();
    summary = bvi_summary(ctx.snap.posterior, ctx.model, d, n_samples, seed, threads);
  } else {
    method = "mcd";
    p = resolve_mcd_p(cfg, ctx, "uncertainty.mcd_p");
    cfg.require_all_read();
    if (p == 0.0)
      log_kv({{"event", "warning"},
              {"msg", "dropout probability is 0; deviation will be identically zero"}});
    McdConfig mc;
    mc.p = p;
    mc.n_samples = n_samples;
    mc.seed = seed;
    summary = mcd_summary(ctx.snap.params, ctx.model, d, mc, threads);
  }

  const fs::path out(out_dir);
  ensure_dir(out);
  write_tensor(out / "mean.t", image_tensor(summary.mean.values, summary.mean.grid));
  write_tensor(out / "std.t",
               image_tensor(summary.deviation.values, summary.deviation.grid));

  ordered_json m;
  m["kind"] = "uncertainty";
  m["format"] = 1;
  m["config_hash"] = fmt_hash(cfg.resolved_hash());
  m["method"] = method;
  m["n_samples"] = n_samples;
  m["seed"] = seed;
  if (method == "mcd") m["dropout_p"] = p;
  m["input"] = input;
  m["mean"] = "mean.t";
  m["std"] = "std.t";
  write_json_file(out / "manifest.json", m);
  write_text_file(out / "resolved.cfg", cfg.resolved_text());
  log_kv({{"event", "uncertainty_done"},
          {"method", method},
          {"n_samples", std::to_string(n_samples)},
          {"seed", fmt_u64(seed)}});
}

// ---------------------------------------------------------------------------
// select-eval

std::vector<SelectionPolicy> policies_from_config(Config& cfg) {
  const std::string list = cfg.get_string("select.policies", "S1,S3,SR,SI_inc,SI_rel");
  std::vector<SelectionPolicy> out;
  std::string cur;
  auto flush = [&]() {
    if (cur.empty()) return;
    SelectionPolicy p;
    p.kind = parse_policy(cur);
    out.push_back(p);
    cur.clear();
  };
  for (char ch : list) {
    if (ch == ',')
      flush();
    else if (!std::isspace(static_cast<unsigned char>(ch)))
      cur += ch;
  }
  flush();
  if (out.empty()) throw ConfigError("select.policies is empty");
  return out;
}

struct LoadedScenes {
  std::vector<AcquisitionSeries> scenes;
  std::vector<std::pair<std::string, std::string>> skipped;  // (id, reason)
};

LoadedScenes load_scenes_dir(const fs::path& dir, const GridSpec& img,
                             const AcquisitionGeometry& geom) {
  LoadedScenes out;
  const ordered_json man = read_json_file(dir / "scenes.json");
  if (!man.contains("scenes") || !man["scenes"].is_array())
    throw IoError(dir.string() + "/scenes.json: missing scenes array");
  int index = 0;
  for (const auto& e : man["scenes"]) {
    const std::string id = e.value("id", "scene_" + std::to_string(index));
    ++index;
    auto skip = [&](const std::string& reason) {
      out.skipped.emplace_back(id, reason);
      log_kv({{"event", "skip_scene"}, {"scene", id}, {"reason", reason}});
    };
    try {
      if (e.value("label", std::string()).empty()) {
        skip("missing label");
        continue;
      }
      if (!e.contains("mask") || !fs::exists(dir / e["mask"].get<std::string>())) {
        skip("missing mask");
        continue;
      }
      AcquisitionSeries s;
      s.id = id;
      s.label = e["label"].get<std::string>();
      s.inclusion = mask_from_tensor(read_tensor(dir / e["mask"].get<std::string>()),
                                     img, "scene " + id + " mask");
      if (s.inclusion.count() == 0) {
        skip("empty mask");
        continue;
      }
      if (!e.contains("frames") || !e["frames"].is_array() || e["frames"].empty()) {
        skip("no frames");
        continue;
      }
      for (const auto& f : e["frames"])
        s.frames.push_back(meas_from_tensor(read_tensor(dir / f.get<std::string>()),
                                            geom, "scene " + id));
      if (e.contains("truth")) {
        SosMap truth;
        truth.grid = img;
        truth.values = image_from_tensor(
            read_tensor(dir / e["truth"].get<std::string>()), img, "scene " + id);
        s.truth = std::move(truth);
      }
      out.scenes.push_back(std::move(s));
    } catch (const std::exception& ex) {
      skip(std::string("load failed: ") + ex.what());
    }
  }
  return out;
}

void cmd_select_eval(const std::string& config_path, const std::string& out_dir,
                     const std::string& ckpt_path, const std::string& scenes_dir,
                     std::optional<uint64_t> seed_flag, int threads) {
  Config cfg = load_config(config_path);
  if (seed_flag) cfg.set("seed", fmt_u64(*seed_flag));
  if (ckpt_path.empty()) throw ConfigError("select-eval: --checkpoint is required");

  InferenceContext ctx = load_inference_context(ckpt_path, cfg, threads);
  const uint64_t seed = seed_from_config(cfg);

  ExperimentConfig ec;
  ec.policies = policies_from_config(cfg);
  ec.ring_width_m = cfg.get_double("select.ring_width_mm", 5.0) * 1e-3;
  ec.n_samples = cfg.get_int("select.n_samples", 64);
  ec.positive_label = cfg.get_string("select.positive_label", "CA");
  ec.seed = seed;
  ec.threads = threads;

  PosteriorSampler sampler;
  double p = 0.0;
  std::string method;
  if (ctx.snap.mode == TrainMode::bvi) {
    method = "bvi";
    sampler.bvi = &ctx.snap.posterior;
  } else {
    method = "mcd";
    p = resolve_mcd_p(cfg, ctx, "select.mcd_p");
    if (p == 0.0)
      log_kv({{"event", "warning"},
              {"msg", "dropout probability is 0; uncertainty-informed policies degenerate"}});
    sampler.mcd_params = &ctx.snap.params;
    sampler.mcd_p = p;
  }

  LoadedScenes loaded;
  if (!scenes_dir.empty()) {
    cfg.require_all_read();
    loaded = load_scenes_dir(scenes_dir, ctx.grid, ctx.geom);
    if (loaded.scenes.empty())
      throw ConfigError("select-eval: every scene was skipped");
  } else {
    SceneGenConfig sg;
    sg.n_scenes = cfg.get_int("scenes.count", sg.n_scenes);
    sg.n_frames = cfg.get_int("scenes.frames", sg.n_frames);
    sg.n_corrupted = cfg.get_int("scenes.corrupted", sg.n_corrupted);
    sg.corruption_factor = cfg.get_double("scenes.corruption_factor", sg.corruption_factor);
    sg.noise_sigma_s = cfg.get_double("scenes.noise_sigma_ns", 2.0) * 1e-9;
    sg.hr_factor = cfg.get_int("scenes.hr_factor", sg.hr_factor);
    sg.seed = seed;
    cfg.require_all_read();
    loaded.scenes = make_selection_scenes(sg, ctx.grid, ctx.geom, ctx.c0, threads);
  }

  log_kv({{"event", "select_eval_start"},
          {"scenes", std::to_string(loaded.scenes.size())},
          {"skipped", std::to_string(loaded.skipped.size())},
          {"method", method},
          {"n_samples", std::to_string(ec.n_samples)}});

  const ExperimentReport rep = selection_experiment(loaded.scenes, ctx.model, sampler, ec);

  const fs::path out(out_dir);
  ensure_dir(out);
  write_text_file(out / "summary.csv", rep.summary_csv());
  write_text_file(out / "detail.csv", rep.detail_csv());

  ordered_json m;
  m["kind"] = "select_eval";
  m["format"] = 1;
  m["config_hash"] = fmt_hash(cfg.resolved_hash());
  m["method"] = method;
  if (method == "mcd") m["dropout_p"] = p;
  m["seed"] = seed;
  m["n_samples"] = ec.n_samples;
  m["scenes"] = loaded.scenes.size();
  ordered_json skipped = ordered_json::array();
  for (const auto& [id, reason] : loaded.skipped) {
    ordered_json e;
    e["id"] = id;
    e["reason"] = reason;
    skipped.push_back(std::move(e));
  }
  m["skipped"] = skipped;
  m["summary"] = "summary.csv";
  m["detail"] = "detail.csv";
  write_json_file(out / "manifest.json", m);
  write_text_file(out / "resolved.cfg", cfg.resolved_text());
  for (const auto& [policy, metric, value] : rep.summary)
    if (metric == "auc")
      log_kv({{"event", "auc"}, {"policy", policy}, {"value", fmt_g12(value)}});
  log_kv({{"event", "select_eval_done"},
          {"scenes", std::to_string(loaded.scenes.size())},
          {"skipped", std::to_string(loaded.skipped.size())}});
}

// ---------------------------------------------------------------------------
// export-text

void cmd_export_text(const std::string& input, const std::string& out_path) {
  const Tensor t = read_tensor(input);
  std::string txt = "dtype ";
  txt += t.dtype == Dtype::f64 ? "f64" : "f32";
  txt += "\ndims";
  for (uint64_t d : t.dims) {
    txt += ' ';
    txt += fmt_u64(d);
  }
  txt += '\n';
  for (double v : t.values) {
    txt += fmt_g17(v);
    txt += '\n';
  }
  if (out_path.empty())
    std::cout << txt << std::flush;
  else
    write_text_file(out_path, txt);
}

} // namespace

int run_main(int argc, const char* const* argv) {
  CLI::App app{"Speed-of-sound reconstruction with uncertainty estimation"};
  app.require_subcommand(1);

  std::string config_path, out_dir, data_dir, ckpt_path, scenes_dir, method;
  std::string resume_path, export_out;
  std::vector<std::string> inputs;
  uint64_t seed_val = 0;
  int threads = 1;
  int samples_val = 0;

  auto add_common = [&](CLI::App* sub, bool needs_out) {
    sub->add_option("--config", config_path, "Run configuration file");
    auto* sopt = sub->add_option("--seed", seed_val, "Base seed (overrides the config)");
    sub->add_option("--threads", threads, "Worker threads (1 = deterministic default)")
        ->check(CLI::PositiveNumber);
    CLI::Option* oopt = sub->add_option("--out", out_dir, "Output directory");
    if (needs_out) oopt->required();
    return sopt;
  };

  CLI::App* ds = app.add_subcommand("dataset", "Generate a synthetic training dataset");
  CLI::Option* ds_seed = add_common(ds, true);

  CLI::App* tr = app.add_subcommand("train", "Train a reconstruction network");
  CLI::Option* tr_seed = add_common(tr, true);
  tr->add_option("--data", data_dir, "Dataset directory")->required();
  tr->add_option("--resume", resume_path, "Checkpoint to resume from");

  CLI::App* rc = app.add_subcommand("reconstruct", "Reconstruct measurement files");
  add_common(rc, true);
  rc->add_option("--method", method, "lbfgs or vn (default: vn with --checkpoint)");
  rc->add_option("--checkpoint", ckpt_path, "Trained network checkpoint");
  rc->add_option("inputs", inputs, "Measurement tensor files")->required();

  CLI::App* un = app.add_subcommand("uncertainty", "Posterior mean and deviation maps");
  CLI::Option* un_seed = add_common(un, true);
  un->add_option("--checkpoint", ckpt_path, "Trained network checkpoint")->required();
  CLI::Option* un_samples =
      un->add_option("--samples", samples_val, "Posterior sample count");
  un->add_option("input", inputs, "Measurement tensor file")->expected(1)->required();

  CLI::App* se = app.add_subcommand("select-eval", "Frame-selection evaluation report");
  CLI::Option* se_seed = add_common(se, true);
  se->add_option("--checkpoint", ckpt_path, "Trained network checkpoint")->required();
  se->add_option("--scenes", scenes_dir,
                 "Scene directory (omit to synthesize scenes from the config)");

  CLI::App* ex = app.add_subcommand("export-text", "Dump a tensor file as text");
  ex->add_option("input", inputs, "Tensor file")->expected(1)->required();
  ex->add_option("--out", export_out, "Output text file (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    auto opt_seed = [](const CLI::Option* o, uint64_t v) {
      return o->count() > 0 ? std::optional<uint64_t>(v) : std::nullopt;
    };
    if (ds->parsed()) {
      cmd_dataset(config_path, out_dir, opt_seed(ds_seed, seed_val), threads);
    } else if (tr->parsed()) {
      cmd_train(config_path, data_dir, out_dir, opt_seed(tr_seed, seed_val), threads,
                resume_path);
    } else if (rc->parsed()) {
      cmd_reconstruct(config_path, out_dir, method, ckpt_path, inputs, threads);
    } else if (un->parsed()) {
      cmd_uncertainty(config_path, out_dir, ckpt_path, inputs.at(0),
                      opt_seed(un_seed, seed_val),
                      un_samples->count() > 0 ? std::optional<int>(samples_val)
                                              : std::nullopt,
                      threads);
    } else if (se->parsed()) {
      cmd_select_eval(config_path, out_dir, ckpt_path, scenes_dir,
                      opt_seed(se_seed, seed_val), threads);
    } else if (ex->parsed()) {
      cmd_export_text(inputs.at(0), export_out);
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "error=config msg=\"" << e.what() << "\"\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error=io msg=\"" << e.what() << "\"\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "error=numeric msg=\"" << e.what() << "\"\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error=internal msg=\"" << e.what() << "\"\n";
    return 1;
  }
}

} // namespace sosuq::cli
