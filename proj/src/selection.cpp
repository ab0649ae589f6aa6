#include "sosuq/selection.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sosuq/errors.hpp"
#include "sosuq/parallel.hpp"
#include "sosuq/rng.hpp"

namespace sosuq {

namespace {

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return std::string(buf);
}

double mask_mean(const std::vector<double>& values, const Mask& m) {
  double acc = 0.0;
  int n = 0;
  for (int i = 0; i < static_cast<int>(values.size()); ++i) {
    if (m.bits[i]) {
      acc += values[i];
      ++n;
    }
  }
  if (n == 0) throw ConfigError("mask_mean: empty mask");
  return acc / n;
}

double mask_median(const std::vector<double>& values, const Mask& m) {
  std::vector<double> v;
  v.reserve(m.count());
  for (int i = 0; i < static_cast<int>(values.size()); ++i)
    if (m.bits[i]) v.push_back(values[i]);
  if (v.empty()) throw ConfigError("mask_median: empty mask");
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  if (n % 2 == 1) return v[n / 2];
  return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace

std::string policy_name(PolicyKind k) {
  switch (k) {
    case PolicyKind::S1: return "S1";
    case PolicyKind::S3: return "S3";
    case PolicyKind::SR: return "SR";
    case PolicyKind::SI_inc: return "SI_inc";
    case PolicyKind::SI_rel: return "SI_rel";
  }
  throw ConfigError("policy_name: unknown policy kind");
}

PolicyKind parse_policy(const std::string& name) {
  if (name == "S1") return PolicyKind::S1;
  if (name == "S3") return PolicyKind::S3;
  if (name == "SR") return PolicyKind::SR;
  if (name == "SI_inc") return PolicyKind::SI_inc;
  if (name == "SI_rel") return PolicyKind::SI_rel;
  throw ConfigError("parse_policy: unknown policy '" + name +
                    "' (expected S1, S3, SR, SI_inc or SI_rel)");
}

FrameMetrics frame_metrics(const SosMap& uncertainty, const Mask& inclusion,
                           double ring_width_m) {
  if (!(uncertainty.grid == inclusion.grid))
    throw ConfigError("frame_metrics: uncertainty map and mask grids differ");
  if (inclusion.count() == 0)
    throw ConfigError("frame_metrics: empty inclusion mask");
  const Mask ring = background_ring(inclusion, ring_width_m);
  FrameMetrics fm;
  fm.u_inc = mask_mean(uncertainty.values, inclusion);
  fm.u_bkg = mask_mean(uncertainty.values, ring);
  fm.u_rel = std::abs(fm.u_inc - fm.u_bkg);
  return fm;
}

int select_frame(const AcquisitionSeries& series,
                 const std::vector<FrameMetrics>& per_frame,
                 const SelectionPolicy& policy) {
  const int n = static_cast<int>(series.frames.size());
  if (n == 0) throw ConfigError("select_frame: series has no frames");
  switch (policy.kind) {
    case PolicyKind::S1:
      return 0;
    case PolicyKind::S3:
      if (n < 3) throw ConfigError("select_frame: S3 needs at least 3 frames");
      return 2;
    case PolicyKind::SR: {
      Rng rng(derive_seed(policy.seed, "frame-random"));
      return static_cast<int>(rng.uniform_int(static_cast<uint64_t>(n)));
    }
    case PolicyKind::SI_inc:
    case PolicyKind::SI_rel: {
      if (static_cast<int>(per_frame.size()) != n)
        throw ConfigError("select_frame: need one FrameMetrics entry per frame");
      int best = 0;
      double best_u = policy.kind == PolicyKind::SI_inc ? per_frame[0].u_inc
                                                        : per_frame[0].u_rel;
      for (int f = 1; f < n; ++f) {
        const double u = policy.kind == PolicyKind::SI_inc ? per_frame[f].u_inc
                                                           : per_frame[f].u_rel;
        if (u < best_u) {  // strict: ties keep the lowest index
          best_u = u;
          best = f;
        }
      }
      return best;
    }
  }
  throw ConfigError("select_frame: unknown policy kind");
}

double delta_c(const SosMap& c, const Mask& inclusion, double ring_width_m) {
  if (!(c.grid == inclusion.grid))
    throw ConfigError("delta_c: map and mask grids differ");
  if (inclusion.count() == 0) throw ConfigError("delta_c: empty inclusion mask");
  const Mask ring = background_ring(inclusion, ring_width_m);
  return std::abs(mask_median(c.values, inclusion) - mask_median(c.values, ring));
}

double rmse(const SosMap& a, const SosMap& b) {
  if (!(a.grid == b.grid)) throw ConfigError("rmse: grids differ");
  const size_t n = a.values.size();
  if (n == 0) throw ConfigError("rmse: empty maps");
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double d = a.values[i] - b.values[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(n));
}

RocReport roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  const int n = static_cast<int>(scores.size());
  if (n == 0 || static_cast<int>(labels.size()) != n)
    throw ConfigError("roc_auc: scores and labels must be equal-length and non-empty");
  int n_pos = 0;
  for (int l : labels)
    if (l != 0) ++n_pos;
  const int n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw ConfigError("roc_auc: both classes must be present (AUC undefined)");
  for (double s : scores)
    if (!std::isfinite(s)) throw ConfigError("roc_auc: non-finite score");

  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](int i, int j) {
    if (scores[i] != scores[j]) return scores[i] > scores[j];
    return i < j;
  });

  RocReport rep;
  // Sweep thresholds descending; at each distinct score all tied samples
  // cross to the positive side together.
  int tp = 0, fp = 0;
  int best_tp = 0, best_fp = 0;
  double best_j = -1.0;
  double prev_tpr = 0.0, prev_fpr = 0.0;
  double auc = 0.0;
  int i = 0;
  while (i < n) {
    int j = i;
    const double thr = scores[order[i]];
    while (j < n && scores[order[j]] == thr) {
      if (labels[order[j]] != 0)
        ++tp;
      else
        ++fp;
      ++j;
    }
    const double tpr = static_cast<double>(tp) / n_pos;
    const double fpr = static_cast<double>(fp) / n_neg;
    auc += (fpr - prev_fpr) * (tpr + prev_tpr) * 0.5;
    rep.thresholds.push_back(thr);
    rep.sensitivity.push_back(tpr);
    rep.specificity.push_back(1.0 - fpr);
    const double jstat = tpr + (1.0 - fpr);
    if (jstat >= best_j) {  // >=: ties resolve to the lowest threshold
      best_j = jstat;
      best_tp = tp;
      best_fp = fp;
      rep.op_threshold = thr;
    }
    prev_tpr = tpr;
    prev_fpr = fpr;
    i = j;
  }
  rep.auc = auc;
  const int fn = n_pos - best_tp;
  const int tn = n_neg - best_fp;
  rep.op_sensitivity = static_cast<double>(best_tp) / n_pos;
  rep.op_specificity = static_cast<double>(tn) / n_neg;
  const double f1_den = best_tp + 0.5 * (best_fp + fn);
  rep.f1 = f1_den > 0.0 ? best_tp / f1_den : 0.0;
  return rep;
}

std::pair<double, double> wilcoxon_rank_sum(const std::vector<double>& a,
                                            const std::vector<double>& b) {
  const int n1 = static_cast<int>(a.size());
  const int n2 = static_cast<int>(b.size());
  if (n1 < 2 || n2 < 2)
    throw ConfigError("wilcoxon_rank_sum: both samples need at least 2 values");
  const int n = n1 + n2;
  std::vector<std::pair<double, int>> pool;  // (value, 1 if from a)
  pool.reserve(n);
  for (double v : a) {
    if (!std::isfinite(v)) throw ConfigError("wilcoxon_rank_sum: non-finite value");
    pool.emplace_back(v, 1);
  }
  for (double v : b) {
    if (!std::isfinite(v)) throw ConfigError("wilcoxon_rank_sum: non-finite value");
    pool.emplace_back(v, 0);
  }
  std::sort(pool.begin(), pool.end(),
            [](const auto& x, const auto& y) { return x.first < y.first; });

  double w = 0.0;       // rank sum of sample a, midranks on ties
  double tie_sum = 0.0; // sum of t^3 - t over tie groups
  int i = 0;
  while (i < n) {
    int j = i;
    while (j < n && pool[j].first == pool[i].first) ++j;
    const int t = j - i;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1..j
    for (int k = i; k < j; ++k)
      if (pool[k].second) w += midrank;
    tie_sum += static_cast<double>(t) * t * t - t;
    i = j;
  }

  const double mean = n1 * (n + 1) / 2.0;
  const double var =
      (static_cast<double>(n1) * n2 / 12.0) *
      ((n + 1) - tie_sum / (static_cast<double>(n) * (n - 1)));
  if (var <= 0.0) return {w, 1.0};  // all pooled values identical

  const double d = w - mean;
  const double d_adj = d > 0.0 ? std::max(d - 0.5, 0.0)
                               : std::min(d + 0.5, 0.0);  // continuity correction
  const double z = d_adj / std::sqrt(var);
  double p = std::erfc(std::abs(z) / std::sqrt(2.0));  // two-sided
  p = std::min(1.0, std::max(0.0, p));
  return {w, p};
}

namespace {

void validate_experiment(const std::vector<AcquisitionSeries>& scenes,
                         const ForwardModel& model, const PosteriorSampler& sampler,
                         const ExperimentConfig& cfg) {
  if (scenes.empty()) throw ConfigError("selection_experiment: no scenes");
  if (cfg.policies.empty()) throw ConfigError("selection_experiment: no policies");
  for (size_t i = 0; i < cfg.policies.size(); ++i)
    for (size_t j = i + 1; j < cfg.policies.size(); ++j)
      if (cfg.policies[i].kind == cfg.policies[j].kind)
        throw ConfigError("selection_experiment: duplicate policy " +
                          policy_name(cfg.policies[i].kind));
  const bool has_mcd = sampler.mcd_params != nullptr;
  const bool has_bvi = sampler.bvi != nullptr;
  if (has_mcd == has_bvi)
    throw ConfigError("selection_experiment: set exactly one posterior source");
  if (has_mcd && !(sampler.mcd_p >= 0.0 && sampler.mcd_p < 1.0))
    throw ConfigError("selection_experiment: dropout probability must be in [0, 1)");
  if (cfg.n_samples < 2)
    throw ConfigError("selection_experiment: need at least 2 posterior samples");
  if (!(cfg.ring_width_m > 0.0))
    throw ConfigError("selection_experiment: ring width must be positive");
  if (cfg.threads < 1) throw ConfigError("selection_experiment: threads must be >= 1");
  if (cfg.positive_label.empty())
    throw ConfigError("selection_experiment: positive label must be non-empty");
  const int n_meas = static_cast<int>(model.L.rows);
  for (const AcquisitionSeries& sc : scenes) {
    if (sc.id.empty()) throw ConfigError("selection_experiment: scene without id");
    if (sc.label.empty())
      throw ConfigError("selection_experiment: scene '" + sc.id + "' has no label");
    if (sc.frames.empty())
      throw ConfigError("selection_experiment: scene '" + sc.id + "' has no frames");
    if (!(sc.inclusion.grid == model.grid))
      throw ConfigError("selection_experiment: scene '" + sc.id +
                        "' mask grid differs from the model grid");
    if (sc.inclusion.count() == 0)
      throw ConfigError("selection_experiment: scene '" + sc.id +
                        "' has an empty inclusion mask");
    for (const MeasurementSet& f : sc.frames)
      if (f.size() != n_meas)
        throw ConfigError("selection_experiment: scene '" + sc.id +
                          "' frame size differs from the operator");
  }
}

} // namespace

std::string ExperimentReport::detail_csv() const {
  std::string out = "scene_id,policy,selected_frame,delta_c,u_inc,u_bkg,u_rel\n";
  for (const SceneRow& r : detail) {
    out += r.scene_id;
    out += ',';
    out += r.policy;
    out += ',';
    out += std::to_string(r.selected_frame);
    out += ',';
    out += fmt_g(r.delta_c);
    out += ',';
    out += fmt_g(r.u_inc);
    out += ',';
    out += fmt_g(r.u_bkg);
    out += ',';
    out += fmt_g(r.u_rel);
    out += '\n';
  }
  return out;
}

std::string ExperimentReport::summary_csv() const {
  std::string out = "policy,metric,value\n";
  for (const auto& [policy, metric, value] : summary) {
    out += policy;
    out += ',';
    out += metric;
    out += ',';
    out += fmt_g(value);
    out += '\n';
  }
  return out;
}

ExperimentReport selection_experiment(const std::vector<AcquisitionSeries>& scenes,
                                      const ForwardModel& model,
                                      const PosteriorSampler& sampler,
                                      const ExperimentConfig& cfg) {
  validate_experiment(scenes, model, sampler, cfg);

  const int n_scenes = static_cast<int>(scenes.size());
  std::vector<int> offset(n_scenes + 1, 0);
  for (int s = 0; s < n_scenes; ++s)
    offset[s + 1] = offset[s] + static_cast<int>(scenes[s].frames.size());
  const int total_frames = offset[n_scenes];

  // Per-frame posterior summaries, one independent seed per (scene, frame).
  std::vector<PosteriorSummary> summaries(total_frames);
  std::vector<FrameMetrics> metrics(total_frames);
  parallel_for(total_frames, cfg.threads, [&](int t) {
    int s = 0;
    while (offset[s + 1] <= t) ++s;
    const MeasurementSet& frame = scenes[s].frames[t - offset[s]];
    const uint64_t seed_t = derive_seed(cfg.seed, "frame-draws", static_cast<uint64_t>(t));
    if (sampler.mcd_params != nullptr) {
      McdConfig mc;
      mc.p = sampler.mcd_p;
      mc.n_samples = cfg.n_samples;
      mc.seed = seed_t;
      summaries[t] = mcd_summary(*sampler.mcd_params, model, frame, mc, 1);
    } else {
      summaries[t] = bvi_summary(*sampler.bvi, model, frame, cfg.n_samples, seed_t, 1);
    }
    metrics[t] = frame_metrics(summaries[t].deviation, scenes[s].inclusion,
                               cfg.ring_width_m);
  });

  ExperimentReport rep;
  const int n_policies = static_cast<int>(cfg.policies.size());
  std::vector<std::vector<double>> scores(n_policies,
                                          std::vector<double>(n_scenes, 0.0));
  std::vector<int> labels(n_scenes, 0);
  for (int s = 0; s < n_scenes; ++s)
    labels[s] = scenes[s].label == cfg.positive_label ? 1 : 0;

  for (int s = 0; s < n_scenes; ++s) {
    const AcquisitionSeries& scene = scenes[s];
    const std::vector<FrameMetrics> per_frame(metrics.begin() + offset[s],
                                              metrics.begin() + offset[s + 1]);
    for (int pi = 0; pi < n_policies; ++pi) {
      SelectionPolicy pol = cfg.policies[pi];
      if (pol.kind == PolicyKind::SR)
        pol.seed = derive_seed(cfg.seed ^ pol.seed, "sr-scene", static_cast<uint64_t>(s));
      const int sel = select_frame(scene, per_frame, pol);
      const PosteriorSummary& sum = summaries[offset[s] + sel];
      const double dc = delta_c(sum.mean, scene.inclusion, cfg.ring_width_m);
      scores[pi][s] = dc;
      SceneRow row;
      row.scene_id = scene.id;
      row.policy = policy_name(pol.kind);
      row.selected_frame = sel;
      row.delta_c = dc;
      row.u_inc = per_frame[sel].u_inc;
      row.u_bkg = per_frame[sel].u_bkg;
      row.u_rel = per_frame[sel].u_rel;
      rep.detail.push_back(std::move(row));
    }
  }
  std::sort(rep.detail.begin(), rep.detail.end(),
            [](const SceneRow& x, const SceneRow& y) {
              if (x.scene_id != y.scene_id) return x.scene_id < y.scene_id;
              return x.policy < y.policy;
            });

  for (int pi = 0; pi < n_policies; ++pi) {
    const std::string name = policy_name(cfg.policies[pi].kind);
    const RocReport roc = roc_auc(scores[pi], labels);
    rep.summary.emplace_back(name, "auc", roc.auc);
    rep.summary.emplace_back(name, "f1", roc.f1);
    rep.summary.emplace_back(name, "sensitivity", roc.op_sensitivity);
    rep.summary.emplace_back(name, "specificity", roc.op_specificity);
    rep.summary.emplace_back(name, "threshold", roc.op_threshold);
  }
  return rep;
}

void SceneGenConfig::validate() const {
  if (n_scenes < 2 || n_scenes % 2 != 0)
    throw ConfigError("SceneGenConfig: n_scenes must be even and >= 2");
  if (n_frames < 1) throw ConfigError("SceneGenConfig: n_frames must be >= 1");
  if (n_corrupted < 0 || n_corrupted > n_frames)
    throw ConfigError("SceneGenConfig: n_corrupted must be in [0, n_frames]");
  if (!(corruption_factor >= 1.0))
    throw ConfigError("SceneGenConfig: corruption_factor must be >= 1");
  if (!(noise_sigma_s >= 0.0))
    throw ConfigError("SceneGenConfig: noise_sigma_s must be >= 0");
  if (hr_factor < 1) throw ConfigError("SceneGenConfig: hr_factor must be >= 1");
  phantom_ca.validate();
  phantom_fa.validate();
}

std::vector<AcquisitionSeries> make_selection_scenes(const SceneGenConfig& cfg,
                                                     const GridSpec& image_grid,
                                                     const AcquisitionGeometry& geom,
                                                     double c0, int threads) {
  cfg.validate();
  geom.validate(image_grid);
  const GridSpec hr = refine_grid(image_grid, cfg.hr_factor);
  const ForwardModel sim = build_operator(hr, geom, c0, threads);

  const int n_ca = cfg.n_scenes / 2;
  std::vector<AcquisitionSeries> out(cfg.n_scenes);
  parallel_for(cfg.n_scenes, threads, [&](int i) {
    const bool is_ca = i < n_ca;
    const PhantomConfig& pc = is_ca ? cfg.phantom_ca : cfg.phantom_fa;

    // Redraw until the inclusion registers on the image grid (essentially
    // always the first attempt at sane resolutions).
    PhantomScene scene;
    Mask inclusion;
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      const uint64_t s0 =
          derive_seed(cfg.seed, "scene", static_cast<uint64_t>(i) * 128 + attempt);
      scene = sample_scene(s0, pc, image_grid.extent_x(), image_grid.extent_z());
      inclusion = rasterize_mask(scene, image_grid);
      placed = inclusion.count() > 0;
    }
    if (!placed)
      throw ConfigError("make_selection_scenes: could not place an inclusion");

    AcquisitionSeries series;
    char idbuf[32];
    std::snprintf(idbuf, sizeof idbuf, "scene_%03d", i);
    series.id = idbuf;
    series.label = is_ca ? "CA" : "FA";
    series.inclusion = std::move(inclusion);
    series.truth = rasterize_scene(scene, image_grid);

    const SlownessMap slow_hr = to_slowness(rasterize_scene(scene, hr));

    // Pick which frames receive the inflated noise level.
    std::vector<int> order(cfg.n_frames);
    for (int f = 0; f < cfg.n_frames; ++f) order[f] = f;
    Rng cr(derive_seed(cfg.seed, "scene-corrupt", static_cast<uint64_t>(i)));
    for (int f = 0; f < cfg.n_corrupted; ++f) {
      const int j = f + static_cast<int>(cr.uniform_int(cfg.n_frames - f));
      std::swap(order[f], order[j]);
    }
    std::vector<uint8_t> corrupted(cfg.n_frames, 0);
    for (int f = 0; f < cfg.n_corrupted; ++f) corrupted[order[f]] = 1;

    series.frames.reserve(cfg.n_frames);
    for (int f = 0; f < cfg.n_frames; ++f) {
      const double sigma =
          cfg.noise_sigma_s * (corrupted[f] ? cfg.corruption_factor : 1.0);
      const uint64_t fs = derive_seed(cfg.seed, "scene-frame",
                                      static_cast<uint64_t>(i) * cfg.n_frames + f);
      series.frames.push_back(simulate_measurements(sim, slow_hr, sigma, fs));
    }
    out[i] = std::move(series);
  });
  return out;
}

} // namespace sosuq
