#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "sosuq/forward_model.hpp"
#include "sosuq/grid.hpp"
#include "sosuq/phantom.hpp"
#include "sosuq/uncertainty.hpp"

namespace sosuq {

/// Repeated acquisitions of one scene: N measurement frames plus the
/// inclusion mask, class label, and (synthetic data) the ground truth.
struct AcquisitionSeries {
  std::string id;
  std::string label;  // "CA" (positive class) or "FA", or a synthetic class
  std::vector<MeasurementSet> frames;
  Mask inclusion;
  std::optional<SosMap> truth;
};

/// Per-frame trust surrogates: mean posterior uncertainty inside the
/// inclusion, in the surrounding background ring, and their absolute
/// difference. All in m/s.
struct FrameMetrics {
  double u_inc = 0.0;
  double u_bkg = 0.0;
  double u_rel = 0.0;
};

enum class PolicyKind { S1, S3, SR, SI_inc, SI_rel };

struct SelectionPolicy {
  PolicyKind kind = PolicyKind::S1;
  uint64_t seed = 0;  // used by SR only
};

std::string policy_name(PolicyKind k);
PolicyKind parse_policy(const std::string& name);

/// Mask means of an uncertainty map; the ring is background_ring(inclusion,
/// ring_width). Throws ConfigError when the inclusion or the ring is empty
/// or grids mismatch.
FrameMetrics frame_metrics(const SosMap& uncertainty, const Mask& inclusion,
                           double ring_width_m);

/// Frame choice: S1 -> 0, S3 -> 2 (requires N >= 3), SR -> seeded uniform
/// draw, SI_inc -> argmin u_inc, SI_rel -> argmin u_rel. Argmin ties break
/// to the lowest index.
int select_frame(const AcquisitionSeries& series,
                 const std::vector<FrameMetrics>& per_frame,
                 const SelectionPolicy& policy);

/// |median SoS inside inclusion - median SoS in the background ring|.
/// Medians of even-sized sets are the mean of the two central values.
double delta_c(const SosMap& c, const Mask& inclusion, double ring_width_m);

/// Root-mean-square error over all pixels; grids must match.
double rmse(const SosMap& a, const SosMap& b);

/// ROC analysis with positive class = higher score. The curve is swept over
/// all distinct score thresholds (descending; predict positive when score >=
/// threshold); ties cross simultaneously.
struct RocReport {
  std::vector<double> thresholds;   // distinct scores, descending
  std::vector<double> sensitivity;  // per threshold
  std::vector<double> specificity;  // per threshold
  double auc = 0.0;
  // Operating point maximizing sensitivity + specificity (lowest threshold
  // on ties) and the scores there.
  double op_threshold = 0.0;
  double op_sensitivity = 0.0;
  double op_specificity = 0.0;
  double f1 = 0.0;  // TP / (TP + (FP + FN)/2) at the operating point
};

/// labels[i] nonzero marks the positive class. Throws ConfigError when only
/// one class is present (AUC undefined).
RocReport roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

/// Unpaired two-sided Wilcoxon rank-sum test. Returns (rank-sum statistic of
/// sample a with midrank ties, p value) using the normal approximation with
/// tie-corrected variance and continuity correction; p = 1 when every value
/// is identical. Requires |a|, |b| >= 2.
std::pair<double, double> wilcoxon_rank_sum(const std::vector<double>& a,
                                            const std::vector<double>& b);

/// Posterior sampler used to reconstruct and score frames: exactly one of
/// the two sources must be set.
struct PosteriorSampler {
  const VnParams* mcd_params = nullptr;
  double mcd_p = 0.25;
  const BviPosterior* bvi = nullptr;
};

struct ExperimentConfig {
  std::vector<SelectionPolicy> policies;
  double ring_width_m = 5e-3;
  int n_samples = 100;  // posterior draws per frame
  uint64_t seed = 0;    // drives per-frame draw seeds and SR selections
  int threads = 1;
  std::string positive_label = "CA";
};

struct SceneRow {
  std::string scene_id;
  std::string policy;
  int selected_frame = 0;
  double delta_c = 0.0;
  double u_inc = 0.0, u_bkg = 0.0, u_rel = 0.0;
};

struct ExperimentReport {
  std::vector<SceneRow> detail;  // sorted by (scene_id, policy)
  /// (policy, metric, value) with metrics auc, f1, sensitivity, specificity,
  /// threshold per policy, in policy order.
  std::vector<std::tuple<std::string, std::string, double>> summary;

  std::string detail_csv() const;
  std::string summary_csv() const;
};

/// For every scene and frame, draws a posterior summary, computes frame
/// metrics from the deviation map, lets each policy select a frame, scores
/// the selected frame's posterior-mean reconstruction by delta_c, and
/// aggregates ROC metrics per policy across scenes. Deterministic given
/// cfg.seed for any thread count.
ExperimentReport selection_experiment(const std::vector<AcquisitionSeries>& scenes,
                                      const ForwardModel& model,
                                      const PosteriorSampler& sampler,
                                      const ExperimentConfig& cfg);

/// Synthetic multi-acquisition benchmark scenes: half high-contrast ("CA")
/// and half low-contrast ("FA") phantoms, each imaged n_frames times, with
/// n_corrupted random frames receiving corruption_factor-times the nominal
/// measurement noise.
struct SceneGenConfig {
  int n_scenes = 40;
  int n_frames = 4;
  int n_corrupted = 2;
  double corruption_factor = 5.0;
  double noise_sigma_s = 2e-9;
  int hr_factor = 2;
  uint64_t seed = 0;
  PhantomConfig phantom_ca{.contrast_min_mps = 25.0, .contrast_max_mps = 60.0,
                           .signed_contrast = false};
  PhantomConfig phantom_fa{.contrast_min_mps = 5.0, .contrast_max_mps = 15.0,
                           .signed_contrast = false};

  void validate() const;
};

std::vector<AcquisitionSeries> make_selection_scenes(const SceneGenConfig& cfg,
                                                     const GridSpec& image_grid,
                                                     const AcquisitionGeometry& geom,
                                                     double c0, int threads = 1);

} // namespace sosuq
