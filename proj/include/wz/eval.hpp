#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "wz/corpus.hpp"
#include "wz/spacetime.hpp"
#include "wz/tensor.hpp"

// Evaluation: masked speed-field error metrics, incident classification
// metrics, and congestion analytics (Otsu-thresholded speed-drop regions with
// start/duration/queue attributes).

namespace wz {

struct SpeedMetrics {
  double mae = 0, rmse = 0, mape_percent = 0;
  long cells = 0;
};

SpeedMetrics speed_metrics(const Tensor<double>& pred_mph, const Tensor<double>& truth_mph,
                           const Tensor<double>& mask);

// Pools masked cell errors across samples before the final reduction.
struct SpeedErrorAccum {
  double abs_sum = 0, sq_sum = 0, ape_sum = 0;
  long n = 0;
  void add(const Tensor<double>& pred_mph, const Tensor<double>& truth_mph,
           const Tensor<double>& mask);
  SpeedMetrics finalize() const;
};

struct ClassificationMetrics {
  double recall = 0, precision = 0, f1 = 0;
  bool degenerate_recall = false;    // no positive labels
  bool degenerate_precision = false; // no positive predictions
  long tp = 0, fp = 0, fn = 0, tn = 0;
};

ClassificationMetrics classification_metrics(const std::vector<double>& p_incident,
                                             const std::vector<int>& labels,
                                             double threshold = 0.5);

// max(0, historical - speed), zeroed outside the mask.
Tensor<double> speed_drop_image(const Tensor<double>& hist_mph, const Tensor<double>& speed_mph,
                                const Tensor<double>& mask);

inline constexpr int kOtsuBins = 256;
inline constexpr int kMinRegionBins = 5;   // minimum time-bin span of a valid region
inline constexpr int kMinRegionLinks = 2;  // vertically consecutive links required

struct OtsuResult {
  int cut = 0;           // histogram cut index in [1, 255]
  double threshold = 0;  // value-space threshold: lo + (hi-lo) * cut / 256
};

// Exhaustive Otsu split of the masked values over a 256-bin histogram
// maximizing between-class variance; lowest cut wins ties. Returns nothing
// when the value span is below 1e-9 or all mass lands in one bin.
std::optional<OtsuResult> otsu_threshold(const std::vector<double>& values);
std::optional<OtsuResult> otsu_threshold(const Tensor<double>& image, const Tensor<double>& mask);

struct CongestionRegion {
  std::vector<std::pair<int, int>> cells;  // (link row, time col)
  int min_row = 0, max_row = 0, min_col = 0, max_col = 0;
  long cell_count = 0;
  double start_time_min = 0;
  double duration_min = 0;
  double max_queue_miles = 0;
};

void congestion_attributes(CongestionRegion& region, const std::vector<double>& link_lengths);

// Binarizes the drop image at the Otsu threshold, finds 4-connected
// components over masked cells, and keeps regions spanning >= kMinRegionBins
// columns with >= kMinRegionLinks vertically consecutive rows in some column.
std::vector<CongestionRegion> extract_congestion_regions(const Tensor<double>& drop_mph,
                                                         const Tensor<double>& mask,
                                                         const std::vector<double>& link_lengths);

// Largest cell count; ties to earliest start, then smallest top row.
const CongestionRegion* primary_region(const std::vector<CongestionRegion>& regions);

// Percent error reduction of `model` relative to `baseline` (must be > 0).
double relative_improvement(double baseline, double model);

struct CongestionComparison {
  std::optional<double> rmse_start_min, rmse_duration_min, rmse_queue_miles;
  long truth_congested = 0, matched = 0, missed = 0, false_alarms = 0;
};

CongestionComparison compare_congestion(
    const std::vector<std::optional<CongestionRegion>>& truth_primary,
    const std::vector<std::optional<CongestionRegion>>& pred_primary);

// ---------------------------------------------------------------------------
// Whole-split evaluation

struct EvalCase {
  std::string id;
  Tensor<double> hist_mph;   // canvas, denormalized channel 0
  Tensor<double> truth_mph;  // canvas, denormalized target
  Tensor<double> mask;
  int y_incident = 0;
  std::vector<double> link_lengths;
};

EvalCase make_eval_case(const Sample<double>& s, const ScenarioRecord& r,
                        const SpacetimeConfig& cfg);

struct EvalPrediction {
  Tensor<double> y_speed_mph;
  double p_incident = 0;  // P(incident = 1)
};

struct EvalReport {
  std::string model_name;
  long samples = 0;
  SpeedMetrics speed;
  ClassificationMetrics classification;
  CongestionComparison congestion;
  // baseline name -> metric name -> percent improvement
  std::map<std::string, std::map<std::string, double>> improvements;
};

EvalReport evaluate_predictions(const std::vector<EvalCase>& cases,
                                const std::vector<EvalPrediction>& preds, double threshold,
                                const std::string& model_name);

// Improvement of `report` over `baseline` on every shared error metric.
void add_improvements(EvalReport& report, const EvalReport& baseline);

Json eval_report_to_json(const EvalReport& r, const Json& config_echo);
std::string eval_report_table(const std::vector<EvalReport>& reports);

}  // namespace wz
