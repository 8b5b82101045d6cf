#include "wz/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "wz/errors.hpp"
#include "wz/version.hpp"

namespace wz {

namespace {
void check_triplet(const Tensor<double>& a, const Tensor<double>& b, const Tensor<double>& m,
                   const char* what) {
  if (!a.same_shape(b) || !a.same_shape(m))
    throw std::invalid_argument(std::string(what) + ": shape mismatch");
}
}  // namespace

void SpeedErrorAccum::add(const Tensor<double>& pred_mph, const Tensor<double>& truth_mph,
                          const Tensor<double>& mask) {
  check_triplet(pred_mph, truth_mph, mask, "speed_metrics");
  for (long i = 0; i < pred_mph.size(); ++i) {
    if (mask[i] == 0.0) continue;
    if (!(truth_mph[i] > 0))
      throw std::invalid_argument("speed_metrics: nonpositive truth on a masked cell");
    const double e = pred_mph[i] - truth_mph[i];
    abs_sum += std::abs(e);
    sq_sum += e * e;
    ape_sum += std::abs(e) / truth_mph[i];
    ++n;
  }
}

SpeedMetrics SpeedErrorAccum::finalize() const {
  if (n == 0) throw std::invalid_argument("speed_metrics: no masked cells");
  SpeedMetrics m;
  m.cells = n;
  m.mae = abs_sum / static_cast<double>(n);
  m.rmse = std::sqrt(sq_sum / static_cast<double>(n));
  m.mape_percent = 100.0 * ape_sum / static_cast<double>(n);
  return m;
}

SpeedMetrics speed_metrics(const Tensor<double>& pred_mph, const Tensor<double>& truth_mph,
                           const Tensor<double>& mask) {
  SpeedErrorAccum acc;
  acc.add(pred_mph, truth_mph, mask);
  return acc.finalize();
}

ClassificationMetrics classification_metrics(const std::vector<double>& p_incident,
                                             const std::vector<int>& labels, double threshold) {
  if (p_incident.size() != labels.size())
    throw std::invalid_argument("classification_metrics: size mismatch");
  ClassificationMetrics m;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool pred = p_incident[i] >= threshold;
    const bool truth = labels[i] != 0;
    if (pred && truth) ++m.tp;
    else if (pred && !truth) ++m.fp;
    else if (!pred && truth) ++m.fn;
    else ++m.tn;
  }
  m.degenerate_recall = (m.tp + m.fn) == 0;
  m.degenerate_precision = (m.tp + m.fp) == 0;
  m.recall = m.degenerate_recall ? 0.0 : static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
  m.precision =
      m.degenerate_precision ? 0.0 : static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp);
  m.f1 = (m.precision + m.recall) > 0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                                      : 0.0;
  return m;
}

Tensor<double> speed_drop_image(const Tensor<double>& hist_mph, const Tensor<double>& speed_mph,
                                const Tensor<double>& mask) {
  check_triplet(hist_mph, speed_mph, mask, "speed_drop_image");
  Tensor<double> d(hist_mph.shape());
  for (long i = 0; i < d.size(); ++i)
    d[i] = mask[i] != 0.0 ? std::max(0.0, hist_mph[i] - speed_mph[i]) : 0.0;
  return d;
}

std::optional<OtsuResult> otsu_threshold(const std::vector<double>& values) {
  if (values.empty()) return std::nullopt;
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it, hi = *hi_it;
  if (hi - lo < 1e-9) return std::nullopt;

  long hist[kOtsuBins] = {};
  for (double v : values) {
    int b = static_cast<int>((v - lo) / (hi - lo) * kOtsuBins);
    if (b >= kOtsuBins) b = kOtsuBins - 1;
    if (b < 0) b = 0;
    ++hist[b];
  }
  long total_w = 0, total_s = 0;
  for (int b = 0; b < kOtsuBins; ++b) {
    total_w += hist[b];
    total_s += hist[b] * static_cast<long>(b);
  }
  const double n = static_cast<double>(total_w);

  double best = -1.0;
  int best_cut = -1;
  long w0 = 0, s0 = 0;
  for (int cut = 1; cut < kOtsuBins; ++cut) {
    w0 += hist[cut - 1];
    s0 += hist[cut - 1] * static_cast<long>(cut - 1);
    const long w1 = total_w - w0, s1 = total_s - s0;
    if (w0 == 0 || w1 == 0) continue;
    // Same expression order as the exhaustive reference: integer prefix sums
    // keep the per-cut arithmetic bit-identical to a from-scratch recompute.
    const double mu0 = static_cast<double>(s0) / static_cast<double>(w0);
    const double mu1 = static_cast<double>(s1) / static_cast<double>(w1);
    const double var = (static_cast<double>(w0) / n) * (static_cast<double>(w1) / n) *
                       (mu0 - mu1) * (mu0 - mu1);
    if (var > best) {
      best = var;
      best_cut = cut;
    }
  }
  if (best_cut < 0) return std::nullopt;
  return OtsuResult{best_cut, lo + (hi - lo) * best_cut / static_cast<double>(kOtsuBins)};
}

std::optional<OtsuResult> otsu_threshold(const Tensor<double>& image, const Tensor<double>& mask) {
  if (!image.same_shape(mask)) throw std::invalid_argument("otsu_threshold: shape mismatch");
  std::vector<double> vals;
  vals.reserve(static_cast<std::size_t>(image.size()));
  for (long i = 0; i < image.size(); ++i)
    if (mask[i] != 0.0) vals.push_back(image[i]);
  return otsu_threshold(vals);
}

void congestion_attributes(CongestionRegion& region, const std::vector<double>& link_lengths) {
  if (region.cells.empty()) throw std::invalid_argument("congestion_attributes: empty region");
  region.min_row = region.max_row = region.cells[0].first;
  region.min_col = region.max_col = region.cells[0].second;
  for (const auto& [r, c] : region.cells) {
    region.min_row = std::min(region.min_row, r);
    region.max_row = std::max(region.max_row, r);
    region.min_col = std::min(region.min_col, c);
    region.max_col = std::max(region.max_col, c);
  }
  region.cell_count = static_cast<long>(region.cells.size());
  region.start_time_min = 15.0 * region.min_col;
  region.duration_min = 15.0 * (region.max_col - region.min_col + 1);

  // Max over columns of the summed lengths of that column's congested links.
  std::map<int, double> col_sum;
  for (const auto& [r, c] : region.cells) {
    if (r < 0 || static_cast<std::size_t>(r) >= link_lengths.size())
      throw std::invalid_argument("congestion_attributes: row outside corridor");
    col_sum[c] += link_lengths[static_cast<std::size_t>(r)];
  }
  region.max_queue_miles = 0;
  for (const auto& [c, s] : col_sum) {
    (void)c;
    region.max_queue_miles = std::max(region.max_queue_miles, s);
  }
}

std::vector<CongestionRegion> extract_congestion_regions(const Tensor<double>& drop_mph,
                                                         const Tensor<double>& mask,
                                                         const std::vector<double>& link_lengths) {
  if (!drop_mph.same_shape(mask))
    throw std::invalid_argument("extract_congestion_regions: shape mismatch");
  const auto th = otsu_threshold(drop_mph, mask);
  std::vector<CongestionRegion> out;
  if (!th) return out;

  const int h = drop_mph.dim(0), w = drop_mph.dim(1);
  std::vector<char> hot(static_cast<std::size_t>(h) * w, 0);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      hot[static_cast<std::size_t>(i) * w + j] =
          mask(i, j) != 0.0 && drop_mph(i, j) > th->threshold;

  std::vector<char> seen(hot.size(), 0);
  std::vector<std::pair<int, int>> stack;
  for (int si = 0; si < h; ++si) {
    for (int sj = 0; sj < w; ++sj) {
      const std::size_t sidx = static_cast<std::size_t>(si) * w + sj;
      if (!hot[sidx] || seen[sidx]) continue;
      CongestionRegion region;
      stack.assign(1, {si, sj});
      seen[sidx] = 1;
      while (!stack.empty()) {
        const auto [i, j] = stack.back();
        stack.pop_back();
        region.cells.emplace_back(i, j);
        const int di[4] = {-1, 1, 0, 0}, dj[4] = {0, 0, -1, 1};
        for (int d = 0; d < 4; ++d) {
          const int ni = i + di[d], nj = j + dj[d];
          if (ni < 0 || ni >= h || nj < 0 || nj >= w) continue;
          const std::size_t nidx = static_cast<std::size_t>(ni) * w + nj;
          if (hot[nidx] && !seen[nidx]) {
            seen[nidx] = 1;
            stack.push_back({ni, nj});
          }
        }
      }
      congestion_attributes(region, link_lengths);

      const bool spans_time = (region.max_col - region.min_col + 1) >= kMinRegionBins;
      bool vertical = false;
      {
        std::vector<char> cell(static_cast<std::size_t>(h) * w, 0);
        for (const auto& [r, c] : region.cells) cell[static_cast<std::size_t>(r) * w + c] = 1;
        for (int j = 0; j < w && !vertical; ++j)
          for (int i = 0; i + kMinRegionLinks - 1 < h; ++i) {
            bool run = true;
            for (int k = 0; k < kMinRegionLinks; ++k)
              if (!cell[static_cast<std::size_t>(i + k) * w + j]) {
                run = false;
                break;
              }
            if (run) {
              vertical = true;
              break;
            }
          }
      }
      if (spans_time && vertical) out.push_back(std::move(region));
    }
  }
  return out;
}

const CongestionRegion* primary_region(const std::vector<CongestionRegion>& regions) {
  const CongestionRegion* best = nullptr;
  for (const auto& r : regions) {
    if (!best || r.cell_count > best->cell_count ||
        (r.cell_count == best->cell_count &&
         (r.start_time_min < best->start_time_min ||
          (r.start_time_min == best->start_time_min && r.min_row < best->min_row))))
      best = &r;
  }
  return best;
}

double relative_improvement(double baseline, double model) {
  if (!(baseline > 0)) throw std::invalid_argument("relative_improvement: baseline must be > 0");
  return 100.0 * (baseline - model) / baseline;
}

CongestionComparison compare_congestion(
    const std::vector<std::optional<CongestionRegion>>& truth_primary,
    const std::vector<std::optional<CongestionRegion>>& pred_primary) {
  if (truth_primary.size() != pred_primary.size())
    throw std::invalid_argument("compare_congestion: size mismatch");
  CongestionComparison c;
  double ss_start = 0, ss_dur = 0, ss_queue = 0;
  for (std::size_t i = 0; i < truth_primary.size(); ++i) {
    const bool t = truth_primary[i].has_value(), p = pred_primary[i].has_value();
    if (t) ++c.truth_congested;
    if (t && p) {
      ++c.matched;
      const auto& a = *truth_primary[i];
      const auto& b = *pred_primary[i];
      ss_start += (a.start_time_min - b.start_time_min) * (a.start_time_min - b.start_time_min);
      ss_dur += (a.duration_min - b.duration_min) * (a.duration_min - b.duration_min);
      ss_queue += (a.max_queue_miles - b.max_queue_miles) * (a.max_queue_miles - b.max_queue_miles);
    } else if (t) {
      ++c.missed;
    } else if (p) {
      ++c.false_alarms;
    }
  }
  if (c.matched > 0) {
    const double n = static_cast<double>(c.matched);
    c.rmse_start_min = std::sqrt(ss_start / n);
    c.rmse_duration_min = std::sqrt(ss_dur / n);
    c.rmse_queue_miles = std::sqrt(ss_queue / n);
  }
  return c;
}

EvalCase make_eval_case(const Sample<double>& s, const ScenarioRecord& r,
                        const SpacetimeConfig& cfg) {
  EvalCase c;
  c.id = s.id;
  c.mask = s.image.mask;
  c.y_incident = s.y_incident;
  const int hgt = cfg.canvas_h, wid = cfg.canvas_w;
  c.hist_mph = Tensor<double>({hgt, wid});
  c.truth_mph = Tensor<double>({hgt, wid});
  for (int i = 0; i < hgt; ++i)
    for (int j = 0; j < wid; ++j) {
      c.hist_mph(i, j) = s.image.data(i, j, kChanHistSpeed) * cfg.s_max;
      c.truth_mph(i, j) = s.y_speed(i, j) * cfg.s_max;
    }
  for (const auto& l : r.corridor.links) c.link_lengths.push_back(l.length_miles);
  return c;
}

EvalReport evaluate_predictions(const std::vector<EvalCase>& cases,
                                const std::vector<EvalPrediction>& preds, double threshold,
                                const std::string& model_name) {
  if (cases.size() != preds.size())
    throw std::invalid_argument("evaluate_predictions: cases/predictions size mismatch");
  if (cases.empty()) throw std::invalid_argument("evaluate_predictions: empty split");

  EvalReport rep;
  rep.model_name = model_name;
  rep.samples = static_cast<long>(cases.size());

  SpeedErrorAccum acc;
  std::vector<double> probs;
  std::vector<int> labels;
  std::vector<std::optional<CongestionRegion>> truth_primary, pred_primary;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const EvalCase& c = cases[i];
    const EvalPrediction& p = preds[i];
    acc.add(p.y_speed_mph, c.truth_mph, c.mask);
    probs.push_back(p.p_incident);
    labels.push_back(c.y_incident);

    const auto truth_drop = speed_drop_image(c.hist_mph, c.truth_mph, c.mask);
    const auto pred_drop = speed_drop_image(c.hist_mph, p.y_speed_mph, c.mask);
    const auto tr = extract_congestion_regions(truth_drop, c.mask, c.link_lengths);
    const auto pr = extract_congestion_regions(pred_drop, c.mask, c.link_lengths);
    const CongestionRegion* tp = primary_region(tr);
    const CongestionRegion* pp = primary_region(pr);
    truth_primary.push_back(tp ? std::optional<CongestionRegion>(*tp) : std::nullopt);
    pred_primary.push_back(pp ? std::optional<CongestionRegion>(*pp) : std::nullopt);
  }
  rep.speed = acc.finalize();
  rep.classification = classification_metrics(probs, labels, threshold);
  rep.congestion = compare_congestion(truth_primary, pred_primary);
  return rep;
}

void add_improvements(EvalReport& report, const EvalReport& baseline) {
  std::map<std::string, double> imp;
  imp["mae"] = relative_improvement(baseline.speed.mae, report.speed.mae);
  imp["rmse"] = relative_improvement(baseline.speed.rmse, report.speed.rmse);
  imp["mape_percent"] = relative_improvement(baseline.speed.mape_percent, report.speed.mape_percent);
  const auto& bc = baseline.congestion;
  const auto& rc = report.congestion;
  if (bc.rmse_start_min && rc.rmse_start_min && *bc.rmse_start_min > 0)
    imp["rmse_start_min"] = relative_improvement(*bc.rmse_start_min, *rc.rmse_start_min);
  if (bc.rmse_duration_min && rc.rmse_duration_min && *bc.rmse_duration_min > 0)
    imp["rmse_duration_min"] = relative_improvement(*bc.rmse_duration_min, *rc.rmse_duration_min);
  if (bc.rmse_queue_miles && rc.rmse_queue_miles && *bc.rmse_queue_miles > 0)
    imp["rmse_queue_miles"] = relative_improvement(*bc.rmse_queue_miles, *rc.rmse_queue_miles);
  report.improvements[baseline.model_name] = std::move(imp);
}

Json eval_report_to_json(const EvalReport& r, const Json& config_echo) {
  auto opt = [](const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); };
  Json improvements = Json::object();
  for (const auto& [base, metrics] : r.improvements) {
    Json m = Json::object();
    for (const auto& [k, v] : metrics) m[k] = v;
    improvements[base] = std::move(m);
  }
  return Json{
      {"schema_version", kSchemaVersion},
      {"config", config_echo},
      {"model", r.model_name},
      {"samples", r.samples},
      {"speed",
       {{"mae", r.speed.mae}, {"rmse", r.speed.rmse}, {"mape_percent", r.speed.mape_percent},
        {"cells", r.speed.cells}}},
      {"classification",
       {{"recall", r.classification.recall},
        {"precision", r.classification.precision},
        {"f1", r.classification.f1},
        {"degenerate_recall", r.classification.degenerate_recall},
        {"degenerate_precision", r.classification.degenerate_precision},
        {"tp", r.classification.tp},
        {"fp", r.classification.fp},
        {"fn", r.classification.fn},
        {"tn", r.classification.tn}}},
      {"congestion",
       {{"rmse_start_min", opt(r.congestion.rmse_start_min)},
        {"rmse_duration_min", opt(r.congestion.rmse_duration_min)},
        {"rmse_queue_miles", opt(r.congestion.rmse_queue_miles)},
        {"truth_congested", r.congestion.truth_congested},
        {"matched", r.congestion.matched},
        {"missed", r.congestion.missed},
        {"false_alarms", r.congestion.false_alarms}}},
      {"improvements", std::move(improvements)}};
}

std::string eval_report_table(const std::vector<EvalReport>& reports) {
  std::ostringstream os;
  char buf[160];
  os << "speed field (masked cells)\n";
  std::snprintf(buf, sizeof buf, "  %-18s %10s %10s %10s\n", "model", "MAE", "RMSE", "MAPE%");
  os << buf;
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "  %-18s %10.3f %10.3f %10.2f\n", r.model_name.c_str(),
                  r.speed.mae, r.speed.rmse, r.speed.mape_percent);
    os << buf;
  }
  os << "congestion regions (matched primaries)\n";
  std::snprintf(buf, sizeof buf, "  %-18s %12s %12s %12s %8s\n", "model", "start RMSE",
                "dur RMSE", "queue RMSE", "matched");
  os << buf;
  auto fmt_opt = [](const std::optional<double>& v, char* b, std::size_t n) {
    if (v) std::snprintf(b, n, "%12.2f", *v);
    else std::snprintf(b, n, "%12s", "-");
  };
  for (const auto& r : reports) {
    char s1[16], s2[16], s3[16];
    fmt_opt(r.congestion.rmse_start_min, s1, sizeof s1);
    fmt_opt(r.congestion.rmse_duration_min, s2, sizeof s2);
    fmt_opt(r.congestion.rmse_queue_miles, s3, sizeof s3);
    std::snprintf(buf, sizeof buf, "  %-18s %s %s %s %8ld\n", r.model_name.c_str(), s1, s2, s3,
                  r.congestion.matched);
    os << buf;
  }
  os << "incident classification\n";
  std::snprintf(buf, sizeof buf, "  %-18s %10s %10s %10s\n", "model", "recall", "precision", "F1");
  os << buf;
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "  %-18s %10.3f %10.3f %10.3f%s\n", r.model_name.c_str(),
                  r.classification.recall, r.classification.precision, r.classification.f1,
                  (r.classification.degenerate_recall || r.classification.degenerate_precision)
                      ? "  (degenerate)"
                      : "");
    os << buf;
  }
  return os.str();
}

}  // namespace wz
