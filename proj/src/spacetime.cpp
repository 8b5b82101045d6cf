#include "wz/spacetime.hpp"

#include <algorithm>
#include <cmath>

#include "wz/errors.hpp"

namespace wz {

namespace {
double unit_clamp(double v) { return std::min(1.0, std::max(0.0, v)); }
}  // namespace

void SpacetimeConfig::validate() const {
  if (canvas_h <= 0 || canvas_w <= 0 || canvas_h % 4 != 0 || canvas_w % 4 != 0)
    throw config_error("canvas extents must be positive multiples of 4, got " +
                       std::to_string(canvas_h) + "x" + std::to_string(canvas_w));
  if (!(s_max > 0) || !(v_max > 0) || !(link_length_scale > 0) || !(distance_scale > 0))
    throw config_error("spacetime normalization scales must be positive");
}

double normalize_speed(double mph, const SpacetimeConfig& cfg) {
  return unit_clamp(mph / cfg.s_max);
}

double denormalize_speed(double unit, const SpacetimeConfig& cfg) { return unit * cfg.s_max; }

SpaceTimeImage<double> build_input_image(const ScenarioRecord& r, const SpacetimeConfig& cfg) {
  cfg.validate();
  const int links = static_cast<int>(r.corridor.links.size());
  const int bins = r.event.timesteps();
  if (links > cfg.canvas_h)
    throw data_error("scenario " + r.event.id + ": " + std::to_string(links) +
                     " links exceed canvas height " + std::to_string(cfg.canvas_h));
  if (bins > cfg.canvas_w)
    throw data_error("scenario " + r.event.id + ": " + std::to_string(bins) +
                     " time bins exceed canvas width " + std::to_string(cfg.canvas_w));

  SpaceTimeImage<double> img;
  img.data = Tensor<double>({cfg.canvas_h, cfg.canvas_w, cfg.channels()});
  img.mask = Tensor<double>({cfg.canvas_h, cfg.canvas_w});
  img.real_rows = links;
  img.real_cols = bins;

  for (int i = 0; i < links; ++i) {
    const auto& link = r.corridor.links[static_cast<std::size_t>(i)];
    for (int j = 0; j < bins; ++j) {
      img.mask(i, j) = 1.0;
      img.data(i, j, kChanHistSpeed) = unit_clamp(r.historical_speed(i, j) / cfg.s_max);
      img.data(i, j, kChanHistVolume) = unit_clamp(r.historical_volume(i, j) / cfg.v_max);
      img.data(i, j, kChanLinkLength) = unit_clamp(link.length_miles / cfg.link_length_scale);
      img.data(i, j, kChanDistance) = unit_clamp(link.distance_to_workzone / cfg.distance_scale);
      if (cfg.time_channels) {
        img.data(i, j, 4) = unit_clamp(15.0 * j / 1440.0);
        img.data(i, j, 5) = unit_clamp(15.0 * (bins - 1 - j) / 1440.0);
      }
    }
  }
  return img;
}

Tensor<double> build_wz_vector(const WorkZoneEvent& e) {
  Tensor<double> f({8});
  f[kFeatStartTime] = e.start_time / 1440.0;
  f[kFeatDayOfWeek] = e.day_of_week / 6.0;
  f[kFeatDuration] = e.duration_min / 1440.0;
  f[kFeatLanesClosed] = e.lanes_closed / 6.0;
  f[kFeatLanesTotal] = e.lanes_total / 6.0;
  f[kFeatRoadType] = e.road_type == RoadType::freeway ? 0.0 : 1.0;
  f[kFeatOnRamp] = e.has_on_ramp ? 1.0 : 0.0;
  f[kFeatOffRamp] = e.has_off_ramp ? 1.0 : 0.0;
  return f;
}

Tensor<double> build_target(const ScenarioRecord& r, const SpacetimeConfig& cfg) {
  const int links = static_cast<int>(r.corridor.links.size());
  const int bins = r.event.timesteps();
  Tensor<double> y({cfg.canvas_h, cfg.canvas_w});
  for (int i = 0; i < links; ++i)
    for (int j = 0; j < bins; ++j) y(i, j) = unit_clamp(r.actual_speed(i, j) / cfg.s_max);
  return y;
}

Sample<double> build_sample(const ScenarioRecord& r, const SpacetimeConfig& cfg) {
  Sample<double> s;
  s.id = r.event.id;
  s.image = build_input_image(r, cfg);
  s.features = build_wz_vector(r.event);
  s.y_speed = build_target(r, cfg);
  s.y_incident = r.incident ? 1 : 0;
  return s;
}

std::string render_heatmap(const Tensor<double>& values, const Tensor<double>& mask) {
  require_rank(values, 2, "render_heatmap values");
  const int h = values.dim(0), w = values.dim(1);
  const bool has_mask = mask.size() > 0;
  if (has_mask && mask.shape() != values.shape())
    throw std::invalid_argument("render_heatmap: mask shape differs from values");

  static constexpr double kStops[3][3] = {{8, 29, 88}, {65, 182, 196}, {255, 255, 217}};
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.reserve(out.size() + static_cast<std::size_t>(h) * w * 3);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      unsigned char rgb[3];
      if (has_mask && mask(i, j) == 0.0) {
        rgb[0] = rgb[1] = rgb[2] = 128;
      } else {
        const double v = unit_clamp(values(i, j));
        const int seg = v < 0.5 ? 0 : 1;
        const double t = (v - seg * 0.5) * 2.0;
        for (int c = 0; c < 3; ++c) {
          const double x = kStops[seg][c] + t * (kStops[seg + 1][c] - kStops[seg][c]);
          rgb[c] = static_cast<unsigned char>(x);  // truncation pins e.g. 0.25 -> (36,105,142)
        }
      }
      out.append(reinterpret_cast<const char*>(rgb), 3);
    }
  }
  return out;
}

}  // namespace wz
