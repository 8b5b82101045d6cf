#pragma once

#include <string>

#include "wz/scenario.hpp"
#include "wz/tensor.hpp"

// Space-time canvas: scenarios of varying size are placed top-left on a fixed
// H x W grid (links x 15-min bins) with a 0/1 mask over real cells. All
// channels are normalized to [0, 1].

namespace wz {

struct SpacetimeConfig {
  int canvas_h = 16;
  int canvas_w = 96;
  double s_max = 80.0;           // mph full scale
  double v_max = 2400.0;         // veh/h/lane full scale
  double link_length_scale = 0.8;
  double distance_scale = 5.0;
  // Adds two relative-time channels (minutes since start, minutes until end,
  // both /1440) behind channels 0-3.
  bool time_channels = false;

  int channels() const { return time_channels ? 6 : 4; }
  void validate() const;
};

// Channel order: 0 historical speed, 1 historical volume, 2 link length,
// 3 distance to work zone, then the optional time channels.
inline constexpr int kChanHistSpeed = 0;
inline constexpr int kChanHistVolume = 1;
inline constexpr int kChanLinkLength = 2;
inline constexpr int kChanDistance = 3;

// Positions in the normalized work-zone feature vector (build_wz_vector).
inline constexpr int kFeatStartTime = 0;
inline constexpr int kFeatDayOfWeek = 1;
inline constexpr int kFeatDuration = 2;
inline constexpr int kFeatLanesClosed = 3;
inline constexpr int kFeatLanesTotal = 4;
inline constexpr int kFeatRoadType = 5;
inline constexpr int kFeatOnRamp = 6;
inline constexpr int kFeatOffRamp = 7;

template <typename S>
struct SpaceTimeImage {
  Tensor<S> data;        // [H, W, C]
  Tensor<S> mask;        // [H, W], 1 on real cells
  int real_rows = 0;     // links
  int real_cols = 0;     // time bins
};

template <typename S>
struct Sample {
  std::string id;
  SpaceTimeImage<S> image;
  Tensor<S> features;    // [8] normalized work-zone descriptors
  Tensor<S> y_speed;     // [H, W] normalized actual speed, zero outside mask
  int y_incident = 0;

  const Tensor<S>& mask() const { return image.mask; }
};

double normalize_speed(double mph, const SpacetimeConfig& cfg);
double denormalize_speed(double unit, const SpacetimeConfig& cfg);

SpaceTimeImage<double> build_input_image(const ScenarioRecord& r, const SpacetimeConfig& cfg);

// Order: start/1440, dow/6, duration/1440, lanes_closed/6, lanes_total/6,
// road_type (freeway 0, arterial 1), has_on_ramp, has_off_ramp.
Tensor<double> build_wz_vector(const WorkZoneEvent& e);

Tensor<double> build_target(const ScenarioRecord& r, const SpacetimeConfig& cfg);

Sample<double> build_sample(const ScenarioRecord& r, const SpacetimeConfig& cfg);

template <typename S>
Sample<S> cast_sample(const Sample<double>& s) {
  Sample<S> out;
  out.id = s.id;
  out.image.data = s.image.data.template cast<S>();
  out.image.mask = s.image.mask.template cast<S>();
  out.image.real_rows = s.image.real_rows;
  out.image.real_cols = s.image.real_cols;
  out.features = s.features.template cast<S>();
  out.y_speed = s.y_speed.template cast<S>();
  out.y_incident = s.y_incident;
  return out;
}

// Binary PPM (P6) with a fixed three-stop colormap over [0, 1]:
//   0.0 -> (8, 29, 88), 0.5 -> (65, 182, 196), 1.0 -> (255, 255, 217),
// linear between stops, components truncated toward zero; masked cells are
// (128, 128, 128). `values` is [h, w]; mask may be empty (all real).
std::string render_heatmap(const Tensor<double>& values, const Tensor<double>& mask);

}  // namespace wz
