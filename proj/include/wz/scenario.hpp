#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

#include "wz/errors.hpp"
#include "wz/rng.hpp"

// Synthetic work-zone scenarios: corridor geometry, time-of-day demand
// profiles, and a point-queue bottleneck simulation that produces the ground
// truth speed field. All randomness flows through named SplitMix64 streams so
// a (seed, index) pair pins a scenario byte-for-byte.

namespace wz {

enum class RoadType { freeway, arterial };

std::string to_string(RoadType t);
RoadType road_type_from_string(const std::string& s);

// Time is binned at 15 minutes throughout. start_time is minutes after
// midnight on day_of_week (0 = Sunday); the window may run past midnight.
struct WorkZoneEvent {
  std::string id;
  int start_time = 0;
  int duration_min = 60;
  int day_of_week = 0;
  int lanes_closed = 1;
  int lanes_total = 2;
  RoadType road_type = RoadType::freeway;
  bool has_on_ramp = false;
  bool has_off_ramp = false;
  double milepost = 0.0;

  int end_time() const { return start_time + duration_min; }
  int timesteps() const { return duration_min / 15; }
  int time_of_day(int bin) const { return (start_time + 15 * bin) % 1440; }
  void validate() const;
};

// Links are ordered nearest-first upstream of the work zone;
// distance_to_workzone is the distance from the work zone to the link's near
// edge (0 for the adjacent link).
struct CorridorLink {
  std::string link_id;
  double length_miles = 0.0;
  double distance_to_workzone = 0.0;
  double free_flow_speed = 60.0;
};

struct Corridor {
  std::vector<CorridorLink> links;
  double total_length() const;
  void validate() const;
};

// Per-lane hourly volume and speed, one row per link, one column per 15-min
// bin of the work-zone window.
struct HistoricalProfiles {
  Eigen::MatrixXd speed;
  Eigen::MatrixXd volume;
};

struct QueueTrace {
  std::vector<double> queue_miles;      // end-of-bin queue length
  int first_oversaturated_bin = -1;     // first bin with demand > capacity
  double max_queue_miles = 0.0;
};

struct ScenarioRecord {
  WorkZoneEvent event;
  Corridor corridor;
  Eigen::MatrixXd historical_speed;
  Eigen::MatrixXd historical_volume;
  Eigen::MatrixXd actual_speed;
  bool incident = false;

  void validate() const;
};

struct IncidentDraw {
  bool label = false;
  double probability = 0.0;
  double severity = 0.0;
};

struct ScenarioGenConfig {
  // corridor geometry
  int min_links = 10, max_links = 16;
  double min_link_length = 0.2, max_link_length = 0.8;
  double min_corridor_length = 5.0;
  double freeway_ff_lo = 55.0, freeway_ff_hi = 70.0;
  double arterial_ff_lo = 35.0, arterial_ff_hi = 50.0;
  double p_freeway = 0.6;
  double p_on_ramp = 0.5, p_off_ramp = 0.5;

  // demand profile (per-lane veh/h)
  double base_volume_freeway_lo = 420.0, base_volume_freeway_hi = 880.0;
  double base_volume_arterial_lo = 300.0, base_volume_arterial_hi = 650.0;
  double peak_amplitude_lo = 0.5, peak_amplitude_hi = 1.0;
  double morning_peak_center = 450.0, morning_peak_width = 90.0;
  double evening_peak_center = 1020.0, evening_peak_width = 105.0;
  double evening_peak_scale = 0.9;
  double weekend_demand_factor = 0.7;
  double link_volume_jitter = 0.05;
  double speed_volume_slope = 0.35;
  double max_volume = 2400.0;

  // bottleneck physics
  double capacity_per_lane = 1800.0;  // veh/h/lane
  double jam_density = 120.0;         // veh/mi/lane
  double congested_speed_factor = 0.25;
  double min_speed = 5.0;
  double max_speed = 90.0;

  // measurement noise (uniform, switchable off for oracle runs)
  bool noise_enabled = true;
  double actual_noise_mph = 3.0;
  double historical_noise_mph = 1.5;

  // Sparse isolated slowdowns on the observed day (sensor glitches, brief
  // shockwaves). They anchor the drop-image threshold well above the noise
  // band so uncongested days do not segment into spurious regions.
  double transient_rate = 0.02;
  double transient_drop_lo = 10.0;
  double transient_drop_hi = 20.0;

  // incident likelihood: p = sigmoid(a0 + a_sev * severity + a_lanes * lanes_closed)
  double incident_alpha0 = -3.5;
  double incident_alpha_severity = 1.4;
  double incident_alpha_lanes = 0.35;
  double severity_scale_mph = 5.0;

  void validate() const;
};

// Relative demand lift at a given time of day (two Gaussian peaks).
double demand_peak_factor(double tod_min, const ScenarioGenConfig& cfg);

WorkZoneEvent sample_workzone(SplitMix64& rng, const ScenarioGenConfig& cfg, std::string id);
Corridor sample_corridor(SplitMix64& rng, const ScenarioGenConfig& cfg, RoadType road_type);
HistoricalProfiles historical_profiles(SplitMix64& rng, const Corridor& corridor,
                                       const WorkZoneEvent& event, const ScenarioGenConfig& cfg);

// Point-queue bottleneck: demand above reduced capacity accumulates in a
// queue whose spatial extent marks upstream links congested. Returns the
// actual speed field; optionally reports the queue trace.
Eigen::MatrixXd simulate_ground_truth(SplitMix64& rng, const Corridor& corridor,
                                      const WorkZoneEvent& event,
                                      const HistoricalProfiles& profiles,
                                      const ScenarioGenConfig& cfg, QueueTrace* trace = nullptr);

IncidentDraw incident_label(SplitMix64& rng, const WorkZoneEvent& event,
                            const Eigen::MatrixXd& historical_speed,
                            const Eigen::MatrixXd& actual_speed, const ScenarioGenConfig& cfg);

// Streams used per scenario index i (all relative to the corpus seed):
//   8i+0 event, 8i+1 corridor, 8i+2 profiles, 8i+3 simulation noise,
//   8i+4 incident draw.
inline constexpr std::uint64_t kStreamsPerScenario = 8;

ScenarioRecord generate_scenario(std::uint64_t seed, long index, const ScenarioGenConfig& cfg,
                                 QueueTrace* trace = nullptr);

}  // namespace wz
