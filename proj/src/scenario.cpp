#include "wz/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace wz {

namespace {

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

double clamp(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }

}  // namespace

std::string to_string(RoadType t) { return t == RoadType::freeway ? "freeway" : "arterial"; }

RoadType road_type_from_string(const std::string& s) {
  if (s == "freeway") return RoadType::freeway;
  if (s == "arterial") return RoadType::arterial;
  throw data_error("unknown road_type '" + s + "' (expected freeway|arterial)");
}

void WorkZoneEvent::validate() const {
  if (start_time < 0 || start_time >= 1440 || start_time % 15 != 0)
    throw data_error("event " + id + ": start_time " + std::to_string(start_time) +
                     " must be a multiple of 15 in [0, 1440)");
  if (duration_min < 60 || duration_min > 1425 || duration_min % 15 != 0)
    throw data_error("event " + id + ": duration " + std::to_string(duration_min) +
                     " must be a multiple of 15 in [60, 1425]");
  if (day_of_week < 0 || day_of_week > 6)
    throw data_error("event " + id + ": day_of_week out of range");
  if (lanes_total < 2 || lanes_total > 6 || lanes_closed < 1 || lanes_closed >= lanes_total)
    throw data_error("event " + id + ": need 1 <= lanes_closed < lanes_total <= 6, got " +
                     std::to_string(lanes_closed) + "/" + std::to_string(lanes_total));
}

double Corridor::total_length() const {
  double s = 0;
  for (const auto& l : links) s += l.length_miles;
  return s;
}

void Corridor::validate() const {
  if (links.empty() || links.size() > 16)
    throw data_error("corridor must have 1..16 links, got " + std::to_string(links.size()));
  double expect_dist = 0;
  for (std::size_t i = 0; i < links.size(); ++i) {
    const auto& l = links[i];
    if (!(l.length_miles > 0) || l.length_miles > 5.0)
      throw data_error("link " + l.link_id + ": length " + std::to_string(l.length_miles) +
                       " out of (0, 5]");
    if (l.distance_to_workzone < -1e-9)
      throw data_error("link " + l.link_id + ": negative distance to work zone");
    if (i > 0 && l.distance_to_workzone + 1e-9 < links[i - 1].distance_to_workzone)
      throw data_error("links must be ordered nearest-first (distance nondecreasing)");
    (void)expect_dist;
  }
}

void ScenarioRecord::validate() const {
  event.validate();
  corridor.validate();
  const auto rows = static_cast<Eigen::Index>(corridor.links.size());
  const auto cols = static_cast<Eigen::Index>(event.timesteps());
  for (const auto* m : {&historical_speed, &historical_volume, &actual_speed}) {
    if (m->rows() != rows || m->cols() != cols)
      throw data_error("scenario " + event.id + ": matrix is " + std::to_string(m->rows()) + "x" +
                       std::to_string(m->cols()) + ", expected " + std::to_string(rows) + "x" +
                       std::to_string(cols));
    if (!m->allFinite()) throw data_error("scenario " + event.id + ": non-finite matrix entry");
  }
  if ((historical_speed.array() <= 0).any() || (historical_speed.array() > 90).any())
    throw data_error("scenario " + event.id + ": historical speed outside (0, 90]");
  if ((actual_speed.array() < 5.0 - 1e-9).any())
    throw data_error("scenario " + event.id + ": actual speed below the 5 mph floor");
  if ((actual_speed.array() > 90).any())
    throw data_error("scenario " + event.id + ": actual speed above 90");
  if (((actual_speed - historical_speed).array() > 5.0 + 1e-9).any())
    throw data_error("scenario " + event.id + ": actual speed exceeds historical by more than 5 mph");
  if ((historical_volume.array() < 0).any())
    throw data_error("scenario " + event.id + ": negative volume");
}

void ScenarioGenConfig::validate() const {
  if (min_links < 1 || max_links > 16 || min_links > max_links)
    throw config_error("scenario link count bounds must satisfy 1 <= min <= max <= 16");
  if (!(min_link_length > 0) || min_link_length > max_link_length)
    throw config_error("scenario link length bounds invalid");
  if (min_corridor_length > max_links * max_link_length)
    throw config_error("min_corridor_length unreachable with the given link bounds");
  if (!(capacity_per_lane > 0) || !(jam_density > 0))
    throw config_error("capacity_per_lane and jam_density must be positive");
  if (congested_speed_factor <= 0 || congested_speed_factor >= 1)
    throw config_error("congested_speed_factor must be in (0, 1)");
  if (peak_amplitude_lo < 0 || peak_amplitude_lo > peak_amplitude_hi)
    throw config_error("peak amplitude bounds invalid");
  if (actual_noise_mph < 0 || historical_noise_mph < 0)
    throw config_error("noise magnitudes must be nonnegative");
  if (transient_rate < 0 || transient_rate > 1 || transient_drop_lo < 0 ||
      transient_drop_lo > transient_drop_hi)
    throw config_error("transient slowdown settings invalid");
  if (severity_scale_mph <= 0) throw config_error("severity_scale_mph must be positive");
}

double demand_peak_factor(double tod, const ScenarioGenConfig& cfg) {
  const double m = (tod - cfg.morning_peak_center) / cfg.morning_peak_width;
  const double e = (tod - cfg.evening_peak_center) / cfg.evening_peak_width;
  return std::exp(-m * m) + cfg.evening_peak_scale * std::exp(-e * e);
}

WorkZoneEvent sample_workzone(SplitMix64& rng, const ScenarioGenConfig& cfg, std::string id) {
  WorkZoneEvent e;
  e.id = std::move(id);
  e.road_type = rng.bernoulli(cfg.p_freeway) ? RoadType::freeway : RoadType::arterial;
  e.start_time = static_cast<int>(rng.uniform_int(0, 95)) * 15;
  // Triangular duration: 1..15 h with mode 8 h, then snapped to the grid.
  const double hours = 1.0 + 7.0 * (rng.uniform() + rng.uniform());
  e.duration_min = static_cast<int>(std::lround(hours * 60.0 / 15.0)) * 15;
  e.duration_min = std::max(60, std::min(1425, e.duration_min));
  e.day_of_week = static_cast<int>(rng.uniform_int(0, 6));
  e.lanes_total = static_cast<int>(
      e.road_type == RoadType::freeway ? rng.uniform_int(2, 6) : rng.uniform_int(2, 4));
  e.lanes_closed = static_cast<int>(rng.uniform_int(1, e.lanes_total - 1));
  e.has_on_ramp = rng.bernoulli(cfg.p_on_ramp);
  e.has_off_ramp = rng.bernoulli(cfg.p_off_ramp);
  e.milepost = rng.uniform(0.0, 300.0);
  e.validate();
  return e;
}

Corridor sample_corridor(SplitMix64& rng, const ScenarioGenConfig& cfg, RoadType road_type) {
  Corridor c;
  const int n = static_cast<int>(rng.uniform_int(cfg.min_links, cfg.max_links));
  double cum = 0.0;
  for (int i = 0; i < n; ++i) {
    // Lower bound keeps the target total reachable with the remaining links.
    const int remaining = n - 1 - i;
    const double lo = std::max(cfg.min_link_length,
                               cfg.min_corridor_length - cum - remaining * cfg.max_link_length);
    const double len = rng.uniform(std::min(lo, cfg.max_link_length), cfg.max_link_length);
    const double ff = road_type == RoadType::freeway
                          ? rng.uniform(cfg.freeway_ff_lo, cfg.freeway_ff_hi)
                          : rng.uniform(cfg.arterial_ff_lo, cfg.arterial_ff_hi);
    char buf[16];
    std::snprintf(buf, sizeof buf, "link%02d", i);
    c.links.push_back({buf, len, cum, ff});
    cum += len;
  }
  c.validate();
  return c;
}

HistoricalProfiles historical_profiles(SplitMix64& rng, const Corridor& corridor,
                                       const WorkZoneEvent& event, const ScenarioGenConfig& cfg) {
  const auto rows = static_cast<Eigen::Index>(corridor.links.size());
  const auto cols = static_cast<Eigen::Index>(event.timesteps());
  HistoricalProfiles p{Eigen::MatrixXd(rows, cols), Eigen::MatrixXd(rows, cols)};

  double base = event.road_type == RoadType::freeway
                    ? rng.uniform(cfg.base_volume_freeway_lo, cfg.base_volume_freeway_hi)
                    : rng.uniform(cfg.base_volume_arterial_lo, cfg.base_volume_arterial_hi);
  if (event.day_of_week == 0 || event.day_of_week == 6) base *= cfg.weekend_demand_factor;
  const double amp = rng.uniform(cfg.peak_amplitude_lo, cfg.peak_amplitude_hi);

  std::vector<double> link_scale(corridor.links.size());
  for (auto& s : link_scale) s = rng.uniform(1.0 - cfg.link_volume_jitter, 1.0 + cfg.link_volume_jitter);

  for (Eigen::Index i = 0; i < rows; ++i) {
    const double ff = corridor.links[static_cast<std::size_t>(i)].free_flow_speed;
    for (Eigen::Index j = 0; j < cols; ++j) {
      const double tod = event.time_of_day(static_cast<int>(j));
      const double vol = clamp(base * link_scale[static_cast<std::size_t>(i)] *
                                   (1.0 + amp * demand_peak_factor(tod, cfg)),
                               0.0, cfg.max_volume);
      double spd = ff * (1.0 - cfg.speed_volume_slope * vol / cfg.capacity_per_lane);
      if (cfg.noise_enabled && cfg.historical_noise_mph > 0)
        spd += rng.uniform(-cfg.historical_noise_mph, cfg.historical_noise_mph);
      p.volume(i, j) = vol;
      p.speed(i, j) = clamp(spd, cfg.min_speed, cfg.max_speed);
    }
  }
  return p;
}

Eigen::MatrixXd simulate_ground_truth(SplitMix64& rng, const Corridor& corridor,
                                      const WorkZoneEvent& event,
                                      const HistoricalProfiles& profiles,
                                      const ScenarioGenConfig& cfg, QueueTrace* trace) {
  const auto rows = static_cast<Eigen::Index>(corridor.links.size());
  const auto cols = static_cast<Eigen::Index>(event.timesteps());
  if (profiles.speed.rows() != rows || profiles.speed.cols() != cols)
    throw data_error("simulate_ground_truth: profile dimensions do not match corridor/event");

  const double reduced_capacity = cfg.capacity_per_lane * (event.lanes_total - event.lanes_closed);
  const double storage = cfg.jam_density * event.lanes_total;  // veh per queue-mile

  QueueTrace local;
  local.queue_miles.resize(static_cast<std::size_t>(cols));
  double queue_veh = 0.0;
  Eigen::MatrixXd actual(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    const double demand = profiles.volume(0, j) * event.lanes_total;  // total veh/h at the zone
    if (demand > reduced_capacity && local.first_oversaturated_bin < 0)
      local.first_oversaturated_bin = static_cast<int>(j);
    queue_veh = std::max(0.0, queue_veh + (demand - reduced_capacity) * 0.25);
    const double queue_mi = queue_veh / storage;
    local.queue_miles[static_cast<std::size_t>(j)] = queue_mi;
    local.max_queue_miles = std::max(local.max_queue_miles, queue_mi);

    for (Eigen::Index i = 0; i < rows; ++i) {
      const auto& link = corridor.links[static_cast<std::size_t>(i)];
      const bool congested = link.distance_to_workzone < queue_mi;
      double spd = congested ? std::max(cfg.min_speed, cfg.congested_speed_factor * link.free_flow_speed)
                             : profiles.speed(i, j);
      if (cfg.noise_enabled && cfg.actual_noise_mph > 0)
        spd += rng.uniform(-cfg.actual_noise_mph, cfg.actual_noise_mph);
      if (cfg.noise_enabled && cfg.transient_rate > 0 && rng.bernoulli(cfg.transient_rate))
        spd -= rng.uniform(cfg.transient_drop_lo, cfg.transient_drop_hi);
      actual(i, j) = clamp(spd, cfg.min_speed, std::min(cfg.max_speed, profiles.speed(i, j) + 5.0));
    }
  }
  if (trace) *trace = std::move(local);
  return actual;
}

IncidentDraw incident_label(SplitMix64& rng, const WorkZoneEvent& event,
                            const Eigen::MatrixXd& historical_speed,
                            const Eigen::MatrixXd& actual_speed, const ScenarioGenConfig& cfg) {
  if (historical_speed.rows() != actual_speed.rows() || historical_speed.cols() != actual_speed.cols())
    throw data_error("incident_label: speed matrices disagree in shape");
  IncidentDraw d;
  d.severity = (historical_speed - actual_speed).array().max(0.0).mean() / cfg.severity_scale_mph;
  d.probability = sigmoid(cfg.incident_alpha0 + cfg.incident_alpha_severity * d.severity +
                          cfg.incident_alpha_lanes * event.lanes_closed);
  d.label = rng.bernoulli(d.probability);
  return d;
}

ScenarioRecord generate_scenario(std::uint64_t seed, long index, const ScenarioGenConfig& cfg,
                                 QueueTrace* trace) {
  cfg.validate();
  const std::uint64_t base = static_cast<std::uint64_t>(index) * kStreamsPerScenario;
  char idbuf[16];
  std::snprintf(idbuf, sizeof idbuf, "wz%05ld", index);

  SplitMix64 rng_event = seeded_rng(seed, base + 0);
  SplitMix64 rng_corridor = seeded_rng(seed, base + 1);
  SplitMix64 rng_profiles = seeded_rng(seed, base + 2);
  SplitMix64 rng_noise = seeded_rng(seed, base + 3);
  SplitMix64 rng_incident = seeded_rng(seed, base + 4);

  ScenarioRecord r;
  r.event = sample_workzone(rng_event, cfg, idbuf);
  r.corridor = sample_corridor(rng_corridor, cfg, r.event.road_type);
  HistoricalProfiles profiles = historical_profiles(rng_profiles, r.corridor, r.event, cfg);
  r.actual_speed = simulate_ground_truth(rng_noise, r.corridor, r.event, profiles, cfg, trace);
  r.historical_speed = std::move(profiles.speed);
  r.historical_volume = std::move(profiles.volume);
  r.incident = incident_label(rng_incident, r.event, r.historical_speed, r.actual_speed, cfg).label;
  r.validate();
  return r;
}

}  // namespace wz
