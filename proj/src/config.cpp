#include "wz/config.hpp"

#include <fstream>
#include <set>

#include "wz/errors.hpp"
#include "wz/version.hpp"

namespace wz {

namespace {

// Reads optional keys from one JSON object and rejects everything it was not
// asked about.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string what) : j_(j), what_(std::move(what)) {
    if (!j.is_object()) throw config_error(what_ + " must be a JSON object");
  }

  template <typename T>
  void get(const char* key, T& into) {
    known_.insert(key);
    if (!j_.contains(key)) return;
    try {
      into = j_.at(key).get<T>();
    } catch (const Json::exception&) {
      throw config_error(what_ + " key '" + key + "' has the wrong type");
    }
  }

  const Json* section(const char* key) {
    known_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!known_.count(k)) throw config_error(what_ + " has unknown key '" + k + "'");
  }

 private:
  const Json& j_;
  std::string what_;
  std::set<std::string> known_;
};

Json scenario_to_json(const ScenarioGenConfig& c) {
  return Json{{"min_links", c.min_links},
              {"max_links", c.max_links},
              {"min_link_length", c.min_link_length},
              {"max_link_length", c.max_link_length},
              {"min_corridor_length", c.min_corridor_length},
              {"freeway_ff_lo", c.freeway_ff_lo},
              {"freeway_ff_hi", c.freeway_ff_hi},
              {"arterial_ff_lo", c.arterial_ff_lo},
              {"arterial_ff_hi", c.arterial_ff_hi},
              {"p_freeway", c.p_freeway},
              {"p_on_ramp", c.p_on_ramp},
              {"p_off_ramp", c.p_off_ramp},
              {"base_volume_freeway_lo", c.base_volume_freeway_lo},
              {"base_volume_freeway_hi", c.base_volume_freeway_hi},
              {"base_volume_arterial_lo", c.base_volume_arterial_lo},
              {"base_volume_arterial_hi", c.base_volume_arterial_hi},
              {"peak_amplitude_lo", c.peak_amplitude_lo},
              {"peak_amplitude_hi", c.peak_amplitude_hi},
              {"morning_peak_center", c.morning_peak_center},
              {"morning_peak_width", c.morning_peak_width},
              {"evening_peak_center", c.evening_peak_center},
              {"evening_peak_width", c.evening_peak_width},
              {"evening_peak_scale", c.evening_peak_scale},
              {"weekend_demand_factor", c.weekend_demand_factor},
              {"link_volume_jitter", c.link_volume_jitter},
              {"speed_volume_slope", c.speed_volume_slope},
              {"max_volume", c.max_volume},
              {"capacity_per_lane", c.capacity_per_lane},
              {"jam_density", c.jam_density},
              {"congested_speed_factor", c.congested_speed_factor},
              {"min_speed", c.min_speed},
              {"max_speed", c.max_speed},
              {"noise_enabled", c.noise_enabled},
              {"actual_noise_mph", c.actual_noise_mph},
              {"historical_noise_mph", c.historical_noise_mph},
              {"transient_rate", c.transient_rate},
              {"transient_drop_lo", c.transient_drop_lo},
              {"transient_drop_hi", c.transient_drop_hi},
              {"incident_alpha0", c.incident_alpha0},
              {"incident_alpha_severity", c.incident_alpha_severity},
              {"incident_alpha_lanes", c.incident_alpha_lanes},
              {"severity_scale_mph", c.severity_scale_mph}};
}

void scenario_from_json(const Json& j, ScenarioGenConfig& c) {
  ObjectReader r(j, "config.scenario");
  r.get("min_links", c.min_links);
  r.get("max_links", c.max_links);
  r.get("min_link_length", c.min_link_length);
  r.get("max_link_length", c.max_link_length);
  r.get("min_corridor_length", c.min_corridor_length);
  r.get("freeway_ff_lo", c.freeway_ff_lo);
  r.get("freeway_ff_hi", c.freeway_ff_hi);
  r.get("arterial_ff_lo", c.arterial_ff_lo);
  r.get("arterial_ff_hi", c.arterial_ff_hi);
  r.get("p_freeway", c.p_freeway);
  r.get("p_on_ramp", c.p_on_ramp);
  r.get("p_off_ramp", c.p_off_ramp);
  r.get("base_volume_freeway_lo", c.base_volume_freeway_lo);
  r.get("base_volume_freeway_hi", c.base_volume_freeway_hi);
  r.get("base_volume_arterial_lo", c.base_volume_arterial_lo);
  r.get("base_volume_arterial_hi", c.base_volume_arterial_hi);
  r.get("peak_amplitude_lo", c.peak_amplitude_lo);
  r.get("peak_amplitude_hi", c.peak_amplitude_hi);
  r.get("morning_peak_center", c.morning_peak_center);
  r.get("morning_peak_width", c.morning_peak_width);
  r.get("evening_peak_center", c.evening_peak_center);
  r.get("evening_peak_width", c.evening_peak_width);
  r.get("evening_peak_scale", c.evening_peak_scale);
  r.get("weekend_demand_factor", c.weekend_demand_factor);
  r.get("link_volume_jitter", c.link_volume_jitter);
  r.get("speed_volume_slope", c.speed_volume_slope);
  r.get("max_volume", c.max_volume);
  r.get("capacity_per_lane", c.capacity_per_lane);
  r.get("jam_density", c.jam_density);
  r.get("congested_speed_factor", c.congested_speed_factor);
  r.get("min_speed", c.min_speed);
  r.get("max_speed", c.max_speed);
  r.get("noise_enabled", c.noise_enabled);
  r.get("actual_noise_mph", c.actual_noise_mph);
  r.get("historical_noise_mph", c.historical_noise_mph);
  r.get("transient_rate", c.transient_rate);
  r.get("transient_drop_lo", c.transient_drop_lo);
  r.get("transient_drop_hi", c.transient_drop_hi);
  r.get("incident_alpha0", c.incident_alpha0);
  r.get("incident_alpha_severity", c.incident_alpha_severity);
  r.get("incident_alpha_lanes", c.incident_alpha_lanes);
  r.get("severity_scale_mph", c.severity_scale_mph);
  r.finish();
}

Json spacetime_to_json(const SpacetimeConfig& c) {
  return Json{{"canvas_h", c.canvas_h},          {"canvas_w", c.canvas_w},
              {"s_max", c.s_max},                {"v_max", c.v_max},
              {"link_length_scale", c.link_length_scale},
              {"distance_scale", c.distance_scale},
              {"time_channels", c.time_channels}};
}

void spacetime_from_json(const Json& j, SpacetimeConfig& c) {
  ObjectReader r(j, "config.spacetime");
  r.get("canvas_h", c.canvas_h);
  r.get("canvas_w", c.canvas_w);
  r.get("s_max", c.s_max);
  r.get("v_max", c.v_max);
  r.get("link_length_scale", c.link_length_scale);
  r.get("distance_scale", c.distance_scale);
  r.get("time_channels", c.time_channels);
  r.finish();
}

Json model_to_json(const ModelConfig& c) {
  return Json{{"canvas_h", c.canvas_h},
              {"canvas_w", c.canvas_w},
              {"in_channels", c.in_channels},
              {"conv1_filters", c.conv1_filters},
              {"conv2_filters", c.conv2_filters},
              {"kernel", c.kernel},
              {"tab_features", c.tab_features},
              {"tab_hidden", c.tab_hidden},
              {"d_model", c.d_model},
              {"incident_hidden", c.incident_hidden},
              {"attention_enabled", c.attention_enabled}};
}

void model_from_json(const Json& j, ModelConfig& c) {
  ObjectReader r(j, "config.model");
  r.get("canvas_h", c.canvas_h);
  r.get("canvas_w", c.canvas_w);
  r.get("in_channels", c.in_channels);
  r.get("conv1_filters", c.conv1_filters);
  r.get("conv2_filters", c.conv2_filters);
  r.get("kernel", c.kernel);
  r.get("tab_features", c.tab_features);
  r.get("tab_hidden", c.tab_hidden);
  r.get("d_model", c.d_model);
  r.get("incident_hidden", c.incident_hidden);
  r.get("attention_enabled", c.attention_enabled);
  r.finish();
}

Json training_to_json(const TrainingConfig& c) {
  return Json{{"s_max", c.s_max},
              {"huber_delta_mph", c.huber_delta_mph},
              {"w_speed", c.w_speed},
              {"w_incident", c.w_incident},
              {"adam", Json{{"lr", c.adam.lr},
                            {"beta1", c.adam.beta1},
                            {"beta2", c.adam.beta2},
                            {"eps", c.adam.eps}}},
              {"batch_size", c.batch_size},
              {"max_epochs", c.max_epochs},
              {"patience", c.patience},
              {"improvement_eps", c.improvement_eps},
              {"seed", c.seed}};
}

void training_from_json(const Json& j, TrainingConfig& c) {
  ObjectReader r(j, "config.training");
  r.get("s_max", c.s_max);
  r.get("huber_delta_mph", c.huber_delta_mph);
  r.get("w_speed", c.w_speed);
  r.get("w_incident", c.w_incident);
  if (const Json* adam = r.section("adam")) {
    ObjectReader ra(*adam, "config.training.adam");
    ra.get("lr", c.adam.lr);
    ra.get("beta1", c.adam.beta1);
    ra.get("beta2", c.adam.beta2);
    ra.get("eps", c.adam.eps);
    ra.finish();
  }
  r.get("batch_size", c.batch_size);
  r.get("max_epochs", c.max_epochs);
  r.get("patience", c.patience);
  r.get("improvement_eps", c.improvement_eps);
  r.get("seed", c.seed);
  r.finish();
}

}  // namespace

void RunConfig::validate() const {
  scenario.validate();
  spacetime.validate();
  model.validate();
  training.validate();
  if (model.canvas_h != spacetime.canvas_h || model.canvas_w != spacetime.canvas_w)
    throw config_error("model canvas " + std::to_string(model.canvas_h) + "x" +
                       std::to_string(model.canvas_w) + " does not match spacetime canvas " +
                       std::to_string(spacetime.canvas_h) + "x" +
                       std::to_string(spacetime.canvas_w));
  if (model.in_channels != spacetime.channels())
    throw config_error("model expects " + std::to_string(model.in_channels) +
                       " input channels but the imaging stage emits " +
                       std::to_string(spacetime.channels()));
  if (training.s_max != spacetime.s_max)
    throw config_error("training s_max must equal the spacetime normalization scale");
}

Json run_config_to_json(const RunConfig& c) {
  return Json{{"schema_version", kSchemaVersion},
              {"scenario", scenario_to_json(c.scenario)},
              {"spacetime", spacetime_to_json(c.spacetime)},
              {"model", model_to_json(c.model)},
              {"training", training_to_json(c.training)}};
}

RunConfig run_config_from_json(const Json& j) {
  RunConfig c;
  ObjectReader r(j, "config");
  int schema = kSchemaVersion;
  r.get("schema_version", schema);
  if (schema != kSchemaVersion)
    throw config_error("config schema_version " + std::to_string(schema) +
                       " is not supported (expected " + std::to_string(kSchemaVersion) + ")");
  if (const Json* s = r.section("scenario")) scenario_from_json(*s, c.scenario);
  if (const Json* s = r.section("spacetime")) spacetime_from_json(*s, c.spacetime);
  if (const Json* s = r.section("model")) model_from_json(*s, c.model);
  if (const Json* s = r.section("training")) training_from_json(*s, c.training);
  r.finish();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw config_error("cannot open config file: " + path);
  Json j;
  try {
    j = Json::parse(f);
  } catch (const Json::parse_error& e) {
    throw config_error("config file is not valid JSON: " + std::string(e.what()));
  }
  return run_config_from_json(j);
}

}  // namespace wz
