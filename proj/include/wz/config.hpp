#pragma once

#include <string>

#include "wz/corpus.hpp"
#include "wz/model.hpp"
#include "wz/scenario.hpp"
#include "wz/spacetime.hpp"
#include "wz/train.hpp"

// One aggregate for every tunable in the pipeline. JSON files may set any
// subset of keys (missing keys keep the documented defaults); unknown keys
// are rejected at every nesting level so typos cannot silently fall back.

namespace wz {

struct RunConfig {
  ScenarioGenConfig scenario;
  SpacetimeConfig spacetime;
  ModelConfig model;
  TrainingConfig training;

  // Cross-module consistency on top of the per-module validations: the model
  // must consume exactly the canvas the imaging stage emits, and training
  // must denormalize with the same full scale.
  void validate() const;
};

Json run_config_to_json(const RunConfig& c);
RunConfig run_config_from_json(const Json& j);

// Parses the file as a (possibly partial) RunConfig over defaults.
RunConfig load_run_config(const std::string& path);

}  // namespace wz
