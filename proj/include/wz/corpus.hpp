#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "wz/scenario.hpp"

// Corpus container and on-disk format: a directory holding manifest.json
// (seed, counts, split assignment, schema version, config echo) plus one
// scenario_<id>.json per scenario with exactly the keys event, links,
// historical_speed, historical_volume, actual_speed, incident.

namespace wz {

using Json = nlohmann::json;

enum class Split { train, val, test };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct Corpus {
  std::uint64_t seed = 0;
  std::vector<ScenarioRecord> records;
  std::vector<Split> split;  // parallel to records
  Json config_echo = Json::object();

  std::vector<long> indices(Split s) const;
  void validate() const;
};

// FNV-1a over the id bytes; drives the corpus split so membership depends
// only on the id, never on generation order.
std::uint64_t fnv1a64(std::string_view s);

// Deterministic 70/15/15 split: ids ranked by (fnv1a64(id), id); the first
// 70% (rounded) are train, the next 15% (rounded) validation, the rest test.
// Sizes are exact up to rounding (±1), unlike independent per-id hashing.
std::vector<Split> assign_splits(const std::vector<std::string>& ids);

Corpus generate_corpus(long count, std::uint64_t seed, const ScenarioGenConfig& cfg,
                       Json config_echo = Json::object());

Json scenario_to_json(const ScenarioRecord& r);
ScenarioRecord scenario_from_json(const Json& j);

void write_corpus(const Corpus& c, const std::filesystem::path& dir);
Corpus read_corpus(const std::filesystem::path& dir);

}  // namespace wz
