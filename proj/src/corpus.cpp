#include "wz/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "wz/errors.hpp"
#include "wz/version.hpp"

namespace wz {

namespace {

Json matrix_to_json(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const Json& j, const std::string& what) {
  if (!j.is_array() || j.empty() || !j[0].is_array())
    throw data_error(what + ": expected a non-empty 2-d array");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (static_cast<Eigen::Index>(j[i].size()) != cols)
      throw data_error(what + ": ragged rows");
    for (Eigen::Index c = 0; c < cols; ++c) {
      if (!j[i][c].is_number()) throw data_error(what + ": non-numeric entry");
      m(i, c) = j[i][c].get<double>();
    }
  }
  return m;
}

void require_keys_exact(const Json& j, const std::vector<std::string>& keys,
                        const std::string& what) {
  if (!j.is_object()) throw data_error(what + ": expected a JSON object");
  for (const auto& k : keys)
    if (!j.contains(k)) throw data_error(what + ": missing key '" + k + "'");
  for (const auto& [k, v] : j.items()) {
    (void)v;
    if (std::find(keys.begin(), keys.end(), k) == keys.end())
      throw data_error(what + ": unexpected key '" + k + "'");
  }
}

void write_file(const std::filesystem::path& p, const std::string& body) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw data_error("cannot open " + p.string() + " for writing");
  os << body;
  if (!os) throw data_error("write failed for " + p.string());
}

Json read_json_file(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw data_error("cannot open " + p.string());
  Json j;
  try {
    is >> j;
  } catch (const Json::parse_error& e) {
    throw data_error(p.string() + ": " + e.what());
  }
  return j;
}

}  // namespace

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  throw std::logic_error("bad split");
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw data_error("unknown split '" + s + "' (expected train|val|test)");
}

std::vector<long> Corpus::indices(Split s) const {
  std::vector<long> out;
  for (std::size_t i = 0; i < split.size(); ++i)
    if (split[i] == s) out.push_back(static_cast<long>(i));
  return out;
}

void Corpus::validate() const {
  if (records.size() != split.size())
    throw data_error("corpus: split assignment does not cover all records");
  for (const auto& r : records) r.validate();
}

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

std::vector<Split> assign_splits(const std::vector<std::string>& ids) {
  const long n = static_cast<long>(ids.size());
  std::vector<long> order(ids.size());
  std::iota(order.begin(), order.end(), 0L);
  std::sort(order.begin(), order.end(), [&](long a, long b) {
    const auto ha = fnv1a64(ids[static_cast<std::size_t>(a)]);
    const auto hb = fnv1a64(ids[static_cast<std::size_t>(b)]);
    if (ha != hb) return ha < hb;
    return ids[static_cast<std::size_t>(a)] < ids[static_cast<std::size_t>(b)];
  });
  const long n_train = std::lround(0.70 * static_cast<double>(n));
  const long n_val = std::lround(0.15 * static_cast<double>(n));
  std::vector<Split> out(ids.size(), Split::test);
  for (long r = 0; r < n; ++r) {
    const long idx = order[static_cast<std::size_t>(r)];
    out[static_cast<std::size_t>(idx)] =
        r < n_train ? Split::train : (r < n_train + n_val ? Split::val : Split::test);
  }
  return out;
}

Corpus generate_corpus(long count, std::uint64_t seed, const ScenarioGenConfig& cfg,
                       Json config_echo) {
  if (count < 20)
    throw config_error("corpus size must be at least 20, got " + std::to_string(count));
  cfg.validate();
  Corpus c;
  c.seed = seed;
  c.config_echo = std::move(config_echo);
  c.records.reserve(static_cast<std::size_t>(count));
  std::vector<std::string> ids;
  ids.reserve(static_cast<std::size_t>(count));
  for (long i = 0; i < count; ++i) {
    c.records.push_back(generate_scenario(seed, i, cfg));
    ids.push_back(c.records.back().event.id);
  }
  c.split = assign_splits(ids);
  return c;
}

Json scenario_to_json(const ScenarioRecord& r) {
  Json event{{"id", r.event.id},
             {"start_time", r.event.start_time},
             {"duration_min", r.event.duration_min},
             {"day_of_week", r.event.day_of_week},
             {"lanes_closed", r.event.lanes_closed},
             {"lanes_total", r.event.lanes_total},
             {"road_type", to_string(r.event.road_type)},
             {"has_on_ramp", r.event.has_on_ramp},
             {"has_off_ramp", r.event.has_off_ramp},
             {"milepost", r.event.milepost}};
  Json links = Json::array();
  for (const auto& l : r.corridor.links)
    links.push_back({{"link_id", l.link_id},
                     {"length_miles", l.length_miles},
                     {"distance_to_workzone", l.distance_to_workzone},
                     {"free_flow_speed", l.free_flow_speed}});
  return Json{{"event", std::move(event)},
              {"links", std::move(links)},
              {"historical_speed", matrix_to_json(r.historical_speed)},
              {"historical_volume", matrix_to_json(r.historical_volume)},
              {"actual_speed", matrix_to_json(r.actual_speed)},
              {"incident", r.incident}};
}

ScenarioRecord scenario_from_json(const Json& j) {
  require_keys_exact(j, {"event", "links", "historical_speed", "historical_volume",
                         "actual_speed", "incident"},
                     "scenario");
  const Json& e = j.at("event");
  require_keys_exact(e,
                     {"id", "start_time", "duration_min", "day_of_week", "lanes_closed",
                      "lanes_total", "road_type", "has_on_ramp", "has_off_ramp", "milepost"},
                     "scenario event");
  ScenarioRecord r;
  try {
    r.event.id = e.at("id").get<std::string>();
    r.event.start_time = e.at("start_time").get<int>();
    r.event.duration_min = e.at("duration_min").get<int>();
    r.event.day_of_week = e.at("day_of_week").get<int>();
    r.event.lanes_closed = e.at("lanes_closed").get<int>();
    r.event.lanes_total = e.at("lanes_total").get<int>();
    r.event.road_type = road_type_from_string(e.at("road_type").get<std::string>());
    r.event.has_on_ramp = e.at("has_on_ramp").get<bool>();
    r.event.has_off_ramp = e.at("has_off_ramp").get<bool>();
    r.event.milepost = e.at("milepost").get<double>();
    for (const auto& lj : j.at("links")) {
      require_keys_exact(lj, {"link_id", "length_miles", "distance_to_workzone", "free_flow_speed"},
                         "scenario link");
      r.corridor.links.push_back({lj.at("link_id").get<std::string>(),
                                  lj.at("length_miles").get<double>(),
                                  lj.at("distance_to_workzone").get<double>(),
                                  lj.at("free_flow_speed").get<double>()});
    }
    r.historical_speed = matrix_from_json(j.at("historical_speed"), "historical_speed");
    r.historical_volume = matrix_from_json(j.at("historical_volume"), "historical_volume");
    r.actual_speed = matrix_from_json(j.at("actual_speed"), "actual_speed");
    r.incident = j.at("incident").get<bool>();
  } catch (const Json::exception& ex) {
    throw data_error(std::string("scenario parse: ") + ex.what());
  }
  r.validate();
  return r;
}

void write_corpus(const Corpus& c, const std::filesystem::path& dir) {
  c.validate();
  std::filesystem::create_directories(dir);
  Json splits = Json::object();
  Json counts{{"train", 0}, {"val", 0}, {"test", 0}};
  for (std::size_t i = 0; i < c.records.size(); ++i) {
    const std::string& id = c.records[i].event.id;
    const std::string s = to_string(c.split[i]);
    if (splits.contains(id)) throw data_error("duplicate scenario id '" + id + "'");
    splits[id] = s;
    counts[s] = counts[s].get<int>() + 1;
    write_file(dir / ("scenario_" + id + ".json"), scenario_to_json(c.records[i]).dump());
  }
  Json manifest{{"schema_version", kSchemaVersion},
                {"seed", c.seed},
                {"count", c.records.size()},
                {"counts", std::move(counts)},
                {"splits", std::move(splits)},
                {"config", c.config_echo}};
  write_file(dir / "manifest.json", manifest.dump(2));
}

Corpus read_corpus(const std::filesystem::path& dir) {
  const Json manifest = read_json_file(dir / "manifest.json");
  for (const char* k : {"schema_version", "seed", "count", "counts", "splits", "config"})
    if (!manifest.contains(k)) throw data_error("manifest.json: missing key '" + std::string(k) + "'");
  if (manifest.at("schema_version").get<int>() != kSchemaVersion)
    throw data_error("manifest.json: unsupported schema_version");
  Corpus c;
  c.seed = manifest.at("seed").get<std::uint64_t>();
  c.config_echo = manifest.at("config");
  const Json& splits = manifest.at("splits");
  // nlohmann objects iterate in key order, so read-back order is stable.
  for (const auto& [id, sp] : splits.items()) {
    const Json sj = read_json_file(dir / ("scenario_" + id + ".json"));
    ScenarioRecord r = scenario_from_json(sj);
    if (r.event.id != id)
      throw data_error("scenario file for '" + id + "' contains id '" + r.event.id + "'");
    c.records.push_back(std::move(r));
    c.split.push_back(split_from_string(sp.get<std::string>()));
  }
  if (c.records.size() != manifest.at("count").get<std::size_t>())
    throw data_error("manifest count does not match scenario files");
  c.validate();
  return c;
}

}  // namespace wz
