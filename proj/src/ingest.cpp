#include "wz/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "wz/corpus.hpp"
#include "wz/errors.hpp"

namespace wz {

namespace {

// Howard Hinnant's days-from-civil; exact for all proleptic Gregorian dates.
std::int64_t days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = static_cast<unsigned>((153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1);
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

bool days_in_month_ok(int y, int m, int d) {
  static const int lengths[12] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  if (m < 1 || m > 12 || d < 1) return false;
  int len = lengths[m - 1];
  const bool leap = (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
  if (m == 2 && leap) len = 29;
  return d <= len;
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::string cur;
  std::istringstream in(text);
  while (std::getline(in, cur)) {
    if (!cur.empty() && cur.back() == '\r') cur.pop_back();
    lines.push_back(cur);
  }
  return lines;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

bool to_double(const std::string& s, double& out) {
  try {
    std::size_t pos = 0;
    out = std::stod(s, &pos);
    return pos == s.size() && std::isfinite(out);
  } catch (const std::exception&) {
    return false;
  }
}

// A time series with holes: interior gaps up to max_gap bins are linearly
// interpolated; anything else is a reason to drop the event.
std::string fill_gaps(std::vector<double>& v, const std::vector<bool>& has, int max_gap) {
  const int n = static_cast<int>(v.size());
  int first = -1, last = -1;
  for (int i = 0; i < n; ++i)
    if (has[static_cast<std::size_t>(i)]) {
      if (first < 0) first = i;
      last = i;
    }
  if (first < 0) return "no readings in the window";
  if (first > 0) return "missing data in the first " + std::to_string(first) + " bin(s)";
  if (last < n - 1) return "missing data in the last " + std::to_string(n - 1 - last) + " bin(s)";
  int i = 0;
  while (i < n) {
    if (has[static_cast<std::size_t>(i)]) {
      ++i;
      continue;
    }
    int j = i;
    while (!has[static_cast<std::size_t>(j)]) ++j;  // bounded: last is present
    const int len = j - i;
    if (len > max_gap)
      return "gap of " + std::to_string(len) + " bins exceeds the " + std::to_string(max_gap) +
             "-bin interpolation limit";
    const double lo = v[static_cast<std::size_t>(i - 1)];
    const double hi = v[static_cast<std::size_t>(j)];
    for (int k = i; k < j; ++k)
      v[static_cast<std::size_t>(k)] =
          lo + (hi - lo) * static_cast<double>(k - i + 1) / static_cast<double>(len + 1);
    i = j;
  }
  return "";
}

}  // namespace

std::int64_t parse_iso_minutes(const std::string& iso) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  char z = 0;
  if (std::sscanf(iso.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%c", &y, &mo, &d, &h, &mi, &s, &z) != 7 ||
      z != 'Z')
    throw data_error("timestamp '" + iso + "' is not YYYY-MM-DDTHH:MM:SSZ");
  if (!days_in_month_ok(y, mo, d) || h < 0 || h > 23 || mi < 0 || mi > 59 || s < 0 || s > 59)
    throw data_error("timestamp '" + iso + "' has out-of-range fields");
  return days_from_civil(y, mo, d) * 1440 + h * 60 + mi;
}

int day_of_week_from_epoch_min(std::int64_t epoch_min) {
  const std::int64_t days = epoch_min >= 0 ? epoch_min / 1440 : (epoch_min - 1439) / 1440;
  return static_cast<int>(((days % 7) + 7 + 4) % 7);  // 1970-01-01 was a Thursday
}

ParsedEvents parse_events(const std::string& json_text) {
  Json doc;
  try {
    doc = Json::parse(json_text);
  } catch (const Json::parse_error& e) {
    throw data_error(std::string("event feed is not valid JSON: ") + e.what());
  }
  if (!doc.is_array()) throw data_error("event feed must be a JSON array");

  static const std::vector<std::string> keys = {
      "id",          "road_name",   "direction",  "begin_milepost",
      "start_date",  "end_date",    "lanes_total", "lanes_closed",
      "road_type",   "has_on_ramp", "has_off_ramp"};

  ParsedEvents out;
  std::set<std::string> seen_ids;
  for (const auto& j : doc) {
    std::string id = j.is_object() && j.contains("id") && j.at("id").is_string()
                         ? j.at("id").get<std::string>()
                         : "<unidentified>";
    try {
      if (!j.is_object()) throw data_error("event is not a JSON object");
      for (const auto& k : keys)
        if (!j.contains(k)) throw data_error("missing key '" + k + "'");
      for (const auto& [k, v] : j.items())
        if (std::find(keys.begin(), keys.end(), k) == keys.end())
          throw data_error("unknown key '" + k + "'");
      if (id == "<unidentified>" || id.empty()) throw data_error("id must be a non-empty string");
      if (!seen_ids.insert(id).second) throw data_error("duplicate event id");

      const std::int64_t raw_start = parse_iso_minutes(j.at("start_date").get<std::string>());
      const std::int64_t raw_end = parse_iso_minutes(j.at("end_date").get<std::string>());
      if (raw_end <= raw_start) throw data_error("end_date is not after start_date");
      const std::int64_t start = raw_start - (raw_start % 15);
      const std::int64_t end = raw_end + (15 - raw_end % 15) % 15;
      const std::int64_t duration = end - start;
      if (duration >= 1440) throw data_error("duration ≥ 24h");
      if (duration < 60) throw data_error("duration under 60 minutes");

      IngestEvent e;
      e.event.id = id;
      e.event.start_time = static_cast<int>(start % 1440);
      e.event.duration_min = static_cast<int>(duration);
      e.event.day_of_week = day_of_week_from_epoch_min(start);
      e.event.lanes_total = j.at("lanes_total").get<int>();
      e.event.lanes_closed = j.at("lanes_closed").get<int>();
      e.event.road_type = road_type_from_string(j.at("road_type").get<std::string>());
      e.event.has_on_ramp = j.at("has_on_ramp").get<bool>();
      e.event.has_off_ramp = j.at("has_off_ramp").get<bool>();
      e.event.milepost = j.at("begin_milepost").get<double>();
      e.event.validate();
      e.road_name = j.at("road_name").get<std::string>();
      e.direction = j.at("direction").get<std::string>();
      e.start_epoch_min = start;
      if (e.road_name.empty() || e.direction.empty())
        throw data_error("road_name and direction must be non-empty");
      out.events.push_back(std::move(e));
    } catch (const data_error& err) {
      out.skipped.push_back({id, err.what()});
    } catch (const Json::exception& err) {
      out.skipped.push_back({id, std::string("malformed field: ") + err.what()});
    }
  }
  return out;
}

ParsedSpeeds parse_speeds(const std::string& csv_text) {
  const auto lines = split_lines(csv_text);
  if (lines.empty() || lines[0] != "link_id,timestamp,speed_mph")
    throw data_error("speed CSV must start with header 'link_id,timestamp,speed_mph'");
  ParsedSpeeds out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto f = split_fields(lines[i]);
    double speed = 0;
    if (f.size() != 3 || f[0].empty() || !to_double(f[2], speed) || speed <= 0 || speed > 120) {
      ++out.skipped_rows;
      continue;
    }
    try {
      out.readings.push_back({f[0], parse_iso_minutes(f[1]), speed});
    } catch (const data_error&) {
      ++out.skipped_rows;
    }
  }
  return out;
}

ParsedLinks parse_links(const std::string& csv_text) {
  const auto lines = split_lines(csv_text);
  if (lines.empty() ||
      lines[0] != "link_id,road_name,direction,begin_milepost,end_milepost,length_miles")
    throw data_error(
        "link CSV must start with header "
        "'link_id,road_name,direction,begin_milepost,end_milepost,length_miles'");
  ParsedLinks out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto f = split_fields(lines[i]);
    double begin = 0, end = 0, length = 0;
    if (f.size() != 6 || f[0].empty() || f[1].empty() || f[2].empty() ||
        !to_double(f[3], begin) || !to_double(f[4], end) || !to_double(f[5], length)) {
      ++out.skipped_rows;
      continue;
    }
    const double span = end - begin;
    if (!(span > 0) || !(length > 0) || std::abs(length - span) > 0.1 * span) {
      ++out.skipped_rows;
      continue;
    }
    out.links.push_back({f[0], f[1], f[2], begin, end, length});
  }
  return out;
}

std::vector<std::string> parse_incident_ids(const std::string& csv_text) {
  const auto lines = split_lines(csv_text);
  if (lines.empty() || lines[0] != "event_id")
    throw data_error("incident CSV must start with header 'event_id'");
  std::vector<std::string> out;
  for (std::size_t i = 1; i < lines.size(); ++i)
    if (!lines[i].empty()) out.push_back(lines[i]);
  return out;
}

IngestResult match_and_bin(const std::vector<IngestEvent>& events,
                           const std::vector<LinkMeta>& links,
                           const std::vector<SpeedReading>& readings, const IngestConfig& cfg,
                           const std::vector<std::string>& incident_ids) {
  if (cfg.upstream_window_miles <= 0 || cfg.max_links < 1 || cfg.max_links > 16 ||
      cfg.default_volume < 0 || cfg.max_interp_gap_bins < 0 || cfg.min_weekday_days < 1)
    throw config_error("ingest settings invalid");

  std::map<std::string, std::vector<const SpeedReading*>> by_link;
  for (const auto& r : readings) by_link[r.link_id].push_back(&r);

  IngestResult out;
  for (const auto& ev : events) {
    const WorkZoneEvent& e = ev.event;
    const bool upstream_low = ev.direction == "N" || ev.direction == "E";

    // upstream selection: the near edge within the window, nearest first
    std::vector<std::pair<double, const LinkMeta*>> picked;
    for (const auto& l : links) {
      if (l.road_name != ev.road_name || l.direction != ev.direction) continue;
      const double near = upstream_low ? l.end_milepost : l.begin_milepost;
      const double d = upstream_low ? e.milepost - near : near - e.milepost;
      if (d < -1e-9 || d > cfg.upstream_window_miles + 1e-9) continue;
      picked.emplace_back(std::max(d, 0.0), &l);
    }
    std::sort(picked.begin(), picked.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first < b.first;
      return a.second->link_id < b.second->link_id;
    });
    std::set<std::string> used;
    std::vector<std::pair<double, const LinkMeta*>> unique;
    for (const auto& p : picked)
      if (used.insert(p.second->link_id).second) unique.push_back(p);
    if (unique.size() > static_cast<std::size_t>(cfg.max_links))
      unique.resize(static_cast<std::size_t>(cfg.max_links));
    if (unique.empty()) {
      out.skipped.push_back({e.id, "no upstream links found within the matching window"});
      continue;
    }

    const int bins = e.timesteps();
    const int rows = static_cast<int>(unique.size());
    const std::int64_t t0 = ev.start_epoch_min;
    const std::int64_t t1 = t0 + e.duration_min;

    // same-weekday stratification when enough reference days carry data
    std::set<std::int64_t> same_weekday_days;
    for (const auto& [d, l] : unique) {
      auto it = by_link.find(l->link_id);
      if (it == by_link.end()) continue;
      for (const SpeedReading* r : it->second) {
        if (r->epoch_min >= t0 && r->epoch_min < t1) continue;
        const std::int64_t day = r->epoch_min / 1440;
        if (day_of_week_from_epoch_min(r->epoch_min) == e.day_of_week)
          same_weekday_days.insert(day);
      }
    }
    const bool stratify =
        static_cast<int>(same_weekday_days.size()) >= cfg.min_weekday_days;

    Eigen::MatrixXd hist(rows, bins), act(rows, bins), vol(rows, bins);
    vol.setConstant(cfg.default_volume);
    std::string drop_reason;

    for (int r = 0; r < rows && drop_reason.empty(); ++r) {
      const LinkMeta& meta = *unique[static_cast<std::size_t>(r)].second;
      std::vector<double> a_sum(static_cast<std::size_t>(bins), 0);
      std::vector<long> a_n(static_cast<std::size_t>(bins), 0);
      std::vector<double> h_sum(static_cast<std::size_t>(bins), 0);
      std::vector<long> h_n(static_cast<std::size_t>(bins), 0);

      auto it = by_link.find(meta.link_id);
      if (it != by_link.end()) {
        for (const SpeedReading* rd : it->second) {
          if (rd->epoch_min >= t0 && rd->epoch_min < t1) {
            const auto j = static_cast<std::size_t>((rd->epoch_min - t0) / 15);
            a_sum[j] += rd->speed_mph;
            ++a_n[j];
            continue;
          }
          if (stratify && day_of_week_from_epoch_min(rd->epoch_min) != e.day_of_week) continue;
          const int tod = static_cast<int>(rd->epoch_min % 1440);
          const int rel = tod - e.start_time;
          const int j = (rel >= 0 ? rel : rel + 1440) / 15;
          if (j >= 0 && j < bins) {
            h_sum[static_cast<std::size_t>(j)] += rd->speed_mph;
            ++h_n[static_cast<std::size_t>(j)];
          }
        }
      }

      std::vector<double> a(static_cast<std::size_t>(bins), 0), h(static_cast<std::size_t>(bins), 0);
      std::vector<bool> a_has(static_cast<std::size_t>(bins), false),
          h_has(static_cast<std::size_t>(bins), false);
      for (int j = 0; j < bins; ++j) {
        const auto u = static_cast<std::size_t>(j);
        if (a_n[u] > 0) {
          a[u] = a_sum[u] / static_cast<double>(a_n[u]);
          a_has[u] = true;
        }
        if (h_n[u] > 0) {
          h[u] = h_sum[u] / static_cast<double>(h_n[u]);
          h_has[u] = true;
        }
      }
      std::string why = fill_gaps(a, a_has, cfg.max_interp_gap_bins);
      if (!why.empty()) {
        drop_reason = "link " + meta.link_id + " actual series: " + why;
        break;
      }
      why = fill_gaps(h, h_has, cfg.max_interp_gap_bins);
      if (!why.empty()) {
        drop_reason = "link " + meta.link_id + " historical series: " + why;
        break;
      }
      for (int j = 0; j < bins; ++j) {
        const auto u = static_cast<std::size_t>(j);
        const double hj = std::min(h[u], 90.0);
        hist(r, j) = hj;
        act(r, j) = std::clamp(a[u], 5.0, std::min(90.0, hj + 5.0));
      }
    }
    if (!drop_reason.empty()) {
      out.skipped.push_back({e.id, drop_reason});
      continue;
    }

    ScenarioRecord rec;
    rec.event = e;
    for (int r = 0; r < rows; ++r) {
      const LinkMeta& meta = *unique[static_cast<std::size_t>(r)].second;
      CorridorLink cl;
      cl.link_id = meta.link_id;
      cl.length_miles = meta.length_miles;
      cl.distance_to_workzone = unique[static_cast<std::size_t>(r)].first;
      cl.free_flow_speed = hist.row(r).maxCoeff();
      rec.corridor.links.push_back(std::move(cl));
    }
    rec.historical_speed = hist;
    rec.historical_volume = vol;
    rec.actual_speed = act;
    rec.incident = std::find(incident_ids.begin(), incident_ids.end(), e.id) != incident_ids.end();
    try {
      rec.validate();
    } catch (const data_error& err) {
      out.skipped.push_back({e.id, err.what()});
      continue;
    }
    out.records.push_back(std::move(rec));
  }

  std::sort(out.records.begin(), out.records.end(),
            [](const ScenarioRecord& a, const ScenarioRecord& b) { return a.event.id < b.event.id; });
  return out;
}

}  // namespace wz
