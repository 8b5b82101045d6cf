#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wz/scenario.hpp"

// Ingestion of observed work zones: event JSON, link-metadata CSV, and
// speed-record CSV become ScenarioRecords via milepost-based upstream
// matching and 15-minute temporal binning. Per-record problems are skipped
// and logged, never fatal; only unreadable containers reject.

namespace wz {

struct IngestConfig {
  double upstream_window_miles = 5.0;
  int max_links = 16;
  double default_volume = 600.0;  // veh/h/lane stand-in when no volume feed exists
  int max_interp_gap_bins = 2;    // interior gaps longer than this drop the event
  int min_weekday_days = 3;       // same-weekday reference days needed to stratify
};

struct SpeedReading {
  std::string link_id;
  std::int64_t epoch_min = 0;  // UTC minutes since 1970-01-01, seconds floored
  double speed_mph = 0;
};

struct LinkMeta {
  std::string link_id;
  std::string road_name;
  std::string direction;  // N, S, E, W
  double begin_milepost = 0;
  double end_milepost = 0;
  double length_miles = 0;
};

// A parsed event plus the matching context that WorkZoneEvent does not carry.
struct IngestEvent {
  WorkZoneEvent event;             // start/duration snapped to the 15-min grid
  std::string road_name;
  std::string direction;
  std::int64_t start_epoch_min = 0;
};

struct SkipEntry {
  std::string id;
  std::string reason;
};

// "YYYY-MM-DDTHH:MM:SSZ" -> UTC minutes since epoch (seconds floored).
std::int64_t parse_iso_minutes(const std::string& iso);
int day_of_week_from_epoch_min(std::int64_t epoch_min);  // 0 = Sunday

struct ParsedEvents {
  std::vector<IngestEvent> events;
  std::vector<SkipEntry> skipped;
};
ParsedEvents parse_events(const std::string& json_text);

struct ParsedSpeeds {
  std::vector<SpeedReading> readings;
  long skipped_rows = 0;
};
ParsedSpeeds parse_speeds(const std::string& csv_text);

struct ParsedLinks {
  std::vector<LinkMeta> links;
  long skipped_rows = 0;
};
ParsedLinks parse_links(const std::string& csv_text);

// Optional incident flags: CSV with the single header column `event_id`.
std::vector<std::string> parse_incident_ids(const std::string& csv_text);

struct IngestResult {
  std::vector<ScenarioRecord> records;  // ordered by event id
  std::vector<SkipEntry> skipped;
};

IngestResult match_and_bin(const std::vector<IngestEvent>& events,
                           const std::vector<LinkMeta>& links,
                           const std::vector<SpeedReading>& readings,
                           const IngestConfig& cfg = {},
                           const std::vector<std::string>& incident_ids = {});

}  // namespace wz
