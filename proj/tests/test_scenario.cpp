#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "wz/corpus.hpp"
#include "wz/scenario.hpp"

using wz::ScenarioGenConfig;
using wz::SplitMix64;

namespace {
ScenarioGenConfig quiet_config() {
  ScenarioGenConfig cfg;
  cfg.noise_enabled = false;
  return cfg;
}
}  // namespace

TEST_CASE("generate_scenario is deterministic in (seed, index)") {
  ScenarioGenConfig cfg;
  auto a = wz::generate_scenario(5, 3, cfg);
  auto b = wz::generate_scenario(5, 3, cfg);
  CHECK(a.event.id == b.event.id);
  CHECK(a.event.start_time == b.event.start_time);
  CHECK(a.corridor.links.size() == b.corridor.links.size());
  CHECK((a.historical_speed - b.historical_speed).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.actual_speed - b.actual_speed).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.incident == b.incident);

  auto c = wz::generate_scenario(5, 4, cfg);
  CHECK(c.event.id != a.event.id);
}

TEST_CASE("event sampling respects the documented bounds") {
  ScenarioGenConfig cfg;
  SplitMix64 rng(11, 0);
  double dur_sum = 0;
  const int n = 500;
  for (int i = 0; i < n; ++i) {
    auto e = wz::sample_workzone(rng, cfg, "e");
    CHECK(e.start_time % 15 == 0);
    CHECK(e.start_time >= 0);
    CHECK(e.start_time < 1440);
    CHECK(e.duration_min >= 60);
    CHECK(e.duration_min <= 1425);
    CHECK(e.duration_min % 15 == 0);
    CHECK(e.lanes_closed >= 1);
    CHECK(e.lanes_closed < e.lanes_total);
    CHECK(e.lanes_total <= 6);
    CHECK(e.timesteps() <= 96);
    dur_sum += e.duration_min / 60.0;
  }
  const double mean_h = dur_sum / n;
  CHECK(mean_h > 4.0);
  CHECK(mean_h < 12.0);
}

TEST_CASE("event validation rejects off-grid and bad closures") {
  wz::WorkZoneEvent e;
  e.id = "x";
  e.start_time = 7;  // off the 15-min grid
  e.duration_min = 120;
  e.lanes_total = 3;
  e.lanes_closed = 1;
  CHECK_THROWS_AS(e.validate(), wz::data_error);
  e.start_time = 0;
  e.duration_min = 30;  // under an hour
  CHECK_THROWS_AS(e.validate(), wz::data_error);
  e.duration_min = 120;
  e.lanes_closed = 3;  // full closure
  CHECK_THROWS_AS(e.validate(), wz::data_error);
  e.lanes_closed = 1;
  CHECK_NOTHROW(e.validate());
}

TEST_CASE("corridor sampling: counts, lengths, chained distances") {
  ScenarioGenConfig cfg;
  SplitMix64 rng(12, 0);
  for (int t = 0; t < 300; ++t) {
    auto c = wz::sample_corridor(rng, cfg, wz::RoadType::freeway);
    REQUIRE(c.links.size() >= 10);
    REQUIRE(c.links.size() <= 16);
    CHECK(c.total_length() >= 5.0);
    double cum = 0;
    for (const auto& l : c.links) {
      CHECK(l.length_miles >= 0.2);
      CHECK(l.length_miles <= 0.8);
      CHECK(l.distance_to_workzone == doctest::Approx(cum).epsilon(1e-12));
      CHECK(l.free_flow_speed >= 55.0);
      CHECK(l.free_flow_speed <= 70.0);
      cum += l.length_miles;
    }
  }
  auto a = wz::sample_corridor(rng, cfg, wz::RoadType::arterial);
  for (const auto& l : a.links) {
    CHECK(l.free_flow_speed >= 35.0);
    CHECK(l.free_flow_speed <= 50.0);
  }
}

TEST_CASE("profiles: peak demand lifts volume, zero amplitude is flat") {
  auto cfg = quiet_config();
  wz::WorkZoneEvent e;
  e.id = "p";
  e.start_time = 0;
  e.duration_min = 600;  // 00:00 - 10:00, bins at 3:00 and 8:00
  e.day_of_week = 3;
  e.lanes_total = 3;
  e.lanes_closed = 1;
  SplitMix64 r1(13, 0);
  auto corr = wz::sample_corridor(r1, cfg, wz::RoadType::freeway);
  SplitMix64 r2(13, 1);
  auto prof = wz::historical_profiles(r2, corr, e, cfg);
  const int bin_3am = 12, bin_8am = 32;
  CHECK(prof.volume(0, bin_8am) >= prof.volume(0, bin_3am));
  CHECK(prof.volume.maxCoeff() <= cfg.max_volume);
  CHECK(prof.speed.minCoeff() >= cfg.min_speed);
  CHECK(prof.speed.maxCoeff() <= 70.0);

  auto flat_cfg = quiet_config();
  flat_cfg.peak_amplitude_lo = flat_cfg.peak_amplitude_hi = 0.0;
  flat_cfg.link_volume_jitter = 0.0;
  SplitMix64 r3(13, 2);
  auto flat = wz::historical_profiles(r3, corr, e, flat_cfg);
  for (Eigen::Index i = 0; i < flat.volume.rows(); ++i) {
    CHECK((flat.volume.row(i).array() - flat.volume(i, 0)).abs().maxCoeff() < 1e-9);
    CHECK((flat.speed.row(i).array() - flat.speed(i, 0)).abs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("simulator: no oversaturation means actual equals historical") {
  auto cfg = quiet_config();
  cfg.peak_amplitude_lo = cfg.peak_amplitude_hi = 0.0;
  cfg.base_volume_freeway_lo = cfg.base_volume_freeway_hi = 400.0;  // far below capacity
  wz::WorkZoneEvent e;
  e.id = "s";
  e.start_time = 480;
  e.duration_min = 300;
  e.lanes_total = 4;
  e.lanes_closed = 1;
  SplitMix64 r1(14, 0);
  auto corr = wz::sample_corridor(r1, cfg, wz::RoadType::freeway);
  SplitMix64 r2(14, 1);
  auto prof = wz::historical_profiles(r2, corr, e, cfg);
  SplitMix64 r3(14, 2);
  wz::QueueTrace trace;
  auto actual = wz::simulate_ground_truth(r3, corr, e, prof, cfg, &trace);
  CHECK(trace.first_oversaturated_bin == -1);
  CHECK(trace.max_queue_miles == 0.0);
  CHECK((actual - prof.speed).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("simulator: point-queue arithmetic matches a hand oracle") {
  auto cfg = quiet_config();
  cfg.peak_amplitude_lo = cfg.peak_amplitude_hi = 0.0;
  cfg.link_volume_jitter = 0.0;
  cfg.base_volume_freeway_lo = cfg.base_volume_freeway_hi = 1000.0;  // per lane
  wz::WorkZoneEvent e;
  e.id = "q";
  e.start_time = 600;
  e.duration_min = 240;  // 16 bins
  e.day_of_week = 2;
  e.lanes_total = 2;
  e.lanes_closed = 1;
  SplitMix64 r1(15, 0);
  auto corr = wz::sample_corridor(r1, cfg, wz::RoadType::freeway);
  SplitMix64 r2(15, 1);
  auto prof = wz::historical_profiles(r2, corr, e, cfg);
  SplitMix64 r3(15, 2);
  wz::QueueTrace trace;
  auto actual = wz::simulate_ground_truth(r3, corr, e, prof, cfg, &trace);

  // demand 2000 veh/h vs reduced capacity 1800: +50 veh per bin,
  // storage 240 veh/mi.
  CHECK(trace.first_oversaturated_bin == 0);
  for (int j = 0; j < e.timesteps(); ++j) {
    const double want = 50.0 * (j + 1) / 240.0;
    CHECK(trace.queue_miles[static_cast<std::size_t>(j)] == doctest::Approx(want).epsilon(1e-12));
  }

  // Congestion is contiguous from the work zone: link i congested implies
  // link i-1 congested, and congested speed is max(5, 0.25 ff).
  for (int j = 0; j < e.timesteps(); ++j) {
    const double q = trace.queue_miles[static_cast<std::size_t>(j)];
    for (std::size_t i = 0; i < corr.links.size(); ++i) {
      const bool congested = corr.links[i].distance_to_workzone < q;
      if (congested && i > 0)
        CHECK(corr.links[i - 1].distance_to_workzone < q);
      const double want = congested
                              ? std::max(5.0, 0.25 * corr.links[i].free_flow_speed)
                              : prof.speed(static_cast<Eigen::Index>(i), j);
      CHECK(actual(static_cast<Eigen::Index>(i), j) == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("closing more lanes never shrinks total queue-time") {
  auto cfg = quiet_config();
  for (long i = 0; i < 40; ++i) {
    auto rec = wz::generate_scenario(19, i, cfg);
    wz::HistoricalProfiles prof{rec.historical_speed, rec.historical_volume};
    double prev = -1.0;
    for (int closed = 1; closed < rec.event.lanes_total; ++closed) {
      auto e = rec.event;
      e.lanes_closed = closed;
      wz::SplitMix64 rng(0, 0);
      wz::QueueTrace tr;
      wz::simulate_ground_truth(rng, rec.corridor, e, prof, cfg, &tr);
      double total = 0;
      for (double q : tr.queue_miles) total += q;
      CHECK(total >= prev);
      prev = total;
    }
  }
}

TEST_CASE("incident probability is monotone in severity and closure") {
  ScenarioGenConfig cfg;
  wz::WorkZoneEvent e;
  e.id = "i";
  e.lanes_total = 4;
  e.lanes_closed = 1;
  Eigen::MatrixXd hist = Eigen::MatrixXd::Constant(4, 8, 60.0);
  Eigen::MatrixXd calm = Eigen::MatrixXd::Constant(4, 8, 58.0);
  Eigen::MatrixXd jammed = Eigen::MatrixXd::Constant(4, 8, 20.0);
  SplitMix64 rng(16, 0);
  auto p_calm = wz::incident_label(rng, e, hist, calm, cfg).probability;
  auto p_jam = wz::incident_label(rng, e, hist, jammed, cfg).probability;
  CHECK(p_jam > p_calm);
  e.lanes_closed = 3;
  auto p_jam_wide = wz::incident_label(rng, e, hist, jammed, cfg).probability;
  CHECK(p_jam_wide > p_jam);
}

TEST_CASE("generated records satisfy the record invariants") {
  ScenarioGenConfig cfg;
  for (long i = 0; i < 50; ++i) {
    auto r = wz::generate_scenario(21, i, cfg);
    CHECK_NOTHROW(r.validate());
    CHECK(r.actual_speed.minCoeff() >= 5.0);
    CHECK(((r.actual_speed - r.historical_speed).array() <= 5.0 + 1e-9).all());
  }
}

TEST_CASE("corpus: split sizes and id-stability") {
  std::vector<std::string> ids;
  for (int i = 0; i < 1000; ++i) ids.push_back("wz" + std::to_string(100000 + i).substr(1));
  auto splits = wz::assign_splits(ids);
  long tr = 0, va = 0, te = 0;
  for (auto s : splits) {
    if (s == wz::Split::train) ++tr;
    if (s == wz::Split::val) ++va;
    if (s == wz::Split::test) ++te;
  }
  CHECK(tr == 700);
  CHECK(va == 150);
  CHECK(te == 150);

  // Membership depends only on the id, not on position: reverse the list.
  std::vector<std::string> rev(ids.rbegin(), ids.rend());
  auto splits_rev = wz::assign_splits(rev);
  for (std::size_t i = 0; i < ids.size(); ++i)
    CHECK(splits[i] == splits_rev[ids.size() - 1 - i]);
}

TEST_CASE("corpus: small counts stay within one of the target sizes") {
  std::vector<std::string> ids;
  for (int i = 0; i < 97; ++i) ids.push_back("id" + std::to_string(i));
  auto splits = wz::assign_splits(ids);
  long tr = 0, va = 0, te = 0;
  for (auto s : splits) {
    if (s == wz::Split::train) ++tr;
    if (s == wz::Split::val) ++va;
    if (s == wz::Split::test) ++te;
  }
  CHECK(std::abs(tr - std::lround(0.70 * 97)) <= 1);
  CHECK(std::abs(va - std::lround(0.15 * 97)) <= 1);
  CHECK(tr + va + te == 97);
}

TEST_CASE("generate_corpus rejects tiny counts") {
  ScenarioGenConfig cfg;
  CHECK_THROWS_AS(wz::generate_corpus(5, 1, cfg), wz::config_error);
}

TEST_CASE("corpus incident base rate sits in the required band") {
  ScenarioGenConfig cfg;
  for (std::uint64_t seed : {42ull, 7ull}) {
    auto corpus = wz::generate_corpus(400, seed, cfg);
    long pos = 0;
    for (const auto& r : corpus.records) pos += r.incident ? 1 : 0;
    const double rate = static_cast<double>(pos) / 400.0;
    INFO("seed ", seed, " incident rate ", rate);
    CHECK(rate >= 0.20);
    CHECK(rate <= 0.35);
  }
}
