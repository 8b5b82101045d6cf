#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <optional>
#include <vector>

#include "oracles.hpp"
#include "wz/eval.hpp"
#include "wz/rng.hpp"
#include "wz/scenario.hpp"

using wz::CongestionRegion;
using wz::Tensor;

TEST_CASE("speed metrics on a planted pair") {
  Tensor<double> truth({1, 2}), pred({1, 2});
  truth[0] = 50;
  truth[1] = 60;
  pred[0] = 45;
  pred[1] = 66;
  auto ones = Tensor<double>::full({1, 2}, 1.0);
  auto m = wz::speed_metrics(pred, truth, ones);
  CHECK(m.mae == doctest::Approx(5.5).epsilon(1e-12));
  CHECK(m.rmse == doctest::Approx(std::sqrt(30.5)).epsilon(1e-12));
  CHECK(m.mape_percent == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(m.cells == 2);
}

TEST_CASE("pooled accumulation equals a single pass") {
  Tensor<double> t1({1, 1}), p1({1, 1}), t2({1, 1}), p2({1, 1});
  t1[0] = 50;
  p1[0] = 45;
  t2[0] = 60;
  p2[0] = 66;
  auto one = Tensor<double>::full({1, 1}, 1.0);
  wz::SpeedErrorAccum acc;
  acc.add(p1, t1, one);
  acc.add(p2, t2, one);
  auto m = acc.finalize();
  CHECK(m.mae == doctest::Approx(5.5));
  CHECK(m.rmse == doctest::Approx(std::sqrt(30.5)));
  CHECK(m.mape_percent == doctest::Approx(10.0));
}

TEST_CASE("masked cells are excluded; bad truth is rejected") {
  Tensor<double> truth({2, 2}), pred({2, 2}), mask({2, 2});
  truth[0] = 50;
  pred[0] = 45;
  mask[0] = 1;
  truth[3] = -1;  // masked out, ignored
  auto m = wz::speed_metrics(pred, truth, mask);
  CHECK(m.cells == 1);
  CHECK(m.mae == doctest::Approx(5.0));

  mask[3] = 1;  // now the nonpositive truth is visible
  CHECK_THROWS_AS(wz::speed_metrics(pred, truth, mask), std::invalid_argument);
  CHECK_THROWS_AS(wz::speed_metrics(pred, truth, Tensor<double>({2, 2})), std::invalid_argument);
}

TEST_CASE("classification metrics and degenerate flags") {
  auto m = wz::classification_metrics({0.9, 0.2, 0.7, 0.4}, {1, 0, 0, 1});
  CHECK(m.tp == 1);
  CHECK(m.fp == 1);
  CHECK(m.fn == 1);
  CHECK(m.tn == 1);
  CHECK(m.precision == doctest::Approx(0.5));
  CHECK(m.recall == doctest::Approx(0.5));
  CHECK(m.f1 == doctest::Approx(0.5));
  CHECK_FALSE(m.degenerate_recall);

  auto no_pos = wz::classification_metrics({0.1, 0.2}, {0, 0});
  CHECK(no_pos.degenerate_recall);
  CHECK(no_pos.degenerate_precision);
  CHECK(no_pos.f1 == 0.0);

  auto no_pred = wz::classification_metrics({0.1, 0.2}, {1, 0});
  CHECK(no_pred.degenerate_precision);
  CHECK_FALSE(no_pred.degenerate_recall);
  CHECK(no_pred.recall == 0.0);
}

TEST_CASE("speed drop is clamped at zero and masked") {
  Tensor<double> hist({1, 3}), speed({1, 3}), mask({1, 3});
  hist[0] = 60;
  speed[0] = 40;
  mask[0] = 1;
  hist[1] = 60;
  speed[1] = 70;
  mask[1] = 1;
  hist[2] = 60;
  speed[2] = 10;
  mask[2] = 0;
  auto d = wz::speed_drop_image(hist, speed, mask);
  CHECK(d[0] == 20.0);
  CHECK(d[1] == 0.0);
  CHECK(d[2] == 0.0);
}

TEST_CASE("otsu matches the exhaustive reference on random mixtures") {
  for (int trial = 0; trial < 200; ++trial) {
    auto rng = wz::seeded_rng(900, static_cast<std::uint64_t>(trial));
    const int h = 16, w = 40;
    Tensor<double> img({h, w}), mask({h, w});
    std::vector<double> masked_vals;
    const bool planted = rng.bernoulli(0.6);
    const int bi = rng.uniform_int(0, h - 5), bj = rng.uniform_int(0, w - 10);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        double v = rng.uniform(0.0, 3.0);
        if (planted && i >= bi && i < bi + 4 && j >= bj && j < bj + 9)
          v += rng.uniform(15.0, 25.0);
        img(i, j) = v;
        mask(i, j) = rng.bernoulli(0.85) ? 1.0 : 0.0;
        if (mask(i, j) != 0.0) masked_vals.push_back(v);
      }
    auto got = wz::otsu_threshold(img, mask);
    auto want = oracle::otsu_cut(masked_vals);
    REQUIRE(got.has_value() == want.has_value());
    if (got) {
      CHECK(got->cut == *want);
      const double lo = *std::min_element(masked_vals.begin(), masked_vals.end());
      const double hi = *std::max_element(masked_vals.begin(), masked_vals.end());
      CHECK(got->threshold == lo + (hi - lo) * got->cut / 256.0);
    }
  }
}

TEST_CASE("otsu degenerate inputs yield no threshold") {
  CHECK_FALSE(wz::otsu_threshold(std::vector<double>{}).has_value());
  CHECK_FALSE(wz::otsu_threshold(std::vector<double>{3.0, 3.0, 3.0}).has_value());
  CHECK_FALSE(wz::otsu_threshold(std::vector<double>{3.0, 3.0 + 1e-10}).has_value());

  // Two well-separated values tie every cut; the lowest wins.
  auto two = wz::otsu_threshold(std::vector<double>{0.0, 20.0});
  REQUIRE(two.has_value());
  CHECK(two->cut == 1);
  CHECK(two->threshold == doctest::Approx(20.0 / 256.0));
}

TEST_CASE("planted block yields one region with exact attributes") {
  const int h = 16, w = 96;
  Tensor<double> drop({h, w});
  auto mask = Tensor<double>::full({h, w}, 1.0);
  for (int i = 3; i <= 6; ++i)
    for (int j = 20; j <= 35; ++j) drop(i, j) = 20.0;
  std::vector<double> lengths(16, 0.4);

  auto regions = wz::extract_congestion_regions(drop, mask, lengths);
  REQUIRE(regions.size() == 1);
  const auto& r = regions[0];
  CHECK(r.cell_count == 64);
  CHECK(r.min_row == 3);
  CHECK(r.max_row == 6);
  CHECK(r.start_time_min == 300.0);
  CHECK(r.duration_min == 240.0);
  CHECK(r.max_queue_miles == doctest::Approx(1.6).epsilon(1e-12));
  CHECK(wz::primary_region(regions) == &regions[0]);
}

TEST_CASE("regions failing the span or height gates are dropped") {
  const int h = 16, w = 96;
  std::vector<double> lengths(16, 0.4);
  auto mask = Tensor<double>::full({h, w}, 1.0);

  // 4 columns wide: under the 5-bin minimum.
  Tensor<double> narrow({h, w});
  for (int i = 3; i <= 6; ++i)
    for (int j = 20; j <= 23; ++j) narrow(i, j) = 20.0;
  CHECK(wz::extract_congestion_regions(narrow, mask, lengths).empty());

  // One row tall: no two vertically consecutive links.
  Tensor<double> flat({h, w});
  for (int j = 20; j <= 35; ++j) flat(4, j) = 20.0;
  CHECK(wz::extract_congestion_regions(flat, mask, lengths).empty());
}

TEST_CASE("primary region prefers size, then start, then top row") {
  auto make = [](long cells, double start, int row) {
    CongestionRegion r;
    r.cell_count = cells;
    r.start_time_min = start;
    r.min_row = row;
    return r;
  };
  std::vector<CongestionRegion> rs = {make(10, 300, 2), make(12, 600, 5), make(12, 450, 1)};
  CHECK(wz::primary_region(rs) == &rs[2]);
  rs.push_back(make(12, 450, 0));
  CHECK(wz::primary_region(rs) == &rs[3]);
  CHECK(wz::primary_region({}) == nullptr);
}

TEST_CASE("relative improvement on the reported baselines") {
  CHECK(wz::relative_improvement(10.83, 7.10) == doctest::Approx(34.4).epsilon(0.01));
  CHECK(wz::relative_improvement(0.53, 0.28) == doctest::Approx(47.2).epsilon(0.01));
  CHECK(wz::relative_improvement(5.0, 5.0) == 0.0);
  CHECK_THROWS_AS(wz::relative_improvement(0.0, 1.0), std::invalid_argument);
}

TEST_CASE("congestion comparison pools matched errors and counts misses") {
  CongestionRegion t1;
  t1.start_time_min = 300;
  t1.duration_min = 240;
  t1.max_queue_miles = 1.6;
  CongestionRegion p1;
  p1.start_time_min = 315;
  p1.duration_min = 210;
  p1.max_queue_miles = 1.2;
  CongestionRegion p3 = p1;

  std::vector<std::optional<CongestionRegion>> truth = {t1, t1, std::nullopt, std::nullopt};
  std::vector<std::optional<CongestionRegion>> pred = {p1, std::nullopt, p3, std::nullopt};
  auto c = wz::compare_congestion(truth, pred);
  CHECK(c.truth_congested == 2);
  CHECK(c.matched == 1);
  CHECK(c.missed == 1);
  CHECK(c.false_alarms == 1);
  REQUIRE(c.rmse_start_min.has_value());
  CHECK(*c.rmse_start_min == doctest::Approx(15.0));
  CHECK(*c.rmse_duration_min == doctest::Approx(30.0));
  CHECK(*c.rmse_queue_miles == doctest::Approx(0.4));

  auto none = wz::compare_congestion({std::nullopt}, {std::nullopt});
  CHECK_FALSE(none.rmse_start_min.has_value());
  CHECK(none.truth_congested == 0);
}

TEST_CASE("generated corpus: share of scenarios with a valid congestion region") {
  wz::ScenarioGenConfig cfg;
  wz::SpacetimeConfig scfg;
  long with_region = 0;
  const long n = 300;
  for (long i = 0; i < n; ++i) {
    auto rec = wz::generate_scenario(77, i, cfg);
    auto sample = wz::build_sample(rec, scfg);
    auto ec = wz::make_eval_case(sample, rec, scfg);
    auto drop = wz::speed_drop_image(ec.hist_mph, ec.truth_mph, ec.mask);
    auto regions = wz::extract_congestion_regions(drop, ec.mask, ec.link_lengths);
    with_region += regions.empty() ? 0 : 1;
  }
  const double share = static_cast<double>(with_region) / static_cast<double>(n);
  INFO("valid-region share ", share);
  CHECK(share >= 0.25);
  CHECK(share <= 0.60);
}

TEST_CASE("end-to-end report over synthetic predictions") {
  wz::ScenarioGenConfig cfg;
  cfg.noise_enabled = false;
  wz::SpacetimeConfig scfg;
  std::vector<wz::EvalCase> cases;
  std::vector<wz::EvalPrediction> exact, hist;
  for (long i = 0; i < 12; ++i) {
    auto rec = wz::generate_scenario(31, i, cfg);
    auto sample = wz::build_sample(rec, scfg);
    cases.push_back(wz::make_eval_case(sample, rec, scfg));
    wz::EvalPrediction p;
    p.y_speed_mph = cases.back().truth_mph;
    p.p_incident = rec.incident ? 1.0 : 0.0;
    exact.push_back(p);
    wz::EvalPrediction q;
    q.y_speed_mph = cases.back().hist_mph;
    q.p_incident = 0.0;
    hist.push_back(q);
  }
  auto perfect = wz::evaluate_predictions(cases, exact, 0.5, "exact");
  CHECK(perfect.speed.mae == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(perfect.classification.fp == 0);
  CHECK(perfect.classification.fn == 0);
  CHECK(perfect.congestion.missed == 0);
  CHECK(perfect.congestion.false_alarms == 0);

  auto base = wz::evaluate_predictions(cases, hist, 0.5, "historical");
  CHECK(base.speed.mae > 0.0);
  wz::add_improvements(perfect, base);
  CHECK(perfect.improvements.at("historical").at("mae") == doctest::Approx(100.0));

  auto table = wz::eval_report_table({base, perfect});
  CHECK(table.find("historical") != std::string::npos);
  CHECK(table.find("exact") != std::string::npos);
  auto j = wz::eval_report_to_json(perfect, wz::Json::object());
  CHECK(j.at("schema_version").get<int>() == 1);
  CHECK(j.at("speed").at("mae").get<double>() == doctest::Approx(0.0));
}
