#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <string>

#include "wz/spacetime.hpp"

using wz::SpacetimeConfig;
using wz::Tensor;

namespace {

wz::ScenarioRecord tiny_record() {
  wz::ScenarioRecord r;
  r.event.id = "tiny";
  r.event.start_time = 480;
  r.event.duration_min = 45;  // 3 bins
  r.event.day_of_week = 3;
  r.event.lanes_closed = 2;
  r.event.lanes_total = 4;
  r.event.road_type = wz::RoadType::arterial;
  r.event.has_on_ramp = true;
  r.event.has_off_ramp = false;
  r.corridor.links = {{"a", 0.4, 0.0, 60.0}, {"b", 0.6, 0.4, 45.0}};
  r.historical_speed = Eigen::MatrixXd{{60, 40, 100}, {45, 44, 43}};
  r.historical_volume = Eigen::MatrixXd{{1200, 600, 2400}, {300, 300, 300}};
  r.actual_speed = Eigen::MatrixXd{{60, 20, 64}, {45, 44, 43}};
  r.incident = true;
  return r;
}

}  // namespace

TEST_CASE("config validation rejects bad extents and scales") {
  SpacetimeConfig cfg;
  cfg.canvas_h = 15;
  CHECK_THROWS_AS(cfg.validate(), wz::config_error);
  cfg = SpacetimeConfig{};
  cfg.s_max = 0;
  CHECK_THROWS_AS(cfg.validate(), wz::config_error);
  CHECK_NOTHROW(SpacetimeConfig{}.validate());
}

TEST_CASE("input image: placement, channel values, mask rectangle") {
  SpacetimeConfig cfg;
  auto r = tiny_record();
  auto img = wz::build_input_image(r, cfg);
  CHECK(img.data.shape() == wz::Shape{16, 96, 4});
  CHECK(img.mask.shape() == wz::Shape{16, 96});
  CHECK(img.real_rows == 2);
  CHECK(img.real_cols == 3);

  CHECK(img.data(0, 0, wz::kChanHistSpeed) == doctest::Approx(60.0 / 80.0));
  CHECK(img.data(0, 2, wz::kChanHistSpeed) == 1.0);  // 100 mph clamps
  CHECK(img.data(0, 1, wz::kChanHistVolume) == doctest::Approx(600.0 / 2400.0));
  CHECK(img.data(1, 0, wz::kChanLinkLength) == doctest::Approx(0.6 / 0.8));
  CHECK(img.data(1, 2, wz::kChanDistance) == doctest::Approx(0.4 / 5.0));

  double mask_sum = 0;
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 96; ++j) {
      mask_sum += img.mask(i, j);
      const bool inside = i < 2 && j < 3;
      CHECK(img.mask(i, j) == (inside ? 1.0 : 0.0));
      if (!inside)
        for (int c = 0; c < 4; ++c) CHECK(img.data(i, j, c) == 0.0);
    }
  CHECK(mask_sum == 6.0);
}

TEST_CASE("optional time channels count minutes within the window") {
  SpacetimeConfig cfg;
  cfg.time_channels = true;
  auto img = wz::build_input_image(tiny_record(), cfg);
  CHECK(img.data.dim(2) == 6);
  CHECK(img.data(0, 0, 4) == 0.0);
  CHECK(img.data(0, 2, 4) == doctest::Approx(30.0 / 1440.0));
  CHECK(img.data(0, 0, 5) == doctest::Approx(30.0 / 1440.0));
  CHECK(img.data(0, 2, 5) == 0.0);
}

TEST_CASE("oversized scenarios are rejected with counts in the message") {
  SpacetimeConfig cfg;
  auto r = tiny_record();
  r.event.duration_min = 1440 + 60;  // would need 100 bins
  try {
    wz::build_input_image(r, cfg);
    FAIL("expected data_error");
  } catch (const wz::data_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("100") != std::string::npos);
    CHECK(msg.find("96") != std::string::npos);
  }
}

TEST_CASE("work-zone feature vector order and scaling") {
  auto f = wz::build_wz_vector(tiny_record().event);
  REQUIRE(f.shape() == wz::Shape{8});
  CHECK(f[0] == doctest::Approx(480.0 / 1440.0));
  CHECK(f[1] == doctest::Approx(3.0 / 6.0));
  CHECK(f[2] == doctest::Approx(45.0 / 1440.0));
  CHECK(f[3] == doctest::Approx(2.0 / 6.0));
  CHECK(f[4] == doctest::Approx(4.0 / 6.0));
  CHECK(f[5] == 1.0);
  CHECK(f[6] == 1.0);
  CHECK(f[7] == 0.0);
}

TEST_CASE("target holds normalized actual speed, zero outside the mask") {
  SpacetimeConfig cfg;
  auto r = tiny_record();
  auto y = wz::build_target(r, cfg);
  CHECK(y(0, 1) == doctest::Approx(20.0 / 80.0));
  CHECK(y(1, 2) == doctest::Approx(43.0 / 80.0));
  CHECK(y(2, 0) == 0.0);
  CHECK(y(0, 3) == 0.0);
}

TEST_CASE("build_sample bundles image, features, target and label") {
  SpacetimeConfig cfg;
  auto s = wz::build_sample(tiny_record(), cfg);
  CHECK(s.id == "tiny");
  CHECK(s.y_incident == 1);
  CHECK(s.features.size() == 8);
  CHECK(s.mask()(0, 0) == 1.0);

  auto sf = wz::cast_sample<float>(s);
  CHECK(sf.image.data.size() == s.image.data.size());
  CHECK(static_cast<double>(sf.y_speed(0, 1)) == doctest::Approx(20.0 / 80.0));
}

TEST_CASE("speed normalization round-trips and clamps") {
  SpacetimeConfig cfg;
  CHECK(wz::normalize_speed(40.0, cfg) == doctest::Approx(0.5));
  CHECK(wz::normalize_speed(-3.0, cfg) == 0.0);
  CHECK(wz::normalize_speed(200.0, cfg) == 1.0);
  CHECK(wz::denormalize_speed(0.5, cfg) == doctest::Approx(40.0));
}

TEST_CASE("heatmap: P6 header and pinned colormap bytes") {
  Tensor<double> v({1, 5});
  v[0] = 0.0;
  v[1] = 0.25;
  v[2] = 0.5;
  v[3] = 0.75;
  v[4] = 1.0;
  Tensor<double> m = Tensor<double>::full({1, 5}, 1.0);
  m[3] = 0.0;
  auto ppm = wz::render_heatmap(v, m);
  const std::string header = "P6\n5 1\n255\n";
  REQUIRE(ppm.size() == header.size() + 15);
  CHECK(ppm.compare(0, header.size(), header) == 0);
  auto px = [&](int j, int c) {
    return static_cast<unsigned char>(ppm[header.size() + 3 * static_cast<std::size_t>(j) + c]);
  };
  CHECK(px(0, 0) == 8);
  CHECK(px(0, 1) == 29);
  CHECK(px(0, 2) == 88);
  CHECK(px(1, 0) == 36);  // truncation, not rounding
  CHECK(px(1, 1) == 105);
  CHECK(px(1, 2) == 142);
  CHECK(px(2, 0) == 65);
  CHECK(px(2, 1) == 182);
  CHECK(px(2, 2) == 196);
  CHECK(px(3, 0) == 128);  // masked
  CHECK(px(3, 1) == 128);
  CHECK(px(3, 2) == 128);
  CHECK(px(4, 0) == 255);
  CHECK(px(4, 1) == 255);
  CHECK(px(4, 2) == 217);
}

TEST_CASE("heatmap: out-of-range values clamp to the endpoints") {
  Tensor<double> v({1, 2});
  v[0] = -0.5;
  v[1] = 1.5;
  auto ppm = wz::render_heatmap(v, Tensor<double>());
  const std::string header = "P6\n2 1\n255\n";
  CHECK(static_cast<unsigned char>(ppm[header.size() + 0]) == 8);
  CHECK(static_cast<unsigned char>(ppm[header.size() + 5]) == 217);
}
