#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "wz/checkpoint.hpp"
#include "wz/corpus.hpp"
#include "wz/model.hpp"

// Drives the installed binary end to end: every subcommand, exit-code
// contract, and artifact byte determinism.

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string output;
};

RunResult run_cli(const std::string& args) {
  const std::string cmd = std::string(WZ_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::string out;
  char buf[4096];
  std::size_t n = 0;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) out.append(buf, n);
  const int status = pclose(pipe);
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.output = std::move(out);
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void spit(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
  REQUIRE(out.good());
}

// One shared workspace: a 20-scenario corpus and a 2-epoch checkpoint that
// later cases reuse. Built on first touch.
const fs::path& workspace() {
  static fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "wz_cli_fixture";
    fs::remove_all(d);
    fs::create_directories(d);
    auto gen = run_cli("generate --out " + (d / "corpus").string() + " --count 20 --seed 7");
    REQUIRE(gen.code == 0);
    auto train = run_cli("train --corpus " + (d / "corpus").string() + " --out " +
                         (d / "model.ckpt").string() + " --epochs 2 --batch-size 8 --seed 3");
    REQUIRE(train.code == 0);
    return d;
  }();
  return dir;
}

std::string first_scenario(const fs::path& corpus) {
  for (const auto& e : fs::directory_iterator(corpus)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("scenario_", 0) == 0) return e.path().string();
  }
  REQUIRE(false);
  return {};
}

}  // namespace

TEST_CASE("usage errors exit 1 and help exits 0") {
  CHECK(run_cli("").code == 1);
  CHECK(run_cli("--help").code == 0);
  CHECK(run_cli("generate").code == 1);  // missing --out
  CHECK(run_cli("definitely-not-a-command").code == 1);
}

TEST_CASE("generate enforces the minimum count and reruns bit-identically") {
  const fs::path& ws = workspace();
  const auto small = run_cli("generate --out " + (ws / "tiny").string() + " --count 5");
  CHECK(small.code == 1);
  CHECK(small.output.find("at least 20") != std::string::npos);

  const fs::path again = ws / "corpus_again";
  REQUIRE(run_cli("generate --out " + again.string() + " --count 20 --seed 7").code == 0);
  long files = 0;
  for (const auto& e : fs::directory_iterator(ws / "corpus")) {
    const auto name = e.path().filename();
    CHECK(slurp(e.path()) == slurp(again / name));
    ++files;
  }
  CHECK(files == 21);  // manifest + 20 scenarios
}

TEST_CASE("train writes a checkpoint with attention metadata and a history file") {
  const fs::path& ws = workspace();
  const auto loaded = wz::load_checkpoint((ws / "model.ckpt").string());
  CHECK(loaded.meta.note == "amcnn-ed");
  CHECK(loaded.params.config.attention_enabled);
  CHECK(loaded.meta.seed == 3);

  const wz::Json hist = wz::Json::parse(slurp(ws / "model.ckpt.history.json"));
  CHECK(hist.at("schema_version").get<int>() == 1);
  CHECK(hist.at("model").get<std::string>() == "amcnn-ed");
  CHECK(hist.at("epochs").size() <= 2);
  CHECK(hist.at("epochs").size() >= 1);
  CHECK(hist.contains("config"));

  const fs::path ab = ws / "ablation.ckpt";
  REQUIRE(run_cli("train --corpus " + (ws / "corpus").string() + " --out " + ab.string() +
                  " --epochs 1 --batch-size 8 --no-attention")
              .code == 0);
  CHECK_FALSE(wz::load_checkpoint(ab.string()).params.config.attention_enabled);
  CHECK(wz::load_checkpoint(ab.string()).meta.note == "mcnn-ed");
}

TEST_CASE("lr zero trains into an unchanged-parameter checkpoint") {
  const fs::path& ws = workspace();
  const fs::path out = ws / "null_update.ckpt";
  REQUIRE(run_cli("train --corpus " + (ws / "corpus").string() + " --out " + out.string() +
                  " --epochs 1 --batch-size 8 --lr 0 --seed 11")
              .code == 0);
  const auto loaded = wz::load_checkpoint(out.string());
  const auto fresh = wz::init_params<float>(loaded.params.config, 11);
  const auto a = loaded.params.entries();
  const auto b = fresh.entries();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CAPTURE(a[i].first);
    CHECK((a[i].second->array() == b[i].second->array()).all());
  }
}

TEST_CASE("predict emits the pinned key set, masked denormalized speeds, deterministically") {
  const fs::path& ws = workspace();
  const std::string scenario = first_scenario(ws / "corpus");
  const fs::path out = ws / "pred.json";
  REQUIRE(run_cli("predict --model " + (ws / "model.ckpt").string() + " --scenario " + scenario +
                  " --out " + out.string())
              .code == 0);
  const wz::Json p = wz::Json::parse(slurp(out));
  std::vector<std::string> keys;
  for (const auto& [k, v] : p.items()) keys.push_back(k);
  CHECK(keys == std::vector<std::string>{"config", "id", "mask", "model", "p_incident",
                                         "schema_version", "y_speed_mph"});
  CHECK(p.at("p_incident").get<double>() > 0.0);
  CHECK(p.at("p_incident").get<double>() < 1.0);
  const auto& ys = p.at("y_speed_mph");
  const auto& mask = p.at("mask");
  REQUIRE(ys.size() == 16);
  REQUIRE(ys[0].size() == 96);
  for (std::size_t i = 0; i < ys.size(); ++i)
    for (std::size_t j = 0; j < ys[i].size(); ++j) {
      const double v = ys[i][j].get<double>();
      if (mask[i][j].get<double>() > 0) {
        CHECK(v > 0.0);
        CHECK(v < 80.0);
      } else {
        CHECK(v == 0.0);
      }
    }

  const fs::path out2 = ws / "pred2.json";
  REQUIRE(run_cli("predict --model " + (ws / "model.ckpt").string() + " --scenario " + scenario +
                  " --out " + out2.string())
              .code == 0);
  CHECK(slurp(out) == slurp(out2));
}

TEST_CASE("predict rejects a canvas mismatch between model and configuration") {
  const fs::path& ws = workspace();
  const fs::path cfg = ws / "small_canvas.json";
  spit(cfg,
       "{\"spacetime\": {\"canvas_h\": 8, \"canvas_w\": 8},"
       " \"model\": {\"canvas_h\": 8, \"canvas_w\": 8}}");
  const auto r = run_cli("predict --config " + cfg.string() + " --model " +
                         (ws / "model.ckpt").string() + " --scenario " +
                         first_scenario(ws / "corpus") + " --out " + (ws / "x.json").string());
  CHECK(r.code == 1);
  CHECK(r.output.find("canvas mismatch") != std::string::npos);
}

TEST_CASE("evaluate writes a report, zero self-improvements, and rejects empty splits") {
  const fs::path& ws = workspace();
  const fs::path report = ws / "report.json";
  const auto r = run_cli("evaluate --model " + (ws / "model.ckpt").string() + " --corpus " +
                         (ws / "corpus").string() + " --split test --report " + report.string() +
                         " --compare hist --compare self");
  REQUIRE(r.code == 0);
  CHECK(r.output.find("speed field") != std::string::npos);
  CHECK(r.output.find("historical-average") != std::string::npos);

  const wz::Json j = wz::Json::parse(slurp(report));
  for (const char* k :
       {"schema_version", "config", "model", "samples", "speed", "classification", "congestion",
        "improvements"})
    CHECK(j.contains(k));
  const auto& self = j.at("improvements").at("self");
  for (const auto& [metric, v] : self.items()) {
    CAPTURE(metric);
    CHECK(v.get<double>() == 0.0);
  }
  CHECK(j.at("improvements").contains("historical-average"));

  // Rewriting every split to train empties the test split.
  const fs::path broken = ws / "corpus_no_test";
  fs::copy(ws / "corpus", broken, fs::copy_options::recursive);
  wz::Json manifest = wz::Json::parse(slurp(broken / "manifest.json"));
  for (auto& [id, sp] : manifest.at("splits").items()) sp = "train";
  spit(broken / "manifest.json", manifest.dump(2));
  const auto empty = run_cli("evaluate --model " + (ws / "model.ckpt").string() + " --corpus " +
                             broken.string() + " --split test --report " +
                             (ws / "r2.json").string());
  CHECK(empty.code == 2);
  CHECK(empty.output.find("empty") != std::string::npos);
}

TEST_CASE("fitted baselines round-trip through files and predict") {
  const fs::path& ws = workspace();
  const fs::path hist = ws / "hist.baseline.json";
  REQUIRE(run_cli("train --corpus " + (ws / "corpus").string() + " --out " + hist.string() +
                  " --baseline hist")
              .code == 0);
  const wz::Json b = wz::Json::parse(slurp(hist));
  CHECK(b.at("kind").get<std::string>() == "historical-average");
  CHECK(b.at("fitted").contains("base_rate"));

  const std::string scenario = first_scenario(ws / "corpus");
  const fs::path out = ws / "hist_pred.json";
  REQUIRE(run_cli("predict --model " + hist.string() + " --scenario " + scenario + " --out " +
                  out.string())
              .code == 0);
  // Historical replay: y_speed_mph equals the scenario's historical matrix on
  // real cells (float casting costs a few ulps).
  const wz::Json pred = wz::Json::parse(slurp(out));
  const wz::ScenarioRecord rec = wz::scenario_from_json(wz::Json::parse(slurp(scenario)));
  for (Eigen::Index i = 0; i < rec.historical_speed.rows(); ++i)
    for (Eigen::Index k = 0; k < rec.historical_speed.cols(); ++k) {
      const double got = pred.at("y_speed_mph")[static_cast<std::size_t>(i)]
                                               [static_cast<std::size_t>(k)]
                                                   .get<double>();
      CHECK(got == doctest::Approx(rec.historical_speed(i, k)).epsilon(1e-9));
    }

  const auto bad = run_cli("train --corpus " + (ws / "corpus").string() + " --out " +
                           (ws / "x.json").string() + " --baseline nope");
  CHECK(bad.code == 1);
}

TEST_CASE("render produces a deterministic PPM with gray padding") {
  const fs::path& ws = workspace();
  const std::string scenario = first_scenario(ws / "corpus");
  const fs::path out = ws / "hist.ppm";
  REQUIRE(run_cli("render --scenario " + scenario + " --channel hist_speed --out " + out.string())
              .code == 0);
  const std::string ppm = slurp(out);
  const std::string header = "P6\n96 16\n255\n";
  REQUIRE(ppm.rfind(header, 0) == 0);
  CHECK(ppm.size() == header.size() + 96 * 16 * 3);

  // The canvas corner opposite the scenario is always padding: gray.
  const std::size_t last_pixel = header.size() + (16 * 96 - 1) * 3;
  CHECK(static_cast<unsigned char>(ppm[last_pixel]) == 128);
  CHECK(static_cast<unsigned char>(ppm[last_pixel + 1]) == 128);
  CHECK(static_cast<unsigned char>(ppm[last_pixel + 2]) == 128);

  const fs::path out2 = ws / "hist2.ppm";
  REQUIRE(run_cli("render --scenario " + scenario + " --channel hist_speed --out " + out2.string())
              .code == 0);
  CHECK(slurp(out) == slurp(out2));

  CHECK(run_cli("render --scenario " + scenario + " --channel bogus --out " +
                (ws / "x.ppm").string())
            .code == 1);
  const fs::path pred_ppm = ws / "pred.ppm";
  REQUIRE(run_cli("predict --model " + (ws / "model.ckpt").string() + " --scenario " + scenario +
                  " --out " + (ws / "rp.json").string())
              .code == 0);
  CHECK(run_cli("render --prediction " + (ws / "rp.json").string() + " --channel speed --out " +
                pred_ppm.string())
            .code == 0);
  CHECK(slurp(pred_ppm).rfind(header, 0) == 0);
}

TEST_CASE("ingest builds a corpus from feeds and logs skips") {
  const fs::path& ws = workspace();
  const fs::path dir = ws / "feeds";
  fs::create_directories(dir);
  spit(dir / "events.json", R"([
    {"id": "WZ100", "road_name": "I-95", "direction": "N", "begin_milepost": 12.0,
     "start_date": "2024-05-03T10:07:23Z", "end_date": "2024-05-03T12:08:00Z",
     "lanes_total": 3, "lanes_closed": 1, "road_type": "freeway",
     "has_on_ramp": true, "has_off_ramp": false},
    {"id": "WZ300", "road_name": "I-95", "direction": "N", "begin_milepost": 12.0,
     "start_date": "2024-05-03T10:00:00Z", "end_date": "2024-05-04T12:00:00Z",
     "lanes_total": 3, "lanes_closed": 1, "road_type": "freeway",
     "has_on_ramp": true, "has_off_ramp": false}
  ])");
  {
    std::ostringstream links;
    links << "link_id,road_name,direction,begin_milepost,end_milepost,length_miles\n";
    for (int i = 0; i < 6; ++i)
      links << "L0" << i + 1 << ",I-95,N," << 11.5 - 0.5 * i << "," << 12.0 - 0.5 * i << ",0.5\n";
    spit(dir / "links.csv", links.str());
    std::ostringstream speeds;
    speeds << "link_id,timestamp,speed_mph\n";
    auto row = [&](int link, const char* date, int mod, double v) {
      char buf[80];
      std::snprintf(buf, sizeof buf, "L0%d,%sT%02d:%02d:00Z,%g\n", link, date, mod / 60, mod % 60,
                    v);
      speeds << buf;
    };
    for (const char* d : {"2024-04-12", "2024-04-19", "2024-04-26"})
      for (int l = 1; l <= 6; ++l)
        for (int j = 0; j < 9; ++j) row(l, d, 600 + 15 * j, 60.0 + j);
    for (int l = 1; l <= 6; ++l)
      for (int j = 0; j < 9; ++j) row(l, "2024-05-03", 602 + 15 * j, 50.0 - j);
    spit(dir / "speeds.csv", speeds.str());
    spit(dir / "incidents.csv", "event_id\nWZ100\n");
  }

  const fs::path out = ws / "ingested";
  const auto r = run_cli("ingest --events " + (dir / "events.json").string() + " --links " +
                         (dir / "links.csv").string() + " --speeds " +
                         (dir / "speeds.csv").string() + " --incidents " +
                         (dir / "incidents.csv").string() + " --out " + out.string());
  REQUIRE(r.code == 0);
  CHECK(fs::exists(out / "scenario_WZ100.json"));
  const wz::Json log = wz::Json::parse(slurp(out / "ingest_log.json"));
  REQUIRE(log.at("skipped").size() == 1);
  CHECK(log.at("skipped")[0].at("id").get<std::string>() == "WZ300");
  CHECK(log.at("skipped")[0].at("reason").get<std::string>().find("24h") != std::string::npos);

  const wz::Corpus ingested = wz::read_corpus(out);
  REQUIRE(ingested.records.size() == 1);
  CHECK(ingested.records[0].incident);
  CHECK(ingested.records[0].corridor.links.size() == 6);

  CHECK(run_cli("ingest --events " + (dir / "missing.json").string() + " --links " +
                (dir / "links.csv").string() + " --speeds " + (dir / "speeds.csv").string() +
                " --out " + (ws / "x").string())
            .code == 2);
}

TEST_CASE("gradcheck passes clean and detects an injected fault") {
  const auto ok = run_cli("gradcheck --reduced-canvas");
  CHECK(ok.code == 0);
  CHECK(ok.output.find("PASS") != std::string::npos);
  CHECK(ok.output.find("worst rel err") != std::string::npos);

  const auto bad = run_cli("gradcheck --reduced-canvas --inject-fault");
  CHECK(bad.code == 3);
  CHECK(bad.output.find("FAIL") != std::string::npos);
}
