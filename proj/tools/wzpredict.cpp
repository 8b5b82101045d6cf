#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "wz/baselines.hpp"
#include "wz/checkpoint.hpp"
#include "wz/config.hpp"
#include "wz/corpus.hpp"
#include "wz/errors.hpp"
#include "wz/eval.hpp"
#include "wz/ingest.hpp"
#include "wz/model.hpp"
#include "wz/spacetime.hpp"
#include "wz/train.hpp"
#include "wz/version.hpp"

namespace fs = std::filesystem;
using wz::Json;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw wz::data_error("cannot read " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void spit(const fs::path& p, const std::string& content) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw wz::data_error("cannot write " + p.string());
  out << content;
  out.flush();
  if (!out) throw wz::data_error("short write to " + p.string());
}

void write_json(const fs::path& p, const Json& j) { spit(p, j.dump(2) + "\n"); }

Json parse_json(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw wz::data_error(what + " is not valid JSON: " + e.what());
  }
}

wz::RunConfig load_config_or_default(const std::string& path) {
  if (path.empty()) {
    wz::RunConfig rc;
    rc.validate();
    return rc;
  }
  return wz::load_run_config(path);
}

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
    throw wz::data_error(what + " must be a non-empty 2-D array");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
      throw wz::data_error(what + " rows must have equal width");
    for (Eigen::Index k = 0; k < cols; ++k)
      m(i, k) = row[static_cast<std::size_t>(k)].get<double>();
  }
  return m;
}

Json vector_to_json(const Eigen::VectorXd& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

Eigen::VectorXd vector_from_json(const Json& j, const std::string& what) {
  if (!j.is_array()) throw wz::data_error(what + " must be an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = j[static_cast<std::size_t>(i)].get<double>();
  return v;
}

Json tensor2_to_json(const wz::Tensor<double>& t) {
  Json rows = Json::array();
  for (int i = 0; i < t.dim(0); ++i) {
    Json row = Json::array();
    for (int j = 0; j < t.dim(1); ++j) row.push_back(t(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

wz::Tensor<double> tensor2_from_json(const Json& j, const std::string& what) {
  const Eigen::MatrixXd m = matrix_from_json(j, what);
  wz::Tensor<double> t({static_cast<int>(m.rows()), static_cast<int>(m.cols())});
  for (int i = 0; i < t.dim(0); ++i)
    for (int k = 0; k < t.dim(1); ++k) t(i, k) = m(i, k);
  return t;
}

// ---------------------------------------------------------------------------
// Predictors: a checkpointed network or a fitted baseline behind one call.

struct Predictor {
  std::string name;
  double s_max = 80.0;
  std::optional<wz::LoadedCheckpoint> model;
  std::optional<wz::HistoricalAverageBaseline> hist;
  std::optional<wz::LinearArBaseline> ar;

  wz::PredictionOutput<double> predict(const wz::Sample<double>& s) const {
    if (model) {
      const auto sf = wz::cast_sample<float>(s);
      const auto out = wz::model_forward(sf, model->params);
      wz::PredictionOutput<double> o;
      o.y_speed = out.y_speed.template cast<double>();
      o.p_incident = out.p_incident.template cast<double>();
      return o;
    }
    if (hist) return wz::predict_historical(*hist, s);
    if (ar) return wz::predict_linear_ar(*ar, s);
    throw wz::config_error("predictor not loaded");
  }
};

Json baseline_to_json(const Predictor& p, const Json& config_echo) {
  Json fitted;
  std::string kind;
  if (p.hist) {
    kind = "historical-average";
    fitted = Json{{"base_rate", p.hist->base_rate}};
  } else if (p.ar) {
    kind = "linear-ar";
    fitted = Json{{"lookback", p.ar->lookback},
                  {"ridge_lambda", p.ar->ridge_lambda},
                  {"row_coeffs", matrix_to_json(p.ar->row_coeffs)},
                  {"pooled_coeffs", vector_to_json(p.ar->pooled_coeffs)},
                  {"incident_coeffs", vector_to_json(p.ar->incident_coeffs)}};
  } else {
    throw wz::config_error("not a baseline predictor");
  }
  return Json{{"schema_version", wz::kSchemaVersion},
              {"kind", kind},
              {"s_max", p.s_max},
              {"fitted", std::move(fitted)},
              {"config", config_echo}};
}

Predictor baseline_from_json(const Json& j) {
  for (const char* key : {"schema_version", "kind", "s_max", "fitted", "config"})
    if (!j.contains(key)) throw wz::data_error(std::string("baseline file missing key '") + key + "'");
  if (j.at("schema_version").get<int>() != wz::kSchemaVersion)
    throw wz::data_error("baseline file has an unsupported schema version");
  Predictor p;
  p.name = j.at("kind").get<std::string>();
  p.s_max = j.at("s_max").get<double>();
  const Json& f = j.at("fitted");
  if (p.name == "historical-average") {
    wz::HistoricalAverageBaseline b;
    b.base_rate = f.at("base_rate").get<double>();
    b.fitted = true;
    p.hist = b;
  } else if (p.name == "linear-ar") {
    wz::LinearArBaseline b;
    b.lookback = f.at("lookback").get<int>();
    b.ridge_lambda = f.at("ridge_lambda").get<double>();
    b.row_coeffs = matrix_from_json(f.at("row_coeffs"), "row_coeffs");
    b.pooled_coeffs = vector_from_json(f.at("pooled_coeffs"), "pooled_coeffs");
    const Eigen::VectorXd inc = vector_from_json(f.at("incident_coeffs"), "incident_coeffs");
    if (inc.size() != 3) throw wz::data_error("incident_coeffs must have 3 entries");
    b.incident_coeffs = inc;
    b.fitted = true;
    p.ar = b;
  } else {
    throw wz::data_error("unknown baseline kind '" + p.name + "'");
  }
  return p;
}

// The checkpoint's canvas geometry must agree with the spacetime settings the
// samples will be built with.
void check_model_matches(const wz::LoadedCheckpoint& m, const wz::SpacetimeConfig& st) {
  const auto& mc = m.params.config;
  if (mc.canvas_h != st.canvas_h || mc.canvas_w != st.canvas_w)
    throw wz::config_error("canvas mismatch: model " + std::to_string(mc.canvas_h) + "x" +
                           std::to_string(mc.canvas_w) + " vs configured " +
                           std::to_string(st.canvas_h) + "x" + std::to_string(st.canvas_w));
  if (mc.in_channels != st.channels())
    throw wz::config_error("channel mismatch: model expects " + std::to_string(mc.in_channels) +
                           " input channels, configuration supplies " +
                           std::to_string(st.channels()));
  if (m.meta.s_max != st.s_max)
    throw wz::config_error("s_max mismatch: model " + std::to_string(m.meta.s_max) +
                           " vs configured " + std::to_string(st.s_max));
}

Predictor load_predictor(const std::string& path, const wz::RunConfig& rc) {
  const std::string head = slurp(path).substr(0, 4);
  if (head.size() >= 4 && head[0] == 'A' && head[1] == 'M' && head[2] == 'C' && head[3] == 'N') {
    Predictor p;
    p.model = wz::load_checkpoint(path);
    check_model_matches(*p.model, rc.spacetime);
    p.s_max = p.model->meta.s_max;
    p.name = !p.model->meta.note.empty()
                 ? p.model->meta.note
                 : (p.model->params.config.attention_enabled ? "amcnn-ed" : "mcnn-ed");
    return p;
  }
  return baseline_from_json(parse_json(slurp(path), "baseline file " + path));
}

// ---------------------------------------------------------------------------
// Shared sample assembly

std::vector<wz::Sample<double>> build_samples(const wz::Corpus& corpus,
                                              const std::vector<long>& idx,
                                              const wz::SpacetimeConfig& st) {
  std::vector<wz::Sample<double>> out;
  out.reserve(idx.size());
  for (long i : idx)
    out.push_back(wz::build_sample(corpus.records[static_cast<std::size_t>(i)], st));
  return out;
}

// ---------------------------------------------------------------------------
// Subcommands

struct CommonOpts {
  std::string config;
};

int cmd_generate(const CommonOpts& common, const std::string& out, long count,
                 std::uint64_t seed) {
  if (count < 20) throw wz::config_error("count must be at least 20 scenarios");
  const wz::RunConfig rc = load_config_or_default(common.config);
  const wz::Corpus corpus = wz::generate_corpus(count, seed, rc.scenario, run_config_to_json(rc));
  wz::write_corpus(corpus, out);
  long n_train = 0, n_val = 0, n_test = 0;
  for (wz::Split s : corpus.split) {
    if (s == wz::Split::train) ++n_train;
    else if (s == wz::Split::val) ++n_val;
    else ++n_test;
  }
  std::cout << "wrote " << count << " scenarios to " << out << " (train " << n_train << ", val "
            << n_val << ", test " << n_test << ", seed " << seed << ")\n";
  return 0;
}

int cmd_train(const CommonOpts& common, const std::string& corpus_dir, const std::string& out,
              bool no_attention, const std::string& baseline, int epochs_override,
              int batch_override, double lr_override, std::int64_t seed_override) {
  wz::RunConfig rc = load_config_or_default(common.config);
  if (no_attention) rc.model.attention_enabled = false;
  if (epochs_override > 0) rc.training.max_epochs = epochs_override;
  if (batch_override > 0) rc.training.batch_size = batch_override;
  if (lr_override >= 0) rc.training.adam.lr = lr_override;
  if (seed_override >= 0) rc.training.seed = static_cast<std::uint64_t>(seed_override);
  rc.validate();

  const wz::Corpus corpus = wz::read_corpus(corpus_dir);
  const auto train_d = build_samples(corpus, corpus.indices(wz::Split::train), rc.spacetime);
  const auto val_d = build_samples(corpus, corpus.indices(wz::Split::val), rc.spacetime);
  if (train_d.empty() || val_d.empty())
    throw wz::data_error("corpus provides no training or no validation samples");
  const Json echo = run_config_to_json(rc);

  if (!baseline.empty()) {
    Predictor p;
    p.s_max = rc.spacetime.s_max;
    if (baseline == "hist") {
      p.hist = wz::fit_historical_baseline(train_d);
      p.name = "historical-average";
    } else if (baseline == "ar") {
      p.ar = wz::fit_linear_ar(train_d);
      p.name = "linear-ar";
    } else {
      throw wz::config_error("unknown baseline '" + baseline + "' (expected hist or ar)");
    }
    write_json(out, baseline_to_json(p, echo));
    write_json(out + ".history.json", Json{{"schema_version", wz::kSchemaVersion},
                                           {"model", p.name},
                                           {"epochs", Json::array()},
                                           {"config", echo}});
    std::cout << "fitted " << p.name << " baseline on " << train_d.size() << " samples -> " << out
              << "\n";
    return 0;
  }

  std::vector<wz::Sample<float>> train_f, val_f;
  train_f.reserve(train_d.size());
  val_f.reserve(val_d.size());
  for (const auto& s : train_d) train_f.push_back(wz::cast_sample<float>(s));
  for (const auto& s : val_d) val_f.push_back(wz::cast_sample<float>(s));

  const std::string name = rc.model.attention_enabled ? "amcnn-ed" : "mcnn-ed";
  std::cout << name << ": " << train_f.size() << " train / " << val_f.size()
            << " val samples\n";
  wz::TrainingHistory history;
  const auto params = wz::train_model(rc.model, train_f, val_f, rc.training, &history,
                                      [](const wz::EpochStats& e) {
                                        std::printf("epoch %3d  train %.5f  val %.5f\n", e.epoch,
                                                    e.train_loss, e.val_loss);
                                        std::fflush(stdout);
                                      });

  wz::CheckpointMeta meta;
  meta.model = rc.model;
  meta.s_max = rc.training.s_max;
  meta.seed = rc.training.seed;
  meta.note = name;
  wz::save_checkpoint(out, params, meta);

  Json epochs = Json::array();
  for (const auto& e : history.epochs)
    epochs.push_back(
        Json{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}});
  write_json(out + ".history.json", Json{{"schema_version", wz::kSchemaVersion},
                                         {"model", name},
                                         {"epochs", std::move(epochs)},
                                         {"best_epoch", history.best_epoch},
                                         {"best_val_loss", history.best_val_loss},
                                         {"early_stopped", history.early_stopped},
                                         {"config", echo}});
  std::cout << "best epoch " << history.best_epoch << " val loss " << history.best_val_loss
            << " -> " << out << "\n";
  return 0;
}

int cmd_predict(const CommonOpts& common, const std::string& model_path,
                const std::string& scenario_path, const std::string& out) {
  const wz::RunConfig rc = load_config_or_default(common.config);
  const Predictor pred = load_predictor(model_path, rc);
  wz::ScenarioRecord rec = wz::scenario_from_json(
      parse_json(slurp(scenario_path), "scenario file " + scenario_path));
  rec.validate();
  const wz::Sample<double> sample = wz::build_sample(rec, rc.spacetime);
  const auto o = pred.predict(sample);

  wz::Tensor<double> y_mph(o.y_speed.shape());
  y_mph.array() = o.y_speed.array() * rc.spacetime.s_max * sample.image.mask.array();
  const double p1 = o.p_incident[1];

  write_json(out, Json{{"schema_version", wz::kSchemaVersion},
                       {"id", rec.event.id},
                       {"model", pred.name},
                       {"y_speed_mph", tensor2_to_json(y_mph)},
                       {"p_incident", p1},
                       {"mask", tensor2_to_json(sample.image.mask)},
                       {"config", run_config_to_json(rc)}});
  std::cout << rec.event.id << ": p_incident " << p1 << " -> " << out << "\n";
  return 0;
}

int cmd_evaluate(const CommonOpts& common, const std::string& model_path,
                 const std::string& corpus_dir, const std::string& split_name,
                 const std::string& report_path, const std::vector<std::string>& compares,
                 double threshold) {
  const wz::RunConfig rc = load_config_or_default(common.config);
  const wz::Corpus corpus = wz::read_corpus(corpus_dir);
  const wz::Split split = wz::split_from_string(split_name);
  const auto idx = corpus.indices(split);
  if (idx.empty()) throw wz::data_error("split '" + split_name + "' is empty");

  const auto samples = build_samples(corpus, idx, rc.spacetime);
  std::vector<wz::EvalCase> cases;
  cases.reserve(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k)
    cases.push_back(wz::make_eval_case(
        samples[k], corpus.records[static_cast<std::size_t>(idx[k])], rc.spacetime));

  auto predict_all = [&](const Predictor& p) {
    std::vector<wz::EvalPrediction> preds;
    preds.reserve(samples.size());
    for (const auto& s : samples) {
      const auto o = p.predict(s);
      wz::EvalPrediction ep;
      ep.y_speed_mph = wz::Tensor<double>(o.y_speed.shape());
      ep.y_speed_mph.array() = o.y_speed.array() * rc.spacetime.s_max;
      ep.p_incident = o.p_incident[1];
      preds.push_back(std::move(ep));
    }
    return preds;
  };

  const Predictor model = load_predictor(model_path, rc);
  wz::EvalReport report =
      wz::evaluate_predictions(cases, predict_all(model), threshold, model.name);

  std::vector<wz::EvalReport> baseline_reports;
  std::vector<wz::Sample<double>> train_d;  // fitted lazily, only if a compare needs it
  for (const std::string& c : compares) {
    wz::EvalReport breport;
    if (c == "self") {
      breport = report;
      breport.model_name = "self";
      breport.improvements.clear();
    } else if (c == "hist" || c == "ar") {
      if (train_d.empty())
        train_d = build_samples(corpus, corpus.indices(wz::Split::train), rc.spacetime);
      if (train_d.empty()) throw wz::data_error("corpus has no training samples to fit '" + c + "'");
      Predictor p;
      p.s_max = rc.spacetime.s_max;
      if (c == "hist") {
        p.hist = wz::fit_historical_baseline(train_d);
        p.name = "historical-average";
      } else {
        p.ar = wz::fit_linear_ar(train_d);
        p.name = "linear-ar";
      }
      breport = wz::evaluate_predictions(cases, predict_all(p), threshold, p.name);
    } else if (fs::exists(c)) {
      const Predictor p = load_predictor(c, rc);
      breport = wz::evaluate_predictions(cases, predict_all(p), threshold, p.name);
    } else {
      throw wz::config_error("unknown baseline '" + c + "' (expected hist, ar, self, or a file)");
    }
    wz::add_improvements(report, breport);
    baseline_reports.push_back(std::move(breport));
  }

  std::vector<wz::EvalReport> all{report};
  for (auto& b : baseline_reports) all.push_back(std::move(b));
  std::cout << wz::eval_report_table(all);
  write_json(report_path, wz::eval_report_to_json(report, run_config_to_json(rc)));
  std::cout << "report -> " << report_path << "\n";
  return 0;
}

int cmd_render(const CommonOpts& common, const std::string& scenario_path,
               const std::string& prediction_path, const std::string& channel,
               const std::string& out) {
  const wz::RunConfig rc = load_config_or_default(common.config);
  wz::Tensor<double> values, mask;

  if (!scenario_path.empty()) {
    wz::ScenarioRecord rec = wz::scenario_from_json(
        parse_json(slurp(scenario_path), "scenario file " + scenario_path));
    rec.validate();
    const wz::Sample<double> sample = wz::build_sample(rec, rc.spacetime);
    std::vector<std::pair<std::string, int>> names = {{"hist_speed", wz::kChanHistSpeed},
                                                      {"hist_volume", wz::kChanHistVolume},
                                                      {"link_length", wz::kChanLinkLength},
                                                      {"distance", wz::kChanDistance}};
    if (rc.spacetime.time_channels) {
      names.emplace_back("time_since_start", 4);
      names.emplace_back("time_until_end", 5);
    }
    mask = sample.image.mask;
    if (channel == "target") {
      values = sample.y_speed;
    } else if (channel == "mask") {
      values = sample.image.mask;
      mask = wz::Tensor<double>();
    } else {
      int ch = -1;
      for (const auto& [n, i] : names)
        if (n == channel) ch = i;
      if (ch < 0) {
        std::string valid = "target, mask";
        for (const auto& [n, i] : names) valid += ", " + n;
        throw wz::config_error("unknown channel '" + channel + "' (valid: " + valid + ")");
      }
      values = wz::Tensor<double>({sample.image.data.dim(0), sample.image.data.dim(1)});
      for (int i = 0; i < values.dim(0); ++i)
        for (int j = 0; j < values.dim(1); ++j) values(i, j) = sample.image.data(i, j, ch);
    }
  } else {
    const Json p = parse_json(slurp(prediction_path), "prediction file " + prediction_path);
    for (const char* key : {"y_speed_mph", "mask"})
      if (!p.contains(key))
        throw wz::data_error(std::string("prediction file missing key '") + key + "'");
    mask = tensor2_from_json(p.at("mask"), "mask");
    if (channel == "speed") {
      values = tensor2_from_json(p.at("y_speed_mph"), "y_speed_mph");
      values.array() = (values.array() / rc.spacetime.s_max).min(1.0).max(0.0);
    } else if (channel == "mask") {
      values = mask;
      mask = wz::Tensor<double>();
    } else {
      throw wz::config_error("unknown channel '" + channel + "' (valid: speed, mask)");
    }
  }

  spit(out, wz::render_heatmap(values, mask));
  std::cout << "rendered " << channel << " -> " << out << "\n";
  return 0;
}

int cmd_ingest(const CommonOpts& common, const std::string& events_path,
               const std::string& links_path, const std::string& speeds_path,
               const std::string& incidents_path, const std::string& out) {
  const wz::RunConfig rc = load_config_or_default(common.config);
  const wz::ParsedEvents events = wz::parse_events(slurp(events_path));
  const wz::ParsedLinks links = wz::parse_links(slurp(links_path));
  const wz::ParsedSpeeds speeds = wz::parse_speeds(slurp(speeds_path));
  std::vector<std::string> incident_ids;
  if (!incidents_path.empty()) incident_ids = wz::parse_incident_ids(slurp(incidents_path));

  const wz::IngestConfig icfg;
  const wz::IngestResult result =
      wz::match_and_bin(events.events, links.links, speeds.readings, icfg, incident_ids);

  wz::Corpus corpus;
  corpus.seed = 0;
  corpus.records = result.records;
  std::vector<std::string> ids;
  for (const auto& r : corpus.records) ids.push_back(r.event.id);
  corpus.split = wz::assign_splits(ids);
  corpus.config_echo = run_config_to_json(rc);
  wz::write_corpus(corpus, out);

  Json skipped = Json::array();
  for (const auto& s : events.skipped) skipped.push_back(Json{{"id", s.id}, {"reason", s.reason}});
  for (const auto& s : result.skipped) skipped.push_back(Json{{"id", s.id}, {"reason", s.reason}});
  write_json(fs::path(out) / "ingest_log.json",
             Json{{"schema_version", wz::kSchemaVersion},
                  {"events_parsed", events.events.size()},
                  {"records_written", result.records.size()},
                  {"skipped", std::move(skipped)},
                  {"speed_rows_skipped", speeds.skipped_rows},
                  {"link_rows_skipped", links.skipped_rows},
                  {"settings",
                   {{"upstream_window_miles", icfg.upstream_window_miles},
                    {"max_links", icfg.max_links},
                    {"default_volume", icfg.default_volume},
                    {"max_interp_gap_bins", icfg.max_interp_gap_bins},
                    {"min_weekday_days", icfg.min_weekday_days}}},
                  {"config", run_config_to_json(rc)}});

  std::cout << "ingested " << result.records.size() << " of " << events.events.size()
            << " matched events (" << events.skipped.size() + result.skipped.size()
            << " skipped) -> " << out << "\n";
  return 0;
}

int cmd_gradcheck(const CommonOpts& common, bool reduced, bool inject_fault, std::uint64_t seed) {
  wz::RunConfig rc = load_config_or_default(common.config);
  wz::ModelConfig mc = rc.model;
  if (reduced) {
    mc.canvas_h = 8;
    mc.canvas_w = 8;
  }
  mc.validate();

  auto rng = wz::seeded_rng(seed, 0);
  wz::Sample<double> s;
  s.id = "gradcheck";
  s.image.data = wz::Tensor<double>({mc.canvas_h, mc.canvas_w, mc.in_channels});
  for (long i = 0; i < s.image.data.size(); ++i) s.image.data[i] = rng.uniform(0.0, 1.0);
  s.image.real_rows = std::max(2, (3 * mc.canvas_h) / 4);
  s.image.real_cols = std::max(5, (3 * mc.canvas_w) / 4);
  s.image.mask = wz::Tensor<double>({mc.canvas_h, mc.canvas_w});
  for (int i = 0; i < s.image.real_rows; ++i)
    for (int j = 0; j < s.image.real_cols; ++j) s.image.mask(i, j) = 1.0;
  s.features = wz::Tensor<double>({mc.tab_features});
  for (long i = 0; i < s.features.size(); ++i) s.features[i] = rng.uniform(0.0, 1.0);
  s.y_speed = wz::Tensor<double>({mc.canvas_h, mc.canvas_w});
  for (int i = 0; i < mc.canvas_h; ++i)
    for (int j = 0; j < mc.canvas_w; ++j)
      s.y_speed(i, j) = rng.uniform(5.0, 75.0) / rc.training.s_max * s.image.mask(i, j);
  s.y_incident = 1;

  auto params = wz::init_params<double>(mc, seed);
  // Fully masked conv windows would otherwise sit exactly on the relu kink
  // (pre-activation == bias == 0), where central differences measure slope
  // one-half; random positive biases move them off it.
  auto brng = wz::seeded_rng(seed, 1);
  for (auto& [name, t] : params.entries())
    if (name.find("bias") != std::string::npos)
      for (long j = 0; j < t->size(); ++j) (*t)[j] = brng.uniform(0.05, 0.4);

  const wz::TrainingConfig& tc = rc.training;
  auto loss = [&]() {
    const auto out = wz::model_forward(s, params);
    return wz::sample_loss(out, s, tc);
  };

  wz::ModelCache<double> cache;
  const auto out = wz::model_forward(s, params, &cache);
  const double smax = tc.s_max;
  wz::Tensor<double> pred_mph(out.y_speed.shape()), target_mph(s.y_speed.shape());
  pred_mph.array() = out.y_speed.array() * smax;
  target_mph.array() = s.y_speed.array() * smax;
  wz::Tensor<double> dy =
      wz::huber_loss_grad(pred_mph, target_mph, s.image.mask, tc.huber_delta_mph);
  dy.array() *= tc.w_speed * smax;
  wz::Tensor<double> dlogits = wz::softmax_cross_entropy_logit_grad(out.p_incident, s.y_incident);
  dlogits.array() *= tc.w_incident;
  auto grads = wz::model_backward(params, cache, dy, dlogits);
  if (inject_fault) {
    auto ge = grads.entries();
    auto* t = ge.front().second;
    (*t)[0] = (*t)[0] * 2.0 + 1.0;
  }

  std::vector<const wz::Tensor<double>*> analytic;
  for (auto& [name, t] : grads.entries()) analytic.push_back(t);
  const long coords = reduced ? 25 : 12;
  const auto report = wz::gradcheck(loss, params.entries(), analytic, 1e-5, 1e-4, coords);
  std::cout << report.summary();
  if (!report.pass) throw wz::numeric_error("gradient check failed at " + report.worst_param);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"work-zone speed and incident prediction pipeline"};
  app.require_subcommand(1);
  CommonOpts common;

  auto* gen = app.add_subcommand("generate", "generate a synthetic scenario corpus");
  std::string gen_out;
  long gen_count = 1000;
  std::uint64_t gen_seed = 42;
  gen->add_option("--config", common.config, "JSON run configuration");
  gen->add_option("--out", gen_out, "output corpus directory")->required();
  gen->add_option("--count", gen_count, "number of scenarios (min 20)");
  gen->add_option("--seed", gen_seed, "corpus seed");

  auto* train = app.add_subcommand("train", "train the network or fit a baseline");
  std::string train_corpus, train_out, train_baseline;
  bool train_no_attention = false;
  int train_epochs = -1, train_batch = -1;
  double train_lr = -1;
  std::int64_t train_seed = -1;
  train->add_option("--config", common.config, "JSON run configuration");
  train->add_option("--corpus", train_corpus, "corpus directory")->required();
  train->add_option("--out", train_out, "checkpoint (or fitted-baseline) output path")->required();
  train->add_flag("--no-attention", train_no_attention, "train the attention-free ablation");
  train->add_option("--baseline", train_baseline, "fit a baseline instead: hist or ar");
  train->add_option("--epochs", train_epochs, "override max epochs");
  train->add_option("--batch-size", train_batch, "override batch size");
  train->add_option("--lr", train_lr, "override Adam learning rate");
  train->add_option("--seed", train_seed, "override training seed");

  auto* predict = app.add_subcommand("predict", "predict one scenario");
  std::string pred_model, pred_scenario, pred_out;
  predict->add_option("--config", common.config, "JSON run configuration");
  predict->add_option("--model", pred_model, "checkpoint or fitted-baseline file")->required();
  predict->add_option("--scenario", pred_scenario, "scenario JSON file")->required();
  predict->add_option("--out", pred_out, "prediction JSON output path")->required();

  auto* evaluate = app.add_subcommand("evaluate", "evaluate a model on a corpus split");
  std::string eval_model, eval_corpus, eval_split = "test", eval_report;
  std::vector<std::string> eval_compare;
  double eval_threshold = 0.5;
  evaluate->add_option("--config", common.config, "JSON run configuration");
  evaluate->add_option("--model", eval_model, "checkpoint or fitted-baseline file")->required();
  evaluate->add_option("--corpus", eval_corpus, "corpus directory")->required();
  evaluate->add_option("--split", eval_split, "corpus split: train, val, or test");
  evaluate->add_option("--report", eval_report, "report JSON output path")->required();
  evaluate->add_option("--compare", eval_compare,
                       "baselines to compare against: hist, ar, self, or a fitted file");
  evaluate->add_option("--threshold", eval_threshold, "incident decision threshold");

  auto* render = app.add_subcommand("render", "render a channel as a PPM heatmap");
  std::string render_scenario, render_prediction, render_channel = "hist_speed", render_out;
  render->add_option("--config", common.config, "JSON run configuration");
  auto* rs = render->add_option("--scenario", render_scenario, "scenario JSON file");
  auto* rp = render->add_option("--prediction", render_prediction, "prediction JSON file");
  rs->excludes(rp);
  render->add_option("--channel", render_channel, "channel name");
  render->add_option("--out", render_out, "PPM output path")->required();

  auto* ingest = app.add_subcommand("ingest", "build a corpus from observed feeds");
  std::string ing_events, ing_links, ing_speeds, ing_incidents, ing_out;
  ingest->add_option("--config", common.config, "JSON run configuration");
  ingest->add_option("--events", ing_events, "work-zone event JSON feed")->required();
  ingest->add_option("--links", ing_links, "link metadata CSV")->required();
  ingest->add_option("--speeds", ing_speeds, "speed-record CSV")->required();
  ingest->add_option("--incidents", ing_incidents, "incident event-id CSV");
  ingest->add_option("--out", ing_out, "output corpus directory")->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient diagnostics");
  bool gc_reduced = false, gc_fault = false;
  std::uint64_t gc_seed = 20;
  gradcheck->add_option("--config", common.config, "JSON run configuration");
  gradcheck->add_flag("--reduced-canvas", gc_reduced, "use an 8x8 canvas");
  gradcheck->add_flag("--inject-fault", gc_fault, "corrupt one gradient to prove detection");
  gradcheck->add_option("--seed", gc_seed, "fixture seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_generate(common, gen_out, gen_count, gen_seed);
    if (train->parsed())
      return cmd_train(common, train_corpus, train_out, train_no_attention, train_baseline,
                       train_epochs, train_batch, train_lr, train_seed);
    if (predict->parsed()) return cmd_predict(common, pred_model, pred_scenario, pred_out);
    if (evaluate->parsed())
      return cmd_evaluate(common, eval_model, eval_corpus, eval_split, eval_report, eval_compare,
                          eval_threshold);
    if (render->parsed()) {
      if (render_scenario.empty() && render_prediction.empty())
        throw wz::config_error("render needs --scenario or --prediction");
      return cmd_render(common, render_scenario, render_prediction, render_channel, render_out);
    }
    if (ingest->parsed())
      return cmd_ingest(common, ing_events, ing_links, ing_speeds, ing_incidents, ing_out);
    if (gradcheck->parsed()) return cmd_gradcheck(common, gc_reduced, gc_fault, gc_seed);
    throw wz::config_error("no subcommand given");
  } catch (const wz::config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const wz::data_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const wz::numeric_error& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
