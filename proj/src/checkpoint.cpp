#include "wz/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <vector>

#include "wz/corpus.hpp"
#include "wz/errors.hpp"
#include "wz/version.hpp"

namespace wz {

namespace {

void append_u64le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t read_u64le(const std::string& buf, std::size_t off) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[off + i])) << (8 * i);
  return v;
}

void require_keys_exact(const Json& j, const std::vector<std::string>& keys,
                        const std::string& what) {
  if (!j.is_object()) throw data_error(what + " must be a JSON object");
  for (const auto& k : keys)
    if (!j.contains(k)) throw data_error(what + " missing key '" + k + "'");
  for (const auto& [k, v] : j.items())
    if (std::find(keys.begin(), keys.end(), k) == keys.end())
      throw data_error(what + " has unknown key '" + k + "'");
}

Json config_to_json(const ModelConfig& m) {
  return Json{{"canvas_h", m.canvas_h},
              {"canvas_w", m.canvas_w},
              {"in_channels", m.in_channels},
              {"conv1_filters", m.conv1_filters},
              {"conv2_filters", m.conv2_filters},
              {"kernel", m.kernel},
              {"tab_features", m.tab_features},
              {"tab_hidden", m.tab_hidden},
              {"d_model", m.d_model},
              {"incident_hidden", m.incident_hidden},
              {"attention_enabled", m.attention_enabled}};
}

ModelConfig config_from_json(const Json& j) {
  require_keys_exact(j,
                     {"canvas_h", "canvas_w", "in_channels", "conv1_filters", "conv2_filters",
                      "kernel", "tab_features", "tab_hidden", "d_model", "incident_hidden",
                      "attention_enabled"},
                     "checkpoint model config");
  ModelConfig m;
  m.canvas_h = j.at("canvas_h").get<int>();
  m.canvas_w = j.at("canvas_w").get<int>();
  m.in_channels = j.at("in_channels").get<int>();
  m.conv1_filters = j.at("conv1_filters").get<int>();
  m.conv2_filters = j.at("conv2_filters").get<int>();
  m.kernel = j.at("kernel").get<int>();
  m.tab_features = j.at("tab_features").get<int>();
  m.tab_hidden = j.at("tab_hidden").get<int>();
  m.d_model = j.at("d_model").get<int>();
  m.incident_hidden = j.at("incident_hidden").get<int>();
  m.attention_enabled = j.at("attention_enabled").get<bool>();
  return m;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams<float>& params,
                     const CheckpointMeta& meta) {
  if (!(meta.model == params.config))
    throw std::invalid_argument("save_checkpoint: meta.model must match params.config");
  params.config.validate();
  if (meta.s_max <= 0) throw config_error("save_checkpoint: s_max must be positive");

  Json j;
  j["schema_version"] = kSchemaVersion;
  j["model"] = config_to_json(params.config);
  j["parameter_count"] = params.parameter_count();
  j["s_max"] = meta.s_max;
  j["seed"] = meta.seed;
  j["note"] = meta.note;
  const std::string meta_text = j.dump();

  std::string out;
  out.reserve(13 + meta_text.size() + static_cast<std::size_t>(params.parameter_count()) * 4);
  out.append(kCheckpointMagic, 4);
  out.push_back(static_cast<char>(kCheckpointVersion));
  append_u64le(out, meta_text.size());
  out += meta_text;
  for (const auto& [name, t] : params.entries())
    for (long i = 0; i < t->size(); ++i) {
      const auto bits = std::bit_cast<std::uint32_t>((*t)[i]);
      for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
    }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw data_error("cannot open checkpoint for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw data_error("short write to checkpoint: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw data_error("cannot open checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (buf.size() < 13) throw data_error("checkpoint truncated before header: " + path);
  if (buf.compare(0, 4, kCheckpointMagic, 4) != 0)
    throw data_error("checkpoint has wrong magic bytes: " + path);
  if (static_cast<unsigned char>(buf[4]) != kCheckpointVersion)
    throw data_error("unsupported checkpoint version " +
                     std::to_string(static_cast<unsigned char>(buf[4])) + ": " + path);
  const std::uint64_t meta_len = read_u64le(buf, 5);
  if (13 + meta_len > buf.size()) throw data_error("checkpoint truncated in metadata: " + path);

  Json j;
  try {
    j = Json::parse(buf.substr(13, meta_len));
  } catch (const Json::parse_error& e) {
    throw data_error(std::string("checkpoint metadata is not valid JSON: ") + e.what());
  }
  require_keys_exact(j, {"schema_version", "model", "parameter_count", "s_max", "seed", "note"},
                     "checkpoint metadata");
  if (j.at("schema_version").get<int>() != kSchemaVersion)
    throw data_error("checkpoint schema version mismatch");

  LoadedCheckpoint out;
  out.meta.model = config_from_json(j.at("model"));
  out.meta.model.validate();
  out.meta.s_max = j.at("s_max").get<double>();
  out.meta.seed = j.at("seed").get<std::uint64_t>();
  out.meta.note = j.at("note").get<std::string>();
  if (out.meta.s_max <= 0) throw data_error("checkpoint s_max must be positive");

  out.params = make_model_params<float>(out.meta.model);
  if (j.at("parameter_count").get<long>() != out.params.parameter_count())
    throw data_error("checkpoint parameter count does not match its model config");

  const std::size_t blob_off = 13 + meta_len;
  const std::size_t want = static_cast<std::size_t>(out.params.parameter_count()) * 4;
  if (buf.size() - blob_off != want)
    throw data_error("checkpoint parameter blob has " + std::to_string(buf.size() - blob_off) +
                     " bytes, expected " + std::to_string(want));

  std::size_t off = blob_off;
  for (auto& [name, t] : out.params.entries())
    for (long i = 0; i < t->size(); ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b)
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + b])) << (8 * b);
      (*t)[i] = std::bit_cast<float>(bits);
      off += 4;
    }
  return out;
}

}  // namespace wz
