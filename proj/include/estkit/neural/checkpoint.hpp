#pragma once

#include <cstring>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "estkit/data/dataset.hpp"
#include "estkit/neural/train.hpp"

namespace estkit::neural {

inline constexpr int kCheckpointFormatVersion = 1;
inline constexpr std::uint32_t kByteOrderMarker = 0x01020304u;

struct CheckpointInfo {
  std::string system;
  std::string variant;                    // llm-filter | llm-filter-o
  std::optional<ContextOptions> context;  // absent for the context-free variant
  nlohmann::json training = nlohmann::json::object();
};

template <class S>
struct LoadedCheckpoint {
  std::unique_ptr<NeuralFilterModel<S>> model;
  CheckpointInfo info;
};

namespace detail {

inline nlohmann::json model_config_json(const ModelConfig& c) {
  return {{"window", c.window},
          {"segment", c.segment},
          {"state_dim", c.state_dim},
          {"obs_dim", c.obs_dim},
          {"head_hidden", c.head_hidden},
          {"max_context", c.max_context},
          {"stats_embedding", c.stats_embedding},
          {"backbone",
           {{"kind", c.backbone.kind},
            {"d_model", c.backbone.d_model},
            {"layers", c.backbone.layers},
            {"heads", c.backbone.heads},
            {"ffn_mult", c.backbone.ffn_mult}}}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.window = j.at("window").get<Index>();
  c.segment = j.at("segment").get<Index>();
  c.state_dim = j.at("state_dim").get<Index>();
  c.obs_dim = j.at("obs_dim").get<Index>();
  c.head_hidden = j.at("head_hidden").get<Index>();
  c.max_context = j.at("max_context").get<Index>();
  c.stats_embedding = j.at("stats_embedding").get<bool>();
  const auto& b = j.at("backbone");
  c.backbone.kind = b.at("kind").get<std::string>();
  c.backbone.d_model = b.at("d_model").get<Index>();
  c.backbone.layers = b.at("layers").get<Index>();
  c.backbone.heads = b.at("heads").get<Index>();
  c.backbone.ffn_mult = b.at("ffn_mult").get<Index>();
  return c;
}

inline nlohmann::json context_json(const ContextOptions& o) {
  return {{"examples", o.examples},
          {"example_steps", o.example_steps},
          {"max_tokens", o.max_tokens},
          {"instruction_template", o.instruction_template}};
}

inline ContextOptions context_from_json(const nlohmann::json& j) {
  ContextOptions o;
  o.examples = j.at("examples").get<std::size_t>();
  o.example_steps = j.at("example_steps").get<Index>();
  o.max_tokens = j.at("max_tokens").get<std::size_t>();
  o.instruction_template = j.at("instruction_template").get<std::string>();
  return o;
}

template <class T>
void put_le(std::string& out, T v) {
  v = binio::to_little_endian(v);
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.append(b, sizeof(T));
}

}  // namespace detail

// Writes header.json and params.bin (a uint32 byte-order marker followed by
// every parameter as little-endian float32, in manifest order).
template <class S>
void save_checkpoint(const NeuralFilterModel<S>& model, const CheckpointInfo& info, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory '" + dir.string() + "': " + ec.message());
  std::string blob;
  detail::put_le(blob, kByteOrderMarker);
  nlohmann::json manifest = nlohmann::json::array();
  for (const Param<S>* p : model.params().all()) {
    manifest.push_back({{"name", p->name},
                        {"rows", p->value.rows()},
                        {"cols", p->value.cols()},
                        {"offset", blob.size()},
                        {"trainable", p->trainable}});
    for (Index i = 0; i < p->value.size(); ++i) detail::put_le(blob, static_cast<float>(p->value.data()[i]));
  }
  binio::write_file(dir / "params.bin", blob);

  nlohmann::json h;
  h["format"] = "estkit-checkpoint";
  h["version"] = kCheckpointFormatVersion;
  h["byte_order"] = "little-endian";
  h["byte_order_marker"] = kByteOrderMarker;
  h["dtype"] = "float32";
  h["system"] = info.system;
  h["variant"] = info.variant;
  h["context"] = info.context ? "present" : "absent";
  if (info.context) h["context_options"] = detail::context_json(*info.context);
  h["model"] = detail::model_config_json(model.config());
  h["state_stats"] = estkit::detail::stats_json(model.state_norm());
  h["obs_stats"] = estkit::detail::stats_json(model.obs_norm());
  h["params"] = {{"file", "params.bin"}, {"bytes", blob.size()}, {"fnv1a64", hex64(fnv1a64(blob.data(), blob.size()))},
                 {"manifest", manifest}};
  h["training"] = info.training;
  binio::write_file(dir / "header.json", h.dump(2) + "\n");
}

template <class S = float>
LoadedCheckpoint<S> load_checkpoint(const std::filesystem::path& dir) {
  const auto header_path = dir / "header.json";
  if (!std::filesystem::exists(header_path)) throw IoError("no checkpoint header at '" + header_path.string() + "'");
  const auto raw = binio::read_file(header_path);
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(raw.begin(), raw.end());
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint header '" + header_path.string() + "': " + e.what());
  }
  if (h.value("format", "") != "estkit-checkpoint") throw IoError("'" + header_path.string() + "' is not a checkpoint");
  const int version = h.at("version").get<int>();
  if (version > kCheckpointFormatVersion)
    throw UnsupportedVersionError("checkpoint version " + std::to_string(version) + " is newer than supported version " +
                                  std::to_string(kCheckpointFormatVersion));
  try {
    LoadedCheckpoint<S> out;
    out.info.system = h.at("system").get<std::string>();
    out.info.variant = h.at("variant").get<std::string>();
    if (h.at("context").get<std::string>() == "present")
      out.info.context = detail::context_from_json(h.at("context_options"));
    out.info.training = h.value("training", nlohmann::json::object());
    out.model = std::make_unique<NeuralFilterModel<S>>(detail::model_config_from_json(h.at("model")), 0);
    out.model->set_normalization(estkit::detail::stats_from_json(h.at("state_stats")),
                                 estkit::detail::stats_from_json(h.at("obs_stats")));

    const auto& ph = h.at("params");
    const auto bin_path = dir / ph.at("file").get<std::string>();
    const auto blob = binio::read_file(bin_path);
    if (blob.size() != ph.at("bytes").get<std::size_t>())
      throw ChecksumError("'" + bin_path.string() + "' has " + std::to_string(blob.size()) + " bytes, expected " +
                          std::to_string(ph.at("bytes").get<std::size_t>()));
    if (hex64(fnv1a64(blob.data(), blob.size())) != ph.at("fnv1a64").get<std::string>())
      throw ChecksumError("checksum mismatch in '" + bin_path.string() + "'");
    std::uint32_t marker;
    std::memcpy(&marker, blob.data(), sizeof marker);
    if (binio::to_little_endian(marker) != kByteOrderMarker) throw IoError("bad byte-order marker in '" + bin_path.string() + "'");

    const auto& manifest = ph.at("manifest");
    auto params = out.model->params().all();
    if (manifest.size() != params.size())
      throw ShapeError("checkpoint has " + std::to_string(manifest.size()) + " parameters, model expects " +
                       std::to_string(params.size()));
    for (std::size_t k = 0; k < params.size(); ++k) {
      Param<S>& p = *params[k];
      const auto& m = manifest[k];
      if (m.at("name").get<std::string>() != p.name || m.at("rows").get<Index>() != p.value.rows() ||
          m.at("cols").get<Index>() != p.value.cols())
        throw ShapeError("checkpoint parameter '" + m.at("name").get<std::string>() + "' does not match model parameter '" +
                         p.name + "'");
      const std::size_t offset = m.at("offset").get<std::size_t>();
      if (offset + static_cast<std::size_t>(p.value.size()) * sizeof(float) > blob.size())
        throw ChecksumError("parameter '" + p.name + "' runs past the end of '" + bin_path.string() + "'");
      for (Index i = 0; i < p.value.size(); ++i) {
        float v;
        std::memcpy(&v, blob.data() + offset + static_cast<std::size_t>(i) * sizeof(float), sizeof v);
        p.value.data()[i] = static_cast<S>(binio::to_little_endian(v));
      }
      p.trainable = m.value("trainable", true);
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint header '" + header_path.string() + "': " + e.what());
  }
}

}  // namespace estkit::neural
