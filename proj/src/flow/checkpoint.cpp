#include <cstdio>

#include "cdflow/binary_io.hpp"
#include "cdflow/error.hpp"
#include "cdflow/flow.hpp"

namespace cdflow::flow {

namespace {

constexpr int kCheckpointVersion = 1;

std::string blob_name(std::size_t i, bool chain) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "layer_%03zu.%s", i, chain ? "cdc" : "f64");
  return buf;
}

}  // namespace

void save_model(const FlowModel& model, const std::filesystem::path& dir, std::uint64_t seed,
                const nlohmann::json& extra) {
  std::filesystem::create_directories(dir);
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    const Layer& l = model.layer(i);
    nlohmann::json entry = {{"kind", l.kind()}};
    if (const auto* cd = dynamic_cast<const CDConv*>(&l)) {
      entry["file"] = blob_name(i, true);
      io::write_file(dir / blob_name(i, true), structured::encode_chain(cd->chain()));
    } else {
      entry["file"] = blob_name(i, false);
      io::write_f64_array(dir / blob_name(i, false), l.parameters());
    }
    if (const auto* a = dynamic_cast<const ActNorm*>(&l)) entry["initialized"] = a->initialized();
    layers.push_back(std::move(entry));
  }
  const nlohmann::json manifest = {{"format", "cdflow-checkpoint"},
                                   {"format_version", kCheckpointVersion},
                                   {"seed", seed},
                                   {"model", to_json(model.config())},
                                   {"layers", std::move(layers)},
                                   {"state", extra}};
  io::write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

LoadedModel load_model(const std::filesystem::path& dir) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(io::read_text(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("checkpoint manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "cdflow-checkpoint")
    throw ConfigError("not a cdflow checkpoint: " + dir.string());
  if (manifest.value("format_version", 0) != kCheckpointVersion)
    throw ConfigError("unsupported checkpoint version");
  const std::uint64_t seed = manifest.value("seed", std::uint64_t{0});
  FlowModel model(model_config_from_json(manifest.at("model")), seed);
  const auto& layers = manifest.at("layers");
  if (layers.size() != model.layer_count())
    throw ConfigError("checkpoint layer count does not match the architecture");
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    Layer& l = model.layer(i);
    const auto& entry = layers[i];
    if (entry.value("kind", "") != l.kind())
      throw ConfigError("checkpoint layer " + std::to_string(i) + " has kind " +
                        entry.value("kind", "") + ", expected " + l.kind());
    const auto path = dir / entry.at("file").get<std::string>();
    if (auto* cd = dynamic_cast<CDConv*>(&l)) {
      structured::CDChain chain = structured::load_chain(path);
      if (chain.dim() != cd->chain().dim() ||
          chain.diagonal_count() != cd->chain().diagonal_count())
        throw ConfigError("checkpoint chain shape mismatch at layer " + std::to_string(i));
      cd->chain() = std::move(chain);
    } else {
      const auto values = io::read_f64_array(path);
      auto dst = l.parameters();
      if (values.size() != dst.size())
        throw ConfigError("checkpoint parameter count mismatch at layer " + std::to_string(i));
      std::copy(values.begin(), values.end(), dst.begin());
    }
    if (auto* a = dynamic_cast<ActNorm*>(&l)) a->set_initialized(entry.value("initialized", false));
  }
  return {std::move(model), seed, manifest.value("state", nlohmann::json::object())};
}

}  // namespace cdflow::flow
