#include "lcreg/checkpoint.hpp"

#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "lcreg/serialize.hpp"

namespace lcreg {

namespace fs = std::filesystem;

namespace {

void write_stats(const RunningStats& stats, const fs::path& dir, const std::string& prefix) {
  write_tensor(dir / (prefix + "n.lct"), stats.counts_tensor());
  write_tensor(dir / (prefix + "mu.lct"), stats.means_tensor());
  write_tensor(dir / (prefix + "sigma.lct"), stats.sigmas_tensor());
}

RunningStats read_stats(const fs::path& dir, const std::string& prefix) {
  std::vector<std::string> missing;
  for (const char* part : {"n", "mu", "sigma"}) {
    if (!fs::exists(dir / (prefix + part + ".lct"))) missing.push_back(prefix + part + ".lct");
  }
  if (!missing.empty()) {
    std::string msg = "checkpoint " + dir.string() + " is missing:";
    for (const auto& m : missing) msg += " " + m;
    throw CheckpointError(msg, missing);
  }
  return RunningStats::from_tensors(read_tensor(dir / (prefix + "n.lct")), read_tensor(dir / (prefix + "mu.lct")),
                                    read_tensor(dir / (prefix + "sigma.lct")));
}

}  // namespace

void save_checkpoint(const TrainState& state, const ExperimentConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  const Model& model = state.model;
  nlohmann::ordered_json manifest;
  manifest["step"] = state.step;
  manifest["stage"] = state.stage;
  manifest["image_shape"] = {model.in_channels, model.height, model.width};
  manifest["num_classes"] = model.num_classes;
  manifest["class_counts"] = state.class_counts;
  manifest["config"] = config_to_json(cfg);
  auto tensors = nlohmann::ordered_json::array();
  for (const auto& p : model.parameters()) {
    const std::string file = p.name + ".lct";
    write_tensor(dir / file, p.var.value());
    tensors.push_back({{"name", p.name}, {"shape", p.var.shape()}, {"file", file}});
  }
  manifest["tensors"] = tensors;
  write_stats(state.latent_stats, dir, "stats_");
  write_stats(state.class_stats, dir, "class_stats_");
  std::ofstream f(dir / "manifest.json");
  if (!f) throw CheckpointError("cannot write " + (dir / "manifest.json").string());
  f << manifest.dump(2) << '\n';
}

Checkpoint load_checkpoint(const fs::path& dir) {
  std::ifstream f(dir / "manifest.json");
  if (!f) throw CheckpointError("missing checkpoint manifest: " + (dir / "manifest.json").string(), {"manifest.json"});
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("bad checkpoint manifest: " + std::string(e.what()));
  }

  Checkpoint ck;
  try {
    ck.config = config_from_json(manifest.at("config"));
    const auto shape = manifest.at("image_shape").get<Shape>();
    const auto num_classes = manifest.at("num_classes").get<std::size_t>();
    ck.state.model = Model::init(ck.config, shape, num_classes);
    ck.state.class_counts = manifest.at("class_counts").get<std::vector<std::size_t>>();
    ck.state.step = manifest.at("step").get<std::size_t>();
    ck.state.stage = manifest.at("stage").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("bad checkpoint manifest: " + std::string(e.what()));
  }

  std::map<std::string, std::string> files;
  for (const auto& t : manifest.at("tensors")) files[t.at("name").get<std::string>()] = t.at("file").get<std::string>();

  auto params = ck.state.model.parameters();
  std::vector<std::string> missing;
  for (const auto& p : params) {
    const auto it = files.find(p.name);
    if (it == files.end() || !fs::exists(dir / it->second)) missing.push_back(p.name);
  }
  if (!missing.empty()) {
    std::string msg = "checkpoint " + dir.string() + " is missing tensors:";
    for (const auto& m : missing) msg += " " + m;
    throw CheckpointError(msg, missing);
  }
  for (auto& p : params) {
    Tensor t = read_tensor(dir / files.at(p.name));
    if (t.shape() != p.var.shape()) {
      throw CheckpointError("checkpoint tensor " + p.name + " has shape " + shape_to_string(t.shape()) +
                            ", expected " + shape_to_string(p.var.shape()));
    }
    p.var.mutable_value() = std::move(t);
  }
  ck.state.latent_stats = read_stats(dir, "stats_");
  ck.state.class_stats = read_stats(dir, "class_stats_");
  return ck;
}

}  // namespace lcreg
