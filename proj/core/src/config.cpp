#include "lcreg/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace lcreg {

namespace {

const char* to_string(AugTarget t) { return t == AugTarget::latent ? "latent" : "class_features"; }
const char* to_string(LrSchedule s) { return s == LrSchedule::cosine ? "cosine" : "constant"; }
const char* to_string(CovarianceSetting c) {
  switch (c) {
    case CovarianceSetting::full: return "full";
    case CovarianceSetting::diagonal: return "diagonal";
    default: return "auto";
  }
}

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("config field '") + key + "': " + e.what());
  }
}

bool is_non_negative_integer(const nlohmann::json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

void read_unsigned(const nlohmann::json& j, const char* key, std::size_t& out) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!is_non_negative_integer(v)) {
    throw std::invalid_argument(std::string("config field '") + key + "' must be a non-negative integer");
  }
  out = v.get<std::size_t>();
}

}  // namespace

void ExperimentConfig::validate() const {
  auto require = [](bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(msg);
  };
  require(alpha >= 0.0 && beta >= 0.0 && gamma >= 0.0, "alpha, beta, gamma must be >= 0");
  require(lambda0 >= 0.0, "lambda0 must be >= 0");
  require(num_latents >= 1, "num_latents must be >= 1");
  require(feature_dim >= 1, "feature_dim must be >= 1");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(learning_rate > 0.0 && stage2_learning_rate > 0.0, "learning rates must be > 0");
  require(momentum >= 0.0 && momentum < 1.0, "momentum must be in [0, 1)");
  require(weight_decay >= 0.0, "weight_decay must be >= 0");
  for (auto w : encoder_channels) require(w >= 1, "encoder_channels entries must be >= 1");
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {
      "alpha", "beta", "gamma", "lambda0", "num_latents", "feature_dim", "encoder_channels",
      "learning_rate", "stage2_learning_rate", "momentum", "weight_decay", "lr_schedule",
      "stage1_epochs", "stage2_epochs", "batch_size", "seed", "use_latent", "use_aug_loss",
      "use_recon_loss", "aug_target", "covariance"};
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw std::invalid_argument("unknown config key '" + key + "'");
  }
  ExperimentConfig cfg;
  read_field(j, "alpha", cfg.alpha);
  read_field(j, "beta", cfg.beta);
  read_field(j, "gamma", cfg.gamma);
  read_field(j, "lambda0", cfg.lambda0);
  read_unsigned(j, "num_latents", cfg.num_latents);
  read_unsigned(j, "feature_dim", cfg.feature_dim);
  read_field(j, "encoder_channels", cfg.encoder_channels);
  read_field(j, "learning_rate", cfg.learning_rate);
  read_field(j, "stage2_learning_rate", cfg.stage2_learning_rate);
  read_field(j, "momentum", cfg.momentum);
  read_field(j, "weight_decay", cfg.weight_decay);
  read_unsigned(j, "stage1_epochs", cfg.stage1_epochs);
  read_unsigned(j, "stage2_epochs", cfg.stage2_epochs);
  read_unsigned(j, "batch_size", cfg.batch_size);
  if (j.contains("seed")) {
    if (!is_non_negative_integer(j.at("seed"))) throw std::invalid_argument("config field 'seed' must be a u64");
    cfg.seed = j.at("seed").get<std::uint64_t>();
  }
  read_field(j, "use_latent", cfg.use_latent);
  read_field(j, "use_aug_loss", cfg.use_aug_loss);
  read_field(j, "use_recon_loss", cfg.use_recon_loss);

  if (j.contains("lr_schedule")) {
    const auto s = j.at("lr_schedule").get<std::string>();
    if (s == "cosine") cfg.lr_schedule = LrSchedule::cosine;
    else if (s == "constant") cfg.lr_schedule = LrSchedule::constant;
    else throw std::invalid_argument("lr_schedule must be 'cosine' or 'constant'");
  }
  if (j.contains("aug_target")) {
    const auto s = j.at("aug_target").get<std::string>();
    if (s == "latent") cfg.aug_target = AugTarget::latent;
    else if (s == "class_features") cfg.aug_target = AugTarget::class_features;
    else throw std::invalid_argument("aug_target must be 'latent' or 'class_features'");
  }
  if (j.contains("covariance")) {
    const auto s = j.at("covariance").get<std::string>();
    if (s == "auto") cfg.covariance = CovarianceSetting::automatic;
    else if (s == "full") cfg.covariance = CovarianceSetting::full;
    else if (s == "diagonal") cfg.covariance = CovarianceSetting::diagonal;
    else throw std::invalid_argument("covariance must be 'auto', 'full' or 'diagonal'");
  }
  cfg.validate();
  return cfg;
}

nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::ordered_json j;
  j["alpha"] = cfg.alpha;
  j["beta"] = cfg.beta;
  j["gamma"] = cfg.gamma;
  j["lambda0"] = cfg.lambda0;
  j["num_latents"] = cfg.num_latents;
  j["feature_dim"] = cfg.feature_dim;
  j["encoder_channels"] = cfg.encoder_channels;
  j["learning_rate"] = cfg.learning_rate;
  j["stage2_learning_rate"] = cfg.stage2_learning_rate;
  j["momentum"] = cfg.momentum;
  j["weight_decay"] = cfg.weight_decay;
  j["lr_schedule"] = to_string(cfg.lr_schedule);
  j["stage1_epochs"] = cfg.stage1_epochs;
  j["stage2_epochs"] = cfg.stage2_epochs;
  j["batch_size"] = cfg.batch_size;
  j["seed"] = cfg.seed;
  j["use_latent"] = cfg.use_latent;
  j["use_aug_loss"] = cfg.use_aug_loss;
  j["use_recon_loss"] = cfg.use_recon_loss;
  j["aug_target"] = to_string(cfg.aug_target);
  j["covariance"] = to_string(cfg.covariance);
  return j;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << config_to_json(cfg).dump(2) << '\n';
}

}  // namespace lcreg
