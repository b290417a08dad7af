#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace lcreg {

enum class AugTarget { latent, class_features };
enum class LrSchedule { constant, cosine };
enum class CovarianceSetting { automatic, full, diagonal };

struct ExperimentConfig {
  // Loss weights: L = alpha * L_aug + beta * L_recon + gamma * L_cls.
  double alpha = 0.1;
  double beta = 0.1;
  double gamma = 1.0;
  double lambda0 = 0.5;

  std::size_t num_latents = 40;
  std::size_t feature_dim = 16;
  /// Hidden widths; the first layer is a 3x3 conv, the rest and the final
  /// projection to feature_dim are 1x1. Every layer is followed by ReLU.
  std::vector<std::size_t> encoder_channels = {16};

  double learning_rate = 0.05;
  double stage2_learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  LrSchedule lr_schedule = LrSchedule::cosine;

  std::size_t stage1_epochs = 30;
  std::size_t stage2_epochs = 10;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;

  bool use_latent = true;
  bool use_aug_loss = true;
  bool use_recon_loss = true;
  AugTarget aug_target = AugTarget::latent;
  CovarianceSetting covariance = CovarianceSetting::automatic;

  /// Throws std::invalid_argument on out-of-range fields.
  void validate() const;
};

/// Exact field names; unknown keys and wrong types throw std::invalid_argument.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg);

ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path);

}  // namespace lcreg
