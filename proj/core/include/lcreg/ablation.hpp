#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lcreg/config.hpp"
#include "lcreg/longtail.hpp"
#include "lcreg/trainer.hpp"

namespace lcreg {

struct AblationArm {
  std::string name;
  ExperimentConfig cfg;
};

struct AblationRow {
  std::string arm;
  std::uint64_t seed = 0;
  MetricsReport report;
};

/// The component grid on top of `base`:
///   baseline        no latent branch, no auxiliary losses
///   latent          latent branch only
///   latent_aug      latent branch + augmentation loss on the latents
///   latent_recon    latent branch + reconstruction loss
///   full            everything
///   feature_isda    no latent branch, augmentation loss on pooled class features
std::vector<AblationArm> standard_arms(const ExperimentConfig& base);

/// Selects arms by name from standard_arms; throws on unknown names.
std::vector<AblationArm> select_arms(const ExperimentConfig& base, const std::vector<std::string>& names);

/// Runs stage 1 + stage 2 for every (arm, seed) and evaluates on `test`
/// with splits taken from the training class counts. Each seed overrides
/// cfg.seed, so every arm sees the same initialization stream.
std::vector<AblationRow> run_ablation(const std::vector<AblationArm>& arms, const LongTailDataset& train,
                                      const LongTailDataset& test, const std::vector<std::uint64_t>& seeds);

std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace lcreg
