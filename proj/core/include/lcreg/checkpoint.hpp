#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "lcreg/config.hpp"
#include "lcreg/trainer.hpp"

namespace lcreg {

// Checkpoint directory:
//   manifest.json      {"step", "stage", "image_shape", "num_classes",
//                       "class_counts", "config", "tensors": [{name, shape, file}]}
//   <name>.lct         one file per model tensor
//   stats_n.lct        latent category counts (M)
//   stats_mu.lct       latent category means (M x D)
//   stats_sigma.lct    latent category covariances (M x D x D, or M x D diagonal)
//   class_stats_*.lct  same for per-class feature statistics

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(const std::string& what, std::vector<std::string> missing = {})
      : std::runtime_error(what), missing_(std::move(missing)) {}
  const std::vector<std::string>& missing() const { return missing_; }

 private:
  std::vector<std::string> missing_;
};

struct Checkpoint {
  ExperimentConfig config;
  TrainState state;
};

void save_checkpoint(const TrainState& state, const ExperimentConfig& cfg, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace lcreg
