#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "lcreg/gradcheck.hpp"

namespace lcreg {

struct GradSuiteEntry {
  std::string loss;  // "recon", "latent_aug" or "combined"
  std::size_t config = 0;
  GradCheckReport report;
};

struct GradSuiteResult {
  std::vector<GradSuiteEntry> entries;
  double max_rel_error() const;
};

/// Central-difference check of the reconstruction, latent augmentation and
/// combined objectives on `configurations` random model shapes each.
/// Parameters are drawn off the ReLU kinks.
GradSuiteResult run_gradient_suite(std::uint64_t seed, std::size_t configurations, double h = 1e-5);

}  // namespace lcreg
