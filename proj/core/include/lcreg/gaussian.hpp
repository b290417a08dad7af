#pragma once

#include "lcreg/rng.hpp"
#include "lcreg/tensor.hpp"

namespace lcreg {

inline constexpr double kSymmetryTol = 1e-9;
inline constexpr double kPsdTol = 1e-8;

/// Factorized N(mean, scale * cov) for repeated draws.
///
/// The covariance is eigendecomposed once; eigenvalues in [-kPsdTol, 0) are
/// clamped to zero, anything below that is rejected. Draws use
/// x = mean + sqrt(scale) * V * diag(sqrt(clamped ev)) * z with z drawn as
/// D consecutive Rng::normal() values.
class GaussianSampler {
 public:
  GaussianSampler(Tensor mean, const Tensor& cov, double scale);

  Tensor sample(Rng& rng) const;
  std::size_t dim() const { return mean_.numel(); }
  /// D x D factor L with L L^T = scale * clamped cov.
  const Tensor& factor() const { return factor_; }

 private:
  Tensor mean_;
  Tensor factor_;
  bool degenerate_ = false;
};

/// One draw from N(mean, scale * cov).
Tensor sample_gaussian(const Tensor& mean, const Tensor& cov, double scale, Rng& rng);

/// Throws "covariance not PSD" unless cov is square, symmetric within
/// kSymmetryTol and has no eigenvalue below -kPsdTol.
void check_psd(const Tensor& cov);

/// Eigenvalue clamp at zero; returns the repaired symmetric matrix.
Tensor clamp_psd(const Tensor& cov);

}  // namespace lcreg
