#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "lcreg/autograd.hpp"
#include "lcreg/latent_pool.hpp"
#include "lcreg/rng.hpp"

namespace lcreg {

enum class CovarianceMode { full, diagonal };

/// Above this feature dimension the default mode keeps diagonals only.
inline constexpr std::size_t kFullCovarianceMaxDim = 256;

CovarianceMode default_covariance_mode(std::size_t dim);

/// Per-category count, mean and covariance, merged batch by batch.
///
/// Merging (n', mu', Sigma') into (n, mu, Sigma):
///   n   <- n + n'
///   mu  <- (n mu + n' mu') / (n + n')
///   Sig <- (n Sig + n' Sig') / (n + n') + n n' (mu - mu')(mu - mu')^T / (n + n')^2
/// which is the pooled population covariance of both sets.
class RunningStats {
 public:
  RunningStats() = default;
  RunningStats(std::size_t categories, std::size_t dim);
  RunningStats(std::size_t categories, std::size_t dim, CovarianceMode mode);

  std::size_t categories() const { return counts_.size(); }
  std::size_t dim() const { return dim_; }
  CovarianceMode mode() const { return mode_; }

  /// `obs_cov` is D x D (or a length-D diagonal in diagonal mode).
  void update(std::size_t m, std::span<const double> obs_mean, const Tensor& obs_cov, std::size_t n);
  /// Shorthand for a point mass: Sigma' = 0.
  void update_point(std::size_t m, std::span<const double> obs_mean, std::size_t n);

  std::size_t count(std::size_t m) const { return counts_.at(m); }
  Tensor mean(std::size_t m) const;
  /// Always D x D; diagonal mode expands to a diagonal matrix.
  Tensor cov(std::size_t m) const;
  /// Quadratic form d^T Sigma_m d.
  double quad_form(std::size_t m, std::span<const double> d) const;
  /// Sigma_m d written into `out`.
  void cov_times(std::size_t m, std::span<const double> d, std::span<double> out) const;

  // Checkpoint tensors: counts (M), means (M x D), sigmas (M x D x D or M x D).
  Tensor counts_tensor() const;
  Tensor means_tensor() const;
  Tensor sigmas_tensor() const;
  static RunningStats from_tensors(const Tensor& counts, const Tensor& means, const Tensor& sigmas);

  friend bool operator==(const RunningStats&, const RunningStats&) = default;

 private:
  std::size_t dim_ = 0;
  CovarianceMode mode_ = CovarianceMode::full;
  std::vector<std::size_t> counts_;
  std::vector<double> means_;   // M * D
  std::vector<double> sigmas_;  // M * D * D, or M * D
};

/// Feeds the current latent embeddings as a point mass of weight `batch_size`.
void observe_iteration(RunningStats& stats, const LatentPool& pool, std::size_t batch_size);

struct AugSchedule {
  double lambda0 = 0.5;
  std::size_t total_iterations = 1;
};

struct LambdaValue {
  double lambda = 0.0;
  bool clamped = false;  // t exceeded total_iterations
};

/// lambda = (t / T) * lambda0, held at lambda0 past T.
LambdaValue lambda_at(const AugSchedule& schedule, std::size_t t);

/// q[i, j] = (w_j - w_a)^T Sigma_a (w_j - w_a) with a = anchors[i]; N x K.
/// Differentiable in `weight`; the covariances are constants.
Var isda_quadratic(const Var& weight, std::span<const std::size_t> anchors, const RunningStats& stats);

/// Closed-form augmentation loss on the latent pool: each latent m is a
/// sample of pseudo-class m, logits come from the latent head and are shifted
/// by (lambda / 2) q. Mean over the M categories.
Var latent_aug_loss(const LatentPool& pool, const RunningStats& stats, double lambda);

/// Same bound applied to ordinary per-sample features keyed by their class
/// labels (classic ISDA on the classifier input).
Var feature_isda_loss(const Var& features, std::span<const std::size_t> labels, const Var& weight,
                      const Var& bias, const RunningStats& stats, double lambda);

/// One draw f^a_m ~ N(f'_m, lambda Sigma_m).
Tensor sample_augmented(const LatentPool& pool, const RunningStats& stats, std::size_t m,
                        double lambda, Rng& rng);

}  // namespace lcreg
