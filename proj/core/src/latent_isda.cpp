#include "lcreg/latent_isda.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "lcreg/gaussian.hpp"

namespace lcreg {

CovarianceMode default_covariance_mode(std::size_t dim) {
  return dim > kFullCovarianceMaxDim ? CovarianceMode::diagonal : CovarianceMode::full;
}

RunningStats::RunningStats(std::size_t categories, std::size_t dim)
    : RunningStats(categories, dim, default_covariance_mode(dim)) {}

RunningStats::RunningStats(std::size_t categories, std::size_t dim, CovarianceMode mode)
    : dim_(dim),
      mode_(mode),
      counts_(categories, 0),
      means_(categories * dim, 0.0),
      sigmas_(categories * (mode == CovarianceMode::full ? dim * dim : dim), 0.0) {
  if (categories < 1 || dim < 1) throw std::invalid_argument("RunningStats: sizes must be >= 1");
}

void RunningStats::update(std::size_t m, std::span<const double> obs_mean, const Tensor& obs_cov,
                          std::size_t n) {
  if (m >= categories()) throw std::out_of_range("RunningStats: category " + std::to_string(m));
  if (n == 0) throw std::invalid_argument("RunningStats: observation count must be >= 1");
  if (obs_mean.size() != dim_) throw std::invalid_argument("RunningStats: mean has wrong length");

  const std::size_t d = dim_;
  const bool obs_zero = obs_cov.empty() ||
                        std::all_of(obs_cov.data().begin(), obs_cov.data().end(),
                                    [](double v) { return v == 0.0; });
  const bool obs_is_diag_vector = obs_cov.rank() == 1;
  if (!obs_zero) {
    if (mode_ == CovarianceMode::full || !obs_is_diag_vector) {
      if (obs_cov.rank() != 2 || obs_cov.rows() != d || obs_cov.cols() != d) {
        throw std::invalid_argument("RunningStats: covariance must be D x D");
      }
      check_psd(obs_cov);
    } else {
      if (obs_cov.numel() != d) throw std::invalid_argument("RunningStats: diagonal must have length D");
      for (double v : obs_cov.data())
        if (!(v >= -kPsdTol)) throw std::invalid_argument("covariance not PSD: negative variance");
    }
  }
  auto obs_cov_at = [&](std::size_t i, std::size_t j) -> double {
    if (obs_zero) return 0.0;
    if (obs_is_diag_vector) return i == j ? obs_cov[i] : 0.0;
    return obs_cov.at(i, j);
  };

  const double n_old = static_cast<double>(counts_[m]);
  const double n_obs = static_cast<double>(n);
  const double n_new = n_old + n_obs;
  double* mu = means_.data() + m * d;

  std::vector<double> delta(d);
  for (std::size_t i = 0; i < d; ++i) delta[i] = mu[i] - obs_mean[i];
  const double w_old = n_old / n_new, w_obs = n_obs / n_new;
  const double w_cross = n_old * n_obs / (n_new * n_new);

  if (mode_ == CovarianceMode::full) {
    double* sig = sigmas_.data() + m * d * d;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j)
        sig[i * d + j] = w_old * sig[i * d + j] + w_obs * obs_cov_at(i, j) + w_cross * delta[i] * delta[j];
  } else {
    double* sig = sigmas_.data() + m * d;
    for (std::size_t i = 0; i < d; ++i)
      sig[i] = w_old * sig[i] + w_obs * obs_cov_at(i, i) + w_cross * delta[i] * delta[i];
  }
  for (std::size_t i = 0; i < d; ++i) mu[i] = (n_old * mu[i] + n_obs * obs_mean[i]) / n_new;
  counts_[m] += n;
}

void RunningStats::update_point(std::size_t m, std::span<const double> obs_mean, std::size_t n) {
  update(m, obs_mean, Tensor(), n);
}

Tensor RunningStats::mean(std::size_t m) const {
  if (m >= categories()) throw std::out_of_range("RunningStats: category " + std::to_string(m));
  return Tensor({dim_}, std::vector<double>(means_.begin() + m * dim_, means_.begin() + (m + 1) * dim_));
}

Tensor RunningStats::cov(std::size_t m) const {
  if (m >= categories()) throw std::out_of_range("RunningStats: category " + std::to_string(m));
  const std::size_t d = dim_;
  Tensor out({d, d});
  if (mode_ == CovarianceMode::full) {
    std::copy_n(sigmas_.begin() + m * d * d, d * d, out.data().begin());
  } else {
    for (std::size_t i = 0; i < d; ++i) out.at(i, i) = sigmas_[m * d + i];
  }
  return out;
}

void RunningStats::cov_times(std::size_t m, std::span<const double> vec, std::span<double> out) const {
  const std::size_t d = dim_;
  if (mode_ == CovarianceMode::full) {
    const double* sig = sigmas_.data() + m * d * d;
    for (std::size_t i = 0; i < d; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += sig[i * d + j] * vec[j];
      out[i] = s;
    }
  } else {
    const double* sig = sigmas_.data() + m * d;
    for (std::size_t i = 0; i < d; ++i) out[i] = sig[i] * vec[i];
  }
}

double RunningStats::quad_form(std::size_t m, std::span<const double> vec) const {
  std::vector<double> tmp(dim_);
  cov_times(m, vec, tmp);
  double s = 0.0;
  for (std::size_t i = 0; i < dim_; ++i) s += vec[i] * tmp[i];
  return s;
}

Tensor RunningStats::counts_tensor() const {
  Tensor t({categories()});
  for (std::size_t m = 0; m < categories(); ++m) t[m] = static_cast<double>(counts_[m]);
  return t;
}

Tensor RunningStats::means_tensor() const { return Tensor({categories(), dim_}, means_); }

Tensor RunningStats::sigmas_tensor() const {
  if (mode_ == CovarianceMode::full) return Tensor({categories(), dim_, dim_}, sigmas_);
  return Tensor({categories(), dim_}, sigmas_);
}

RunningStats RunningStats::from_tensors(const Tensor& counts, const Tensor& means, const Tensor& sigmas) {
  const std::size_t m = counts.numel();
  if (means.rank() != 2 || means.dim(0) != m) throw std::invalid_argument("stats: means must be M x D");
  const std::size_t d = means.dim(1);
  CovarianceMode mode;
  if (sigmas.shape() == Shape{m, d, d}) mode = CovarianceMode::full;
  else if (sigmas.shape() == Shape{m, d}) mode = CovarianceMode::diagonal;
  else throw std::invalid_argument("stats: sigma shape " + shape_to_string(sigmas.shape()));
  RunningStats s(m, d, mode);
  for (std::size_t i = 0; i < m; ++i) {
    const double c = counts[i];
    if (c < 0 || c != std::floor(c)) throw std::invalid_argument("stats: counts must be integers");
    s.counts_[i] = static_cast<std::size_t>(c);
  }
  s.means_ = means.storage();
  s.sigmas_ = sigmas.storage();
  return s;
}

void observe_iteration(RunningStats& stats, const LatentPool& pool, std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("observe_iteration: batch size must be >= 1");
  const Tensor& latents = pool.latents.value();
  for (std::size_t m = 0; m < pool.num_latents(); ++m) stats.update_point(m, latents.row(m), batch_size);
}

LambdaValue lambda_at(const AugSchedule& schedule, std::size_t t) {
  if (schedule.total_iterations == 0) throw std::invalid_argument("lambda_at: T must be >= 1");
  if (t > schedule.total_iterations) return {schedule.lambda0, true};
  return {static_cast<double>(t) / static_cast<double>(schedule.total_iterations) * schedule.lambda0,
          false};
}

Var isda_quadratic(const Var& weight, std::span<const std::size_t> anchors, const RunningStats& stats) {
  const std::size_t k = weight.rows(), d = weight.cols();
  if (d != stats.dim()) throw std::invalid_argument("isda_quadratic: weight dim != stats dim");
  const std::size_t n = anchors.size();
  for (auto a : anchors)
    if (a >= k || a >= stats.categories()) throw std::out_of_range("isda_quadratic: anchor out of range");

  const Tensor& w = weight.value();
  Tensor q({n, k});
  // u[i][j] = Sigma_a (w_j - w_a), kept for the backward pass.
  std::vector<double> u(n * k * d);
  std::vector<double> diff(d);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t a = anchors[i];
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t c = 0; c < d; ++c) diff[c] = w.at(j, c) - w.at(a, c);
      std::span<double> uij(u.data() + (i * k + j) * d, d);
      stats.cov_times(a, diff, uij);
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += diff[c] * uij[c];
      q.at(i, j) = s;
    }
  }
  std::vector<std::size_t> anchor_copy(anchors.begin(), anchors.end());
  return make_op(std::move(q), {weight},
                 [weight, u = std::move(u), anchor_copy = std::move(anchor_copy), n, k, d](const Tensor& g) {
                   Tensor gw(weight.shape());
                   for (std::size_t i = 0; i < n; ++i) {
                     const std::size_t a = anchor_copy[i];
                     for (std::size_t j = 0; j < k; ++j) {
                       const double gij = 2.0 * g[i * k + j];
                       if (gij == 0.0) continue;
                       const double* uij = u.data() + (i * k + j) * d;
                       for (std::size_t c = 0; c < d; ++c) {
                         gw[j * d + c] += gij * uij[c];
                         gw[a * d + c] -= gij * uij[c];
                       }
                     }
                   }
                   accumulate_grad(weight, gw);
                 });
}

Var latent_aug_loss(const LatentPool& pool, const RunningStats& stats, double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("latent_aug_loss: lambda must be >= 0");
  const std::size_t m = pool.num_latents();
  if (stats.categories() != m || stats.dim() != pool.dim()) {
    throw std::invalid_argument("latent_aug_loss: stats do not match the latent pool");
  }
  std::vector<std::size_t> pseudo(m);
  for (std::size_t i = 0; i < m; ++i) pseudo[i] = i;
  Var logits = add_row(matmul_nt(pool.latents, pool.head_weight), pool.head_bias);
  if (lambda > 0.0) logits = add(logits, scale(isda_quadratic(pool.head_weight, pseudo, stats), 0.5 * lambda));
  return cross_entropy_rows(logits, pseudo);
}

Var feature_isda_loss(const Var& features, std::span<const std::size_t> labels, const Var& weight,
                      const Var& bias, const RunningStats& stats, double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("feature_isda_loss: lambda must be >= 0");
  Var logits = add_row(matmul_nt(features, weight), bias);
  if (lambda > 0.0) logits = add(logits, scale(isda_quadratic(weight, labels, stats), 0.5 * lambda));
  return cross_entropy_rows(logits, labels);
}

Tensor sample_augmented(const LatentPool& pool, const RunningStats& stats, std::size_t m, double lambda,
                        Rng& rng) {
  if (m >= pool.num_latents()) throw std::out_of_range("sample_augmented: category out of range");
  const Tensor mean({pool.dim()}, std::vector<double>(pool.latents.value().row(m).begin(),
                                                      pool.latents.value().row(m).end()));
  return sample_gaussian(mean, stats.cov(m), lambda, rng);
}

}  // namespace lcreg
