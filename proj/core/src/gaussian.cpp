#include "lcreg/gaussian.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace lcreg {

namespace {

using MatrixX = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::SelfAdjointEigenSolver<MatrixX> decompose(const Tensor& cov) {
  if (cov.rank() != 2 || cov.rows() != cov.cols()) {
    throw std::invalid_argument("covariance not PSD: not square " + shape_to_string(cov.shape()));
  }
  const std::size_t d = cov.rows();
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double v = cov.at(i, j);
      if (!std::isfinite(v) || std::abs(v - cov.at(j, i)) > kSymmetryTol) {
        throw std::invalid_argument("covariance not PSD: asymmetric or non-finite entry");
      }
    }
  }
  const Eigen::Map<const MatrixX> m(cov.data().data(), static_cast<Eigen::Index>(d),
                                    static_cast<Eigen::Index>(d));
  Eigen::SelfAdjointEigenSolver<MatrixX> es(m);
  if (es.info() != Eigen::Success) {
    throw std::runtime_error("covariance not PSD: eigendecomposition failed");
  }
  if (d > 0 && es.eigenvalues()(0) < -kPsdTol) {
    throw std::invalid_argument("covariance not PSD: eigenvalue " +
                                std::to_string(es.eigenvalues()(0)));
  }
  return es;
}

}  // namespace

void check_psd(const Tensor& cov) { (void)decompose(cov); }

Tensor clamp_psd(const Tensor& cov) {
  auto es = decompose(cov);
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0);
  const MatrixX repaired = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  Tensor out(cov.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = repaired.data()[i];
  // Restore exact symmetry lost to rounding.
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = i + 1; j < out.cols(); ++j) {
      const double avg = 0.5 * (out.at(i, j) + out.at(j, i));
      out.at(i, j) = out.at(j, i) = avg;
    }
  return out;
}

GaussianSampler::GaussianSampler(Tensor mean, const Tensor& cov, double scale)
    : mean_(std::move(mean)) {
  if (!(scale >= 0.0) || !std::isfinite(scale)) {
    throw std::invalid_argument("sample_gaussian: scale must be finite and >= 0");
  }
  const std::size_t d = mean_.numel();
  if (cov.rank() != 2 || cov.rows() != d || cov.cols() != d) {
    throw std::invalid_argument("sample_gaussian: covariance shape " + shape_to_string(cov.shape()) +
                                " does not match mean length " + std::to_string(d));
  }
  auto es = decompose(cov);
  factor_ = Tensor({d, d});
  degenerate_ = true;
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0);
  for (std::size_t j = 0; j < d; ++j) {
    const double s = std::sqrt(scale * ev(static_cast<Eigen::Index>(j)));
    if (s > 0.0) degenerate_ = false;
    for (std::size_t i = 0; i < d; ++i)
      factor_.at(i, j) = es.eigenvectors()(static_cast<Eigen::Index>(i),
                                           static_cast<Eigen::Index>(j)) * s;
  }
}

Tensor GaussianSampler::sample(Rng& rng) const {
  const std::size_t d = mean_.numel();
  std::vector<double> z(d);
  for (auto& v : z) v = rng.normal();
  Tensor out = mean_;
  if (degenerate_) return out;
  for (std::size_t i = 0; i < d; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += factor_.at(i, j) * z[j];
    out[i] += s;
  }
  return out;
}

Tensor sample_gaussian(const Tensor& mean, const Tensor& cov, double scale, Rng& rng) {
  return GaussianSampler(mean, cov, scale).sample(rng);
}

}  // namespace lcreg
