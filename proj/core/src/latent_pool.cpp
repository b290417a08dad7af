#include "lcreg/latent_pool.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace lcreg {

Tensor to_positions(const Tensor& feature_map) {
  if (feature_map.rank() != 3) {
    throw std::invalid_argument("feature map must be D x H x W, got " +
                                shape_to_string(feature_map.shape()));
  }
  const std::size_t d = feature_map.dim(0), hw = feature_map.dim(1) * feature_map.dim(2);
  Tensor out({hw, d});
  for (std::size_t c = 0; c < d; ++c)
    for (std::size_t p = 0; p < hw; ++p) out.at(p, c) = feature_map[c * hw + p];
  return out;
}

Tensor from_positions(const Tensor& positions, std::size_t h, std::size_t w) {
  if (positions.rows() != h * w) {
    throw std::invalid_argument("from_positions: " + std::to_string(positions.rows()) +
                                " rows for " + std::to_string(h) + "x" + std::to_string(w));
  }
  const std::size_t d = positions.cols(), hw = h * w;
  Tensor out({d, h, w});
  for (std::size_t c = 0; c < d; ++c)
    for (std::size_t p = 0; p < hw; ++p) out[c * hw + p] = positions.at(p, c);
  return out;
}

namespace {

Tensor gaussian_matrix(std::size_t r, std::size_t c, double stddev, Rng& rng) {
  Tensor t({r, c});
  for (auto& v : t.storage()) v = stddev * rng.normal();
  return t;
}

}  // namespace

LatentPool LatentPool::init(std::size_t num_latents, std::size_t dim, Rng& rng) {
  if (num_latents < 1 || dim < 1) throw std::invalid_argument("LatentPool: M and D must be >= 1");
  LatentPool p;
  p.latents = Var::parameter(gaussian_matrix(num_latents, dim, kLatentInitStd, rng));
  p.proj_weight = Var::parameter(gaussian_matrix(dim, dim, 1.0 / std::sqrt(static_cast<double>(dim)), rng));
  p.proj_bias = Var::parameter(Tensor({dim}));
  p.head_weight = Var::parameter(gaussian_matrix(num_latents, dim, 0.01, rng));
  p.head_bias = Var::parameter(Tensor({num_latents}));
  return p;
}

std::vector<NamedParam> LatentPool::parameters() const {
  return {{"pool.latents", latents},
          {"pool.proj_weight", proj_weight},
          {"pool.proj_bias", proj_bias},
          {"pool.head_weight", head_weight},
          {"pool.head_bias", head_bias}};
}

Var encode_latents(const LatentPool& pool) {
  return add_row(matmul_nt(pool.latents, pool.proj_weight), pool.proj_bias);
}

Var similarity_maps(const Var& encoded, const Var& features) {
  if (encoded.cols() != features.cols()) {
    throw std::invalid_argument("similarity_maps: latent dim " + std::to_string(encoded.cols()) +
                                " != feature dim " + std::to_string(features.cols()));
  }
  return sigmoid(matmul_nt(features, encoded));
}

Var normalize_maps(const Var& similarity) { return softmax_rows(similarity); }

Var reconstruct(const Var& encoded, const Var& normalized) {
  if (normalized.cols() != encoded.rows()) {
    throw std::invalid_argument("reconstruct: " + std::to_string(normalized.cols()) +
                                " maps for " + std::to_string(encoded.rows()) + " latents");
  }
  return matmul(normalized, encoded);
}

Var recon_loss(const Var& reconstructed, const Var& features, std::size_t positions_per_image) {
  if (reconstructed.rows() != features.rows() || reconstructed.cols() != features.cols()) {
    throw std::invalid_argument("recon_loss: shape mismatch " + shape_to_string(reconstructed.shape()) +
                                " vs " + shape_to_string(features.shape()));
  }
  if (positions_per_image == 0 || features.rows() % positions_per_image != 0) {
    throw std::invalid_argument("recon_loss: rows not a multiple of positions per image");
  }
  Var corr = block_gram(reconstructed, features, positions_per_image);
  std::vector<std::size_t> targets(features.rows());
  for (std::size_t i = 0; i < targets.size(); ++i) targets[i] = i % positions_per_image;
  return cross_entropy_rows(corr, targets);
}

Decoder Decoder::init(std::size_t dim, std::size_t num_classes, Rng& rng) {
  if (dim < 1 || num_classes < 1) throw std::invalid_argument("Decoder: D and C must be >= 1");
  Decoder d;
  d.proj_weight = Var::parameter(gaussian_matrix(dim, 2 * dim, std::sqrt(2.0 / (2.0 * dim)), rng));
  d.proj_bias = Var::parameter(Tensor({dim}));
  d.cls_weight = Var::parameter(gaussian_matrix(num_classes, dim, 1.0 / std::sqrt(static_cast<double>(dim)), rng));
  d.cls_bias = Var::parameter(Tensor({num_classes}));
  return d;
}

std::vector<NamedParam> Decoder::parameters() const {
  return {{"decoder.proj_weight", proj_weight},
          {"decoder.proj_bias", proj_bias},
          {"classifier.weight", cls_weight},
          {"classifier.bias", cls_bias}};
}

DecoderOutput fuse_and_classify(const Var& features, const Var& reconstructed, const Decoder& dec,
                                std::size_t positions_per_image) {
  if (features.cols() != dec.dim() || reconstructed.cols() != dec.dim()) {
    throw std::invalid_argument("fuse_and_classify: feature dim does not match decoder");
  }
  Var fused = relu(add_row(matmul_nt(concat_cols(features, reconstructed), dec.proj_weight), dec.proj_bias));
  Var pooled = segment_mean(fused, positions_per_image);
  return {pooled, classify_pooled(pooled, dec)};
}

Var classify_pooled(const Var& pooled, const Decoder& dec) {
  return add_row(matmul_nt(pooled, dec.cls_weight), dec.cls_bias);
}

}  // namespace lcreg
