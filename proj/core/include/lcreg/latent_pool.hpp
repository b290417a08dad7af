#pragma once

#include <cstddef>
#include <vector>

#include "lcreg/autograd.hpp"
#include "lcreg/gradcheck.hpp"
#include "lcreg/rng.hpp"

namespace lcreg {

// Layout note: feature maps travel through the pool as position-major
// matrices, (images * H * W) rows by D columns, so one matmul covers a whole
// batch. `to_positions` / `from_positions` convert a single D x H x W map.

Tensor to_positions(const Tensor& feature_map);                        // D,H,W -> HW,D
Tensor from_positions(const Tensor& positions, std::size_t h, std::size_t w);  // HW,D -> D,H,W

inline constexpr double kLatentInitStd = 0.02;

/// Shared latent categories plus the two heads that act on them.
struct LatentPool {
  Var latents;      // M x D, one learnable embedding per latent category
  Var proj_weight;  // D x D, 1x1 projection applied to every latent
  Var proj_bias;    // D
  Var head_weight;  // M x D, latent classifier used by the augmentation loss
  Var head_bias;    // M

  static LatentPool init(std::size_t num_latents, std::size_t dim, Rng& rng);

  std::size_t num_latents() const { return latents.rows(); }
  std::size_t dim() const { return latents.cols(); }
  std::vector<NamedParam> parameters() const;
};

/// Row m is proj_weight * latents[m] + proj_bias (M x D).
Var encode_latents(const LatentPool& pool);

/// S[p, m] = sigmoid(<E[m], features[p]>); features is P x D, result P x M.
Var similarity_maps(const Var& encoded, const Var& features);

/// Softmax across the M similarity maps at each position (applied to S itself).
Var normalize_maps(const Var& similarity);

/// f_hat[p] = sum_m S_hat[p, m] * E[m]; P x D.
Var reconstruct(const Var& encoded, const Var& normalized);

/// Per image, C = f_hat^T f over positions (HW x HW); row j is a logit vector
/// whose target is j. Mean cross-entropy over all rows of all images.
Var recon_loss(const Var& reconstructed, const Var& features, std::size_t positions_per_image);

/// 1x1 fuse of [f, f_hat], ReLU, global average pool, linear classifier.
struct Decoder {
  Var proj_weight;  // D x 2D
  Var proj_bias;    // D
  Var cls_weight;   // C x D
  Var cls_bias;     // C

  static Decoder init(std::size_t dim, std::size_t num_classes, Rng& rng);
  std::size_t dim() const { return proj_bias.value().numel(); }
  std::size_t num_classes() const { return cls_bias.value().numel(); }
  std::vector<NamedParam> parameters() const;
};

struct DecoderOutput {
  Var pooled;  // images x D, input to the final linear classifier
  Var logits;  // images x C
};

/// `features` and `reconstructed` are (images*HW) x D. When the latent branch
/// is disabled pass zeros for `reconstructed`.
DecoderOutput fuse_and_classify(const Var& features, const Var& reconstructed, const Decoder& dec,
                                std::size_t positions_per_image);

/// Linear classifier alone, for frozen pooled features.
Var classify_pooled(const Var& pooled, const Decoder& dec);

}  // namespace lcreg
