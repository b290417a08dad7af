#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "lcreg/config.hpp"
#include "lcreg/latent_pool.hpp"

namespace lcreg {

/// 3x3, stride 1, zero padding 1. Rows are positions (h*W + w), columns are
/// channel-major kernel taps (c*9 + ki*3 + kj). Shape (H*W) x (C*9).
Tensor im2col3x3(const Tensor& image);

/// Small convolutional encoder: one 3x3 conv followed by 1x1 layers, ReLU
/// after each, ending at `out_dim` channels.
struct Encoder {
  std::vector<Var> weights;  // layer l: out_l x in_l (in_0 = C*9)
  std::vector<Var> biases;

  static Encoder init(std::size_t in_channels, const std::vector<std::size_t>& hidden,
                      std::size_t out_dim, Rng& rng);
  /// patches: (images*HW) x (C*9) -> (images*HW) x out_dim
  Var forward(const Var& patches) const;
  std::vector<NamedParam> parameters() const;
};

struct Model {
  std::size_t in_channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t num_classes = 0;
  bool use_latent = true;
  Encoder encoder;
  LatentPool pool;
  Decoder decoder;

  /// Parameter draws come from Rng(cfg.seed).derive(1); the encoder, pool and
  /// decoder use its substreams 0, 1 and 2.
  static Model init(const ExperimentConfig& cfg, const Shape& image_shape, std::size_t num_classes);

  std::size_t positions() const { return height * width; }
  std::size_t feature_dim() const { return decoder.dim(); }
  /// Every tensor, including the latent pool when the latent branch is off.
  std::vector<NamedParam> parameters() const;
};

struct ForwardPass {
  Var features;       // (images*HW) x D
  Var encoded;        // M x D (undefined when use_latent is false)
  Var similarity;     // (images*HW) x M
  Var normalized;     // (images*HW) x M
  Var reconstructed;  // (images*HW) x D, zeros when use_latent is false
  DecoderOutput out;
};

/// patches: stacked im2col3x3 rows of `images` images.
ForwardPass forward(const Model& model, const Var& patches, std::size_t images);
ForwardPass forward_images(const Model& model, std::span<const Tensor> images);

/// Rectangular window on the feature grid.
struct Region {
  std::size_t row = 0;
  std::size_t col = 0;
  std::size_t height = 1;
  std::size_t width = 1;
};

/// weight[m] = mean of S_hat[m, ., .] over the image (or over `region`).
Tensor export_histogram(const Model& model, const Tensor& image,
                        const std::optional<Region>& region = std::nullopt);

}  // namespace lcreg
