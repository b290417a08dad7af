#include "lcreg/model.hpp"

#include <cmath>
#include <stdexcept>

namespace lcreg {

Tensor im2col3x3(const Tensor& image) {
  if (image.rank() != 3) throw std::invalid_argument("im2col3x3: image must be C x H x W");
  const std::size_t ch = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor out({h * w, ch * 9});
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      double* row = out.data().data() + (r * w + c) * ch * 9;
      for (std::size_t k = 0; k < ch; ++k) {
        for (std::size_t ki = 0; ki < 3; ++ki) {
          for (std::size_t kj = 0; kj < 3; ++kj) {
            const auto rr = static_cast<std::ptrdiff_t>(r + ki) - 1;
            const auto cc = static_cast<std::ptrdiff_t>(c + kj) - 1;
            double v = 0.0;
            if (rr >= 0 && cc >= 0 && rr < static_cast<std::ptrdiff_t>(h) &&
                cc < static_cast<std::ptrdiff_t>(w)) {
              v = image[(k * h + static_cast<std::size_t>(rr)) * w + static_cast<std::size_t>(cc)];
            }
            row[k * 9 + ki * 3 + kj] = v;
          }
        }
      }
    }
  }
  return out;
}

Encoder Encoder::init(std::size_t in_channels, const std::vector<std::size_t>& hidden, std::size_t out_dim,
                      Rng& rng) {
  Encoder e;
  std::size_t fan_in = in_channels * 9;
  std::vector<std::size_t> widths = hidden;
  widths.push_back(out_dim);
  for (std::size_t w : widths) {
    Tensor wt({w, fan_in});
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : wt.storage()) v = std * rng.normal();
    e.weights.push_back(Var::parameter(std::move(wt)));
    e.biases.push_back(Var::parameter(Tensor({w})));
    fan_in = w;
  }
  return e;
}

Var Encoder::forward(const Var& patches) const {
  Var x = patches;
  for (std::size_t l = 0; l < weights.size(); ++l) x = relu(add_row(matmul_nt(x, weights[l]), biases[l]));
  return x;
}

std::vector<NamedParam> Encoder::parameters() const {
  std::vector<NamedParam> out;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    out.push_back({"encoder." + std::to_string(l) + ".weight", weights[l]});
    out.push_back({"encoder." + std::to_string(l) + ".bias", biases[l]});
  }
  return out;
}

Model Model::init(const ExperimentConfig& cfg, const Shape& image_shape, std::size_t num_classes) {
  cfg.validate();
  if (image_shape.size() != 3) throw std::invalid_argument("Model: image shape must be C x H x W");
  const Rng rng = Rng(cfg.seed).derive(1);
  Model m;
  m.in_channels = image_shape[0];
  m.height = image_shape[1];
  m.width = image_shape[2];
  m.num_classes = num_classes;
  m.use_latent = cfg.use_latent;
  // One substream per component so pool settings never shift the others.
  Rng enc_rng = rng.derive(0), pool_rng = rng.derive(1), dec_rng = rng.derive(2);
  m.encoder = Encoder::init(m.in_channels, cfg.encoder_channels, cfg.feature_dim, enc_rng);
  m.pool = LatentPool::init(cfg.num_latents, cfg.feature_dim, pool_rng);
  m.decoder = Decoder::init(cfg.feature_dim, num_classes, dec_rng);
  return m;
}

std::vector<NamedParam> Model::parameters() const {
  auto out = encoder.parameters();
  for (auto& p : pool.parameters()) out.push_back(std::move(p));
  for (auto& p : decoder.parameters()) out.push_back(std::move(p));
  return out;
}

ForwardPass forward(const Model& model, const Var& patches, std::size_t images) {
  if (patches.rows() != images * model.positions()) {
    throw std::invalid_argument("forward: patch rows do not match image count");
  }
  ForwardPass fp;
  fp.features = model.encoder.forward(patches);
  if (model.use_latent) {
    fp.encoded = encode_latents(model.pool);
    fp.similarity = similarity_maps(fp.encoded, fp.features);
    fp.normalized = normalize_maps(fp.similarity);
    fp.reconstructed = reconstruct(fp.encoded, fp.normalized);
  } else {
    fp.reconstructed = Var::constant(Tensor(fp.features.shape()));
  }
  fp.out = fuse_and_classify(fp.features, fp.reconstructed, model.decoder, model.positions());
  return fp;
}

ForwardPass forward_images(const Model& model, std::span<const Tensor> images) {
  const std::size_t hw = model.positions();
  const std::size_t cols = model.in_channels * 9;
  Tensor patches({images.size() * hw, cols});
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != Shape{model.in_channels, model.height, model.width}) {
      throw std::invalid_argument("forward_images: image shape " + shape_to_string(images[i].shape()));
    }
    const Tensor cols_i = im2col3x3(images[i]);
    std::copy(cols_i.data().begin(), cols_i.data().end(), patches.data().begin() + i * hw * cols);
  }
  return forward(model, Var::constant(std::move(patches)), images.size());
}

Tensor export_histogram(const Model& model, const Tensor& image, const std::optional<Region>& region) {
  if (!model.use_latent) throw std::invalid_argument("export_histogram: model has no latent branch");
  const ForwardPass fp = forward_images(model, std::span<const Tensor>(&image, 1));
  const Tensor& shat = fp.normalized.value();
  const std::size_t m_count = shat.cols();
  Region r = region.value_or(Region{0, 0, model.height, model.width});
  if (r.height == 0 || r.width == 0 || r.row + r.height > model.height || r.col + r.width > model.width) {
    throw std::invalid_argument("export_histogram: region outside the feature grid");
  }
  Tensor weights({m_count});
  for (std::size_t i = r.row; i < r.row + r.height; ++i)
    for (std::size_t j = r.col; j < r.col + r.width; ++j)
      for (std::size_t m = 0; m < m_count; ++m) weights[m] += shat.at(i * model.width + j, m);
  const double inv = 1.0 / static_cast<double>(r.height * r.width);
  for (auto& v : weights.storage()) v *= inv;
  return weights;
}

}  // namespace lcreg
