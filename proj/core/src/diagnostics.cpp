#include "lcreg/diagnostics.hpp"

#include <algorithm>

#include "lcreg/latent_isda.hpp"
#include "lcreg/model.hpp"
#include "lcreg/trainer.hpp"

namespace lcreg {

double GradSuiteResult::max_rel_error() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.report.max_rel_error);
  return m;
}

namespace {

struct Instance {
  ExperimentConfig cfg;
  Model model;
  RunningStats stats;
  std::vector<Tensor> images;
  std::vector<std::size_t> labels;
};

Instance random_instance(Rng& rng) {
  Instance in;
  in.cfg.num_latents = 2 + rng.uniform_index(4);
  in.cfg.feature_dim = 2 + rng.uniform_index(4);
  in.cfg.encoder_channels = {2 + rng.uniform_index(4)};
  in.cfg.seed = rng.next_u64();
  const std::size_t channels = 1 + rng.uniform_index(3), side = 2 + rng.uniform_index(3);
  const std::size_t classes = 2 + rng.uniform_index(4), images = 1 + rng.uniform_index(3);

  in.model = Model::init(in.cfg, {channels, side, side}, classes);
  // Zero biases leave dead units exactly on the ReLU kink.
  for (auto& b : in.model.encoder.biases)
    for (auto& v : b.mutable_value().storage()) v = 0.1 * rng.normal();
  for (auto& v : in.model.decoder.proj_bias.mutable_value().storage()) v = 0.1 * rng.normal();
  // Spread the latents so similarities are not all ~0.5.
  for (auto& v : in.model.pool.latents.mutable_value().storage()) v = rng.normal();
  for (auto& v : in.model.pool.head_weight.mutable_value().storage()) v = 0.5 * rng.normal();

  // Drift history gives non-trivial covariances.
  in.stats = RunningStats(in.cfg.num_latents, in.cfg.feature_dim);
  Tensor drift = in.model.pool.latents.value();
  for (int t = 0; t < 5; ++t) {
    for (std::size_t m = 0; m < in.cfg.num_latents; ++m) {
      std::vector<double> x(drift.row(m).begin(), drift.row(m).end());
      for (auto& v : x) v += 0.5 * rng.normal();
      in.stats.update_point(m, x, 1 + rng.uniform_index(8));
    }
  }

  for (std::size_t i = 0; i < images; ++i) {
    Tensor img({channels, side, side});
    for (auto& v : img.storage()) v = rng.normal();
    in.images.push_back(std::move(img));
    in.labels.push_back(rng.uniform_index(classes));
  }
  return in;
}

}  // namespace

GradSuiteResult run_gradient_suite(std::uint64_t seed, std::size_t configurations, double h) {
  GradSuiteResult result;
  Rng rng(seed);
  for (std::size_t c = 0; c < configurations; ++c) {
    Instance in = random_instance(rng);
    const double lambda = rng.uniform(0.05, 1.0);
    const auto params = in.model.parameters();
    auto recon = [&] {
      const ForwardPass fp = forward_images(in.model, in.images);
      return recon_loss(fp.reconstructed, fp.features, in.model.positions());
    };
    auto aug = [&] { return latent_aug_loss(in.model.pool, in.stats, lambda); };
    auto combined = [&] {
      const ForwardPass fp = forward_images(in.model, in.images);
      LossTerms t{cross_entropy_rows(fp.out.logits, in.labels),
                  recon_loss(fp.reconstructed, fp.features, in.model.positions()),
                  latent_aug_loss(in.model.pool, in.stats, lambda)};
      return combined_loss(t, in.cfg);
    };
    result.entries.push_back({"recon", c, check_gradients(recon, params, h)});
    result.entries.push_back({"latent_aug", c, check_gradients(aug, params, h)});
    result.entries.push_back({"combined", c, check_gradients(combined, params, h)});
  }
  return result;
}

}  // namespace lcreg
