#include <benchmark/benchmark.h>

#include <vector>

#include "lcreg/gaussian.hpp"
#include "lcreg/latent_isda.hpp"
#include "lcreg/longtail.hpp"
#include "lcreg/model.hpp"
#include "lcreg/trainer.hpp"

using namespace lcreg;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Tensor t({r, c});
  for (auto& v : t.storage()) v = rng.normal();
  return t;
}

RunningStats random_stats(std::size_t m, std::size_t d, Rng& rng) {
  RunningStats st(m, d);
  for (std::size_t k = 0; k < m; ++k) {
    const Tensor a = random_matrix(d, d, rng);
    const Tensor mu = random_matrix(1, d, rng);
    st.update(k, mu.data(), matmul_nt(a, a), 8);
  }
  return st;
}

// Forward + backward of the full objective on one batch; arg = batch size.
void BM_TrainStep(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const SyntheticBenchmark data = make_synthetic_benchmark({10, 64, 10.0, 1}, 0.5, 0);
  ExperimentConfig cfg;
  const Model model = Model::init(cfg, data.train.image_shape(), 10);
  Rng rng(2);
  const RunningStats stats = random_stats(cfg.num_latents, cfg.feature_dim, rng);
  std::vector<Tensor> images;
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < batch; ++i) {
    images.push_back(data.train[i].image);
    labels.push_back(data.train[i].label);
  }
  for (auto _ : state) {
    const ForwardPass fp = forward_images(model, images);
    LossTerms terms;
    terms.cls = cross_entropy_rows(fp.out.logits, labels);
    terms.recon = recon_loss(fp.reconstructed, fp.features, model.positions());
    terms.aug = latent_aug_loss(model.pool, stats, 0.5);
    Var loss = combined_loss(terms, cfg);
    backward(loss);
    benchmark::DoNotOptimize(loss.item());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch));
}
BENCHMARK(BM_TrainStep)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

// Closed-form augmentation term; args = (M, D).
void BM_IsdaQuadratic(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0)), d = static_cast<std::size_t>(state.range(1));
  Rng rng(3);
  const Var w = Var::parameter(random_matrix(m, d, rng));
  const RunningStats stats = random_stats(m, d, rng);
  std::vector<std::size_t> anchors(m);
  for (std::size_t i = 0; i < m; ++i) anchors[i] = i;
  for (auto _ : state) benchmark::DoNotOptimize(isda_quadratic(w, anchors, stats).value().data().data());
}
BENCHMARK(BM_IsdaQuadratic)->Args({40, 16})->Args({100, 64});

// One draw from N(mu, lambda Sigma) with a cached factorization, and with
// the factorization redone per draw.
void BM_SampleGaussianCached(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  Rng rng(4);
  const Tensor a = random_matrix(d, d, rng);
  const GaussianSampler sampler(Tensor({d}), matmul_nt(a, a), 0.5);
  for (auto _ : state) benchmark::DoNotOptimize(sampler.sample(rng).data().data());
}
BENCHMARK(BM_SampleGaussianCached)->Arg(4)->Arg(16)->Arg(64);

void BM_SampleGaussian(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  Rng rng(5);
  const Tensor a = random_matrix(d, d, rng);
  const Tensor cov = matmul_nt(a, a), mean({d});
  for (auto _ : state) benchmark::DoNotOptimize(sample_gaussian(mean, cov, 0.5, rng).data().data());
}
BENCHMARK(BM_SampleGaussian)->Arg(4)->Arg(16)->Arg(64);

}  // namespace

BENCHMARK_MAIN();
