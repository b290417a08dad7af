#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "lcreg/ablation.hpp"
#include "lcreg/checkpoint.hpp"
#include "lcreg/config.hpp"
#include "lcreg/model.hpp"
#include "lcreg/serialize.hpp"
#include "lcreg/trainer.hpp"

using namespace lcreg;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.num_latents = 3;
  cfg.feature_dim = 4;
  cfg.encoder_channels = {4};
  cfg.stage1_epochs = 2;
  cfg.stage2_epochs = 2;
  cfg.batch_size = 8;
  cfg.seed = 3;
  return cfg;
}

LongTailDataset tiny_dataset(std::uint64_t seed = 1) {
  Rng rng(seed);
  const PartBank bank = make_part_bank(4, {}, rng);
  return synth_dataset({4, 12, 4.0, seed}, bank, 0.1, rng);
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("lcreg_trainer_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string run_log(const ExperimentConfig& cfg, const LongTailDataset& ds) {
  std::string log;
  TrainOptions opts;
  opts.on_epoch = [&](const EpochRecord& r) { log += metrics_json_line(r) + "\n"; };
  TrainState st = train_stage1(cfg, ds, opts);
  train_stage2(st, cfg, ds, opts);
  return log;
}

}  // namespace

// ---- combined loss ------------------------------------------------------------

TEST(CombinedLoss, WeightedSum) {
  ExperimentConfig cfg;
  const LossTerms terms{Var::constant(Tensor::scalar(0.5)), Var::constant(Tensor::scalar(1.0)),
                        Var::constant(Tensor::scalar(2.0))};
  EXPECT_NEAR(combined_loss(terms, cfg).item(), 0.8, 1e-15);

  const LossTerms zeros{Var::constant(Tensor::scalar(0.0)), Var::constant(Tensor::scalar(0.0)),
                        Var::constant(Tensor::scalar(0.0))};
  EXPECT_EQ(combined_loss(zeros, cfg).item(), 0.0);

  cfg.alpha = cfg.beta = 0.0;
  EXPECT_EQ(combined_loss(terms, cfg).item(), 0.5);
}

TEST(CombinedLoss, DisabledTermsContributeZero) {
  ExperimentConfig cfg;
  const LossTerms terms{Var::constant(Tensor::scalar(0.5)), Var::constant(Tensor::scalar(1.0)),
                        Var::constant(Tensor::scalar(2.0))};
  cfg.use_recon_loss = false;
  EXPECT_NEAR(combined_loss(terms, cfg).item(), 0.7, 1e-15);
  cfg.use_aug_loss = false;
  EXPECT_EQ(combined_loss(terms, cfg).item(), 0.5);
  cfg = ExperimentConfig{};
  cfg.use_latent = false;  // both latent terms depend on the branch
  EXPECT_EQ(combined_loss(terms, cfg).item(), 0.5);
  EXPECT_EQ(combined_loss({Var::constant(Tensor::scalar(0.5)), Var{}, Var{}}, ExperimentConfig{}).item(), 0.5);
}

TEST(CombinedLoss, NoLatentBranchIsBaseline) {
  ExperimentConfig cfg = tiny_config();
  cfg.use_latent = false;
  const auto ds = tiny_dataset();
  Model model = Model::init(cfg, ds.image_shape(), ds.num_classes());
  std::vector<Tensor> images;
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < 6; ++i) {
    images.push_back(ds[i].image);
    labels.push_back(ds[i].label);
  }
  const ForwardPass fp = forward_images(model, images);
  LossTerms terms;
  terms.cls = cross_entropy_rows(fp.out.logits, labels);
  if (recon_enabled(cfg)) terms.recon = recon_loss(fp.reconstructed, fp.features, model.positions());
  if (aug_enabled(cfg)) terms.aug = latent_aug_loss(model.pool, RunningStats(3, 4), 0.5);
  const Var loss = combined_loss(terms, cfg);
  EXPECT_EQ(loss.item(), cfg.gamma * terms.cls.item());
  backward(loss);
  for (const auto& p : model.pool.parameters()) {
    const Tensor g = p.var.grad();
    EXPECT_EQ(g, Tensor(p.var.shape())) << p.name;
  }
  for (double v : fp.reconstructed.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(CombinedLoss, FullObjectiveGradients) {
  ExperimentConfig cfg = tiny_config();
  const auto ds = tiny_dataset();
  Model model = Model::init(cfg, ds.image_shape(), ds.num_classes());
  RunningStats stats(3, 4);
  Rng rng(4);
  // Zero biases put dead-unit pre-activations exactly on the ReLU kink.
  for (auto& b : model.encoder.biases)
    for (auto& v : b.mutable_value().storage()) v = 0.1 * rng.normal();
  for (auto& v : model.decoder.proj_bias.mutable_value().storage()) v = 0.1 * rng.normal();
  for (int i = 0; i < 6; ++i) {
    observe_iteration(stats, model.pool, 2);
    for (auto& v : model.pool.latents.mutable_value().storage()) v += 0.3 * rng.normal();
  }
  std::vector<Tensor> images = {ds[0].image, ds[5].image, ds[11].image};
  std::vector<std::size_t> labels = {ds[0].label, ds[5].label, ds[11].label};
  const auto params = model.parameters();
  const auto report = check_gradients(
      [&] {
        const ForwardPass fp = forward_images(model, images);
        LossTerms t{cross_entropy_rows(fp.out.logits, labels),
                    recon_loss(fp.reconstructed, fp.features, model.positions()),
                    latent_aug_loss(model.pool, stats, 0.5)};
        return combined_loss(t, cfg);
      },
      params);
  EXPECT_LE(report.max_rel_error, 1e-4) << report.worst_param;
}

// ---- evaluation ----------------------------------------------------------------

TEST(Evaluate, OracleAndConstantClassifiers) {
  const std::vector<std::size_t> labels = {0, 0, 1, 1, 2, 2, 3, 3};
  const ClassSplits splits = split_classes({200, 50, 50, 5});
  const auto perfect = evaluate_predictions(labels, labels, 4, splits);
  EXPECT_EQ(perfect.overall_top1, 100.0);
  EXPECT_EQ(perfect.many_top1, 100.0);
  EXPECT_EQ(perfect.medium_top1, 100.0);
  EXPECT_EQ(perfect.few_top1, 100.0);

  const std::vector<std::size_t> constant(8, 1);
  const auto c = evaluate_predictions(labels, constant, 4, splits);
  EXPECT_DOUBLE_EQ(c.overall_top1, 25.0);
  EXPECT_EQ(c.many_top1, 0.0);
  EXPECT_DOUBLE_EQ(*c.medium_top1, 50.0);
  EXPECT_EQ(c.per_class_top1[1], 100.0);

  const auto empty_split = evaluate_predictions(labels, labels, 4, split_classes({50, 50, 50, 50}));
  EXPECT_FALSE(empty_split.many_top1.has_value());
  EXPECT_FALSE(empty_split.few_top1.has_value());
}

TEST(Evaluate, RandomClassifierNearChance) {
  Rng rng(5);
  std::vector<std::size_t> labels(10000), preds(10000);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    labels[i] = i % 10;
    preds[i] = rng.uniform_index(10);
  }
  const auto r = evaluate_predictions(labels, preds, 10, split_classes(class_counts({10, 500, 100.0, 0})));
  EXPECT_NEAR(r.overall_top1, 10.0, 1.0);
}

TEST(Evaluate, OverallIsCountWeightedPerClass) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t c = 2 + rng.uniform_index(8), n = 1 + rng.uniform_index(200);
    std::vector<std::size_t> labels(n), preds(n);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = rng.uniform_index(c);
      preds[i] = rng.uniform() < 0.6 ? labels[i] : rng.uniform_index(c);
    }
    std::vector<std::size_t> counts(c);
    for (auto l : labels) ++counts[l];
    const auto r = evaluate_predictions(labels, preds, c, split_classes(counts));
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      EXPECT_EQ(r.per_class_count[k], counts[k]);
      if (!r.per_class_top1[k]) continue;
      EXPECT_GE(*r.per_class_top1[k], 0.0);
      EXPECT_LE(*r.per_class_top1[k], 100.0);
      num += counts[k] * *r.per_class_top1[k];
      den += counts[k];
    }
    EXPECT_NEAR(r.overall_top1, num / den, 1e-9);
  }
}

// ---- optimizer / schedule ---------------------------------------------------------

TEST(Sgd, MomentumAndDecay) {
  Var w = Var::parameter(Tensor::vector({1.0}));
  Sgd opt({w}, 0.9, 0.1);
  opt.zero_grad();
  backward(sum(scale(w, 2.0)));  // grad 2
  opt.step(0.5);
  // v = 2 + 0.1 * 1 = 2.1; w = 1 - 1.05
  EXPECT_NEAR(w.value()[0], -0.05, 1e-15);
  opt.zero_grad();
  backward(sum(scale(w, 2.0)));
  opt.step(0.5);
  // v = 0.9 * 2.1 + 2 + 0.1 * (-0.05) = 3.885
  EXPECT_NEAR(w.value()[0], -0.05 - 0.5 * 3.885, 1e-14);
}

TEST(Schedule, CosineAndConstant) {
  EXPECT_EQ(scheduled_lr(LrSchedule::constant, 0.1, 7, 10), 0.1);
  EXPECT_NEAR(scheduled_lr(LrSchedule::cosine, 0.1, 0, 10), 0.1, 1e-15);
  EXPECT_NEAR(scheduled_lr(LrSchedule::cosine, 0.1, 5, 10), 0.05, 1e-15);
  EXPECT_NEAR(scheduled_lr(LrSchedule::cosine, 0.1, 10, 10), 0.0, 1e-15);
}

// ---- model -------------------------------------------------------------------------

TEST(Model, Im2colLayout) {
  Tensor img({2, 3, 3});
  std::iota(img.storage().begin(), img.storage().end(), 1.0);
  const Tensor cols = im2col3x3(img);
  ASSERT_EQ(cols.shape(), (Shape{9, 18}));
  // centre position sees the full first channel in raster order
  for (std::size_t k = 0; k < 9; ++k) EXPECT_EQ(cols.at(4, k), static_cast<double>(k + 1));
  // top-left corner: padding above and to the left
  EXPECT_EQ(cols.at(0, 0), 0.0);
  EXPECT_EQ(cols.at(0, 4), 1.0);
  EXPECT_EQ(cols.at(0, 9 + 8), 14.0);
}

TEST(Model, InitIsSeedDeterministic) {
  const auto ds = tiny_dataset();
  const auto a = Model::init(tiny_config(), ds.image_shape(), 4);
  const auto b = Model::init(tiny_config(), ds.image_shape(), 4);
  const auto pa = a.parameters(), pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].var.value(), pb[i].var.value()) << pa[i].name;
}

TEST(Histogram, SingleLatentAndZeroEncodings) {
  ExperimentConfig cfg = tiny_config();
  cfg.num_latents = 1;
  const auto ds = tiny_dataset();
  const Model one = Model::init(cfg, ds.image_shape(), 4);
  const Tensor h1 = export_histogram(one, ds[0].image);
  ASSERT_EQ(h1.numel(), 1u);
  EXPECT_NEAR(h1[0], 1.0, 1e-15);

  cfg.num_latents = 5;
  Model zero = Model::init(cfg, ds.image_shape(), 4);
  zero.pool.latents.mutable_value().fill(0.0);
  zero.pool.proj_bias.mutable_value().fill(0.0);
  const Tensor h = export_histogram(zero, ds[3].image);
  for (double v : h.data()) EXPECT_NEAR(v, 0.2, 1e-15);

  Model trained = Model::init(cfg, ds.image_shape(), 4);
  const Tensor hr = export_histogram(trained, ds[2].image, Region{1, 1, 2, 3});
  EXPECT_NEAR(std::accumulate(hr.data().begin(), hr.data().end(), 0.0), 1.0, 1e-9);
  EXPECT_THROW((void)export_histogram(trained, ds[2].image, Region{7, 7, 2, 2}), std::invalid_argument);

  cfg.use_latent = false;
  EXPECT_THROW((void)export_histogram(Model::init(cfg, ds.image_shape(), 4), ds[0].image), std::invalid_argument);
}

// ---- training ------------------------------------------------------------------------

TEST(Training, ZeroEpochsKeepsInitialization) {
  ExperimentConfig cfg = tiny_config();
  cfg.stage1_epochs = 0;
  const auto ds = tiny_dataset();
  const TrainState st = train_stage1(cfg, ds);
  const Model ref = Model::init(cfg, ds.image_shape(), ds.num_classes());
  const auto a = st.model.parameters(), b = ref.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].var.value(), b[i].var.value());
  EXPECT_EQ(st.step, 0u);
}

TEST(Training, MetricsLogDeterministic) {
  const auto ds = tiny_dataset();
  const std::string a = run_log(tiny_config(), ds), b = run_log(tiny_config(), ds);
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, b);
  ExperimentConfig other = tiny_config();
  other.seed = 4;
  EXPECT_NE(a, run_log(other, ds));
}

TEST(Training, LoggedLossDominatesClassificationTerm) {
  const auto ds = tiny_dataset();
  TrainOptions opts;
  const ExperimentConfig cfg = tiny_config();
  std::size_t epochs = 0;
  opts.on_epoch = [&](const EpochRecord& r) {
    ++epochs;
    EXPECT_GE(r.loss, cfg.gamma * r.loss_cls - 1e-12);
    EXPECT_GE(r.loss_recon, 0.0);
    EXPECT_GE(r.loss_aug, 0.0);
    const auto j = nlohmann::json::parse(metrics_json_line(r));
    for (const char* key : {"train_many_top1", "train_medium_top1", "train_few_top1", "loss_recon"})
      EXPECT_TRUE(j.contains(key)) << key;
  };
  train_stage1(cfg, ds, opts);
  EXPECT_EQ(epochs, cfg.stage1_epochs);
}

TEST(Training, StageTwoTouchesOnlyTheClassifier) {
  const auto ds = tiny_dataset();
  const ExperimentConfig cfg = tiny_config();
  TrainState st = train_stage1(cfg, ds);
  const auto before = st.model.parameters();
  std::vector<std::vector<std::uint8_t>> bytes;
  for (const auto& p : before) bytes.push_back(encode_tensor(p.var.value()));
  train_stage2(st, cfg, ds);
  const auto after = st.model.parameters();
  bool classifier_changed = false;
  for (std::size_t i = 0; i < after.size(); ++i) {
    const bool same = encode_tensor(after[i].var.value()) == bytes[i];
    if (after[i].name.rfind("classifier.", 0) == 0) {
      classifier_changed |= !same;
    } else {
      EXPECT_TRUE(same) << after[i].name;
    }
  }
  EXPECT_TRUE(classifier_changed);
  EXPECT_EQ(st.stage, 2);
}

TEST(Training, StageTwoWithZeroEpochsIsIdentity) {
  const auto ds = tiny_dataset();
  ExperimentConfig cfg = tiny_config();
  TrainState st = train_stage1(cfg, ds);
  std::vector<Tensor> before;
  for (const auto& p : st.model.parameters()) before.push_back(p.var.value());
  cfg.stage2_epochs = 0;
  train_stage2(st, cfg, ds);
  const auto after = st.model.parameters();
  for (std::size_t i = 0; i < after.size(); ++i) EXPECT_EQ(after[i].var.value(), before[i]);
}

TEST(Training, DivergenceReportsStep) {
  const auto ds = tiny_dataset();
  ExperimentConfig cfg = tiny_config();
  cfg.learning_rate = 1e6;
  cfg.lr_schedule = LrSchedule::constant;
  cfg.stage1_epochs = 50;
  try {
    train_stage1(cfg, ds);
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_GT(e.step(), 0u);
    EXPECT_NE(std::string(e.what()).find("step " + std::to_string(e.step())), std::string::npos);
  }
}

TEST(Training, FeatureIsdaArmRuns) {
  const auto ds = tiny_dataset();
  ExperimentConfig cfg = tiny_config();
  cfg.use_latent = false;
  cfg.aug_target = AugTarget::class_features;
  const TrainState st = train_stage1(cfg, ds);
  std::size_t seen = 0;
  for (std::size_t c = 0; c < 4; ++c) seen += st.class_stats.count(c);
  EXPECT_EQ(seen, ds.size() * cfg.stage1_epochs);
  for (std::size_t m = 0; m < 3; ++m) EXPECT_EQ(st.latent_stats.count(m), 0u);
}

// ---- config -----------------------------------------------------------------------------

TEST(Config, JsonRoundTripAndUnknownKeys) {
  ExperimentConfig cfg = tiny_config();
  cfg.aug_target = AugTarget::class_features;
  cfg.covariance = CovarianceSetting::diagonal;
  const auto back = config_from_json(nlohmann::json::parse(config_to_json(cfg).dump()));
  EXPECT_EQ(config_to_json(back).dump(), config_to_json(cfg).dump());

  EXPECT_THROW((void)config_from_json({{"alpha", 0.1}, {"learning_rat", 0.1}}), std::invalid_argument);
  EXPECT_THROW((void)config_from_json({{"alpha", "high"}}), std::invalid_argument);
  EXPECT_THROW((void)config_from_json({{"alpha", -1.0}}), std::invalid_argument);
  EXPECT_THROW((void)config_from_json({{"num_latents", 0}}), std::invalid_argument);
  EXPECT_THROW((void)config_from_json({{"lr_schedule", "step"}}), std::invalid_argument);
  const auto partial = config_from_json({{"seed", 9}});
  EXPECT_EQ(partial.seed, 9u);
  EXPECT_EQ(partial.num_latents, 40u);
}

TEST(Config, FileErrors) {
  EXPECT_THROW((void)load_config("/nonexistent/c.json"), std::runtime_error);
  const auto dir = fresh_dir("config");
  {
    std::ofstream f(dir / "bad.json");
    f << "{not json";
  }
  EXPECT_THROW((void)load_config(dir / "bad.json"), std::invalid_argument);
  save_config(tiny_config(), dir / "ok.json");
  EXPECT_EQ(load_config(dir / "ok.json").batch_size, 8u);
  fs::remove_all(dir);
}

// ---- checkpoint ---------------------------------------------------------------------------

TEST(Checkpoint, RoundTripIncludingStats) {
  const auto ds = tiny_dataset();
  const ExperimentConfig cfg = tiny_config();
  const TrainState st = train_stage1(cfg, ds);
  const auto dir = fresh_dir("ckpt");
  save_checkpoint(st, cfg, dir);
  for (const char* f : {"manifest.json", "stats_n.lct", "stats_mu.lct", "stats_sigma.lct"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  const Checkpoint ck = load_checkpoint(dir);
  EXPECT_EQ(ck.state.step, st.step);
  EXPECT_EQ(ck.state.class_counts, st.class_counts);
  EXPECT_EQ(ck.state.latent_stats, st.latent_stats);
  EXPECT_EQ(config_to_json(ck.config).dump(), config_to_json(cfg).dump());
  const auto a = ck.state.model.parameters(), b = st.model.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].var.value(), b[i].var.value());
  EXPECT_EQ(predict(ck.state.model, ds), predict(st.model, ds));
  fs::remove_all(dir);
}

TEST(Checkpoint, MissingTensorsAreListed) {
  const auto ds = tiny_dataset();
  const ExperimentConfig cfg = tiny_config();
  const TrainState st = init_state(cfg, ds);
  const auto dir = fresh_dir("ckpt_missing");
  save_checkpoint(st, cfg, dir);
  fs::remove(dir / "pool.latents.lct");
  fs::remove(dir / "classifier.weight.lct");
  try {
    (void)load_checkpoint(dir);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.missing(), (std::vector<std::string>{"pool.latents", "classifier.weight"}));
    EXPECT_NE(std::string(e.what()).find("pool.latents"), std::string::npos);
  }
  EXPECT_THROW((void)load_checkpoint(dir / "nope"), CheckpointError);
  fs::remove_all(dir);
}

// ---- ablation ------------------------------------------------------------------------------

TEST(Ablation, SingleArmAndBaselineDefinition) {
  const auto ds = tiny_dataset();
  const ExperimentConfig cfg = tiny_config();
  const auto arms = select_arms(cfg, {"baseline"});
  ASSERT_EQ(arms.size(), 1u);
  EXPECT_FALSE(arms[0].cfg.use_latent);
  EXPECT_FALSE(arms[0].cfg.use_aug_loss);
  EXPECT_FALSE(arms[0].cfg.use_recon_loss);
  const auto rows = run_ablation(arms, ds, ds, {3});
  ASSERT_EQ(rows.size(), 1u);

  ExperimentConfig manual = cfg;
  manual.use_latent = manual.use_aug_loss = manual.use_recon_loss = false;
  TrainState st = train_stage1(manual, ds);
  train_stage2(st, manual, ds);
  const auto direct = evaluate(st.model, ds, split_classes(ds.class_counts()));
  EXPECT_EQ(rows[0].report.overall_top1, direct.overall_top1);

  const std::string csv = ablation_csv(rows);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
  EXPECT_EQ(csv.rfind("arm,seed,overall_top1", 0), 0u);
  EXPECT_THROW((void)select_arms(cfg, {"nonsense"}), std::invalid_argument);
  EXPECT_EQ(standard_arms(cfg).size(), 6u);
}
