#include "lcreg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include <nlohmann/json.hpp>

namespace lcreg {

bool recon_enabled(const ExperimentConfig& cfg) { return cfg.use_latent && cfg.use_recon_loss; }

bool aug_enabled(const ExperimentConfig& cfg) {
  if (!cfg.use_aug_loss) return false;
  return cfg.aug_target == AugTarget::class_features || cfg.use_latent;
}

Var combined_loss(const LossTerms& terms, const ExperimentConfig& cfg) {
  if (!terms.cls.defined()) throw std::invalid_argument("combined_loss: classification term is required");
  Var total = scale(terms.cls, cfg.gamma);
  if (recon_enabled(cfg) && terms.recon.defined()) total = add(total, scale(terms.recon, cfg.beta));
  if (aug_enabled(cfg) && terms.aug.defined()) total = add(total, scale(terms.aug, cfg.alpha));
  return total;
}

MetricsReport evaluate_predictions(std::span<const std::size_t> labels,
                                   std::span<const std::size_t> predictions, std::size_t num_classes,
                                   const ClassSplits& splits) {
  if (labels.size() != predictions.size()) {
    throw std::invalid_argument("evaluate: labels and predictions differ in length");
  }
  std::vector<std::size_t> total(num_classes, 0), correct(num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) throw std::out_of_range("evaluate: label out of range");
    ++total[labels[i]];
    if (predictions[i] == labels[i]) ++correct[labels[i]];
  }
  MetricsReport r;
  r.per_class_count = total;
  r.per_class_top1.resize(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (total[c] > 0) r.per_class_top1[c] = 100.0 * static_cast<double>(correct[c]) / static_cast<double>(total[c]);
  }
  auto pooled = [&](const std::vector<std::size_t>& classes) -> std::optional<double> {
    std::size_t n = 0, k = 0;
    for (auto c : classes) {
      if (c >= num_classes) continue;
      n += total[c];
      k += correct[c];
    }
    if (n == 0) return std::nullopt;
    return 100.0 * static_cast<double>(k) / static_cast<double>(n);
  };
  const std::size_t n_all = std::accumulate(total.begin(), total.end(), std::size_t{0});
  const std::size_t k_all = std::accumulate(correct.begin(), correct.end(), std::size_t{0});
  r.overall_top1 = n_all ? 100.0 * static_cast<double>(k_all) / static_cast<double>(n_all) : 0.0;
  r.many_top1 = pooled(splits.many);
  r.medium_top1 = pooled(splits.medium);
  r.few_top1 = pooled(splits.few);
  return r;
}

namespace {

std::size_t argmax_row(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

std::vector<Tensor> patch_cache(const LongTailDataset& ds) {
  std::vector<Tensor> cache;
  cache.reserve(ds.size());
  for (const auto& s : ds.samples()) cache.push_back(im2col3x3(s.image));
  return cache;
}

Var stack_patches(const std::vector<Tensor>& cache, std::span<const std::size_t> idx) {
  const std::size_t rows = cache.front().rows(), cols = cache.front().cols();
  Tensor out({idx.size() * rows, cols});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& src = cache[idx[i]].storage();
    std::copy(src.begin(), src.end(), out.data().begin() + i * rows * cols);
  }
  return Var::constant(std::move(out));
}

// Pooled classifier inputs for every sample, computed with frozen weights.
Tensor pooled_features(const Model& model, const std::vector<Tensor>& cache) {
  constexpr std::size_t kChunk = 128;
  const std::size_t d = model.feature_dim();
  Tensor out({cache.size(), d});
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < cache.size(); start += kChunk) {
    const std::size_t end = std::min(cache.size(), start + kChunk);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const ForwardPass fp = forward(model, stack_patches(cache, idx), idx.size());
    std::copy(fp.out.pooled.value().data().begin(), fp.out.pooled.value().data().end(),
              out.data().begin() + start * d);
  }
  return out;
}

void check_finite(double v, std::size_t step, const char* what) {
  if (!std::isfinite(v)) throw TrainingDiverged(step, std::string("non-finite ") + what);
}

// Non-finite activations surface as invalid_argument from the ops.
template <class F>
auto diverge_guard(std::size_t step, F&& f) {
  try {
    return f();
  } catch (const std::invalid_argument& e) {
    throw TrainingDiverged(step, e.what());
  }
}

void check_finite_params(const Model& model, std::size_t step) {
  for (const auto& p : model.parameters())
    for (double v : p.var.value().data())
      if (!std::isfinite(v)) throw TrainingDiverged(step, "non-finite parameter " + p.name);
}

void update_class_stats(RunningStats& stats, const Tensor& pooled, std::span<const std::size_t> labels) {
  const std::size_t d = pooled.cols();
  std::vector<std::vector<std::size_t>> rows_by_class(stats.categories());
  for (std::size_t i = 0; i < labels.size(); ++i) rows_by_class[labels[i]].push_back(i);
  for (std::size_t c = 0; c < rows_by_class.size(); ++c) {
    const auto& rows = rows_by_class[c];
    if (rows.empty()) continue;
    const double n = static_cast<double>(rows.size());
    std::vector<double> mu(d, 0.0);
    for (auto r : rows)
      for (std::size_t j = 0; j < d; ++j) mu[j] += pooled.at(r, j) / n;
    Tensor cov({d, d});
    for (auto r : rows)
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
          cov.at(i, j) += (pooled.at(r, i) - mu[i]) * (pooled.at(r, j) - mu[j]) / n;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i + 1; j < d; ++j) cov.at(j, i) = cov.at(i, j);
    stats.update(c, mu, cov, rows.size());
  }
}

CovarianceMode resolve_mode(CovarianceSetting s, std::size_t dim) {
  switch (s) {
    case CovarianceSetting::full: return CovarianceMode::full;
    case CovarianceSetting::diagonal: return CovarianceMode::diagonal;
    default: return default_covariance_mode(dim);
  }
}

}  // namespace

std::vector<std::size_t> predict(const Model& model, const LongTailDataset& ds) {
  constexpr std::size_t kChunk = 128;
  std::vector<std::size_t> preds;
  preds.reserve(ds.size());
  std::vector<Tensor> images;
  for (std::size_t start = 0; start < ds.size(); start += kChunk) {
    const std::size_t end = std::min(ds.size(), start + kChunk);
    images.clear();
    for (std::size_t i = start; i < end; ++i) images.push_back(ds[i].image);
    const ForwardPass fp = forward_images(model, images);
    const Tensor& logits = fp.out.logits.value();
    for (std::size_t i = 0; i < logits.rows(); ++i) preds.push_back(argmax_row(logits.row(i)));
  }
  return preds;
}

MetricsReport evaluate(const Model& model, const LongTailDataset& ds, const ClassSplits& splits) {
  std::vector<std::size_t> labels;
  labels.reserve(ds.size());
  for (const auto& s : ds.samples()) labels.push_back(s.label);
  const auto preds = predict(model, ds);
  return evaluate_predictions(labels, preds, model.num_classes, splits);
}

Sgd::Sgd(std::vector<Var> params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
  for (const auto& p : params_) velocity_.push_back(Tensor::zeros(p.shape()));
}

void Sgd::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Sgd::step(double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var& p = params_[i];
    const Tensor g = p.grad();
    Tensor& w = p.mutable_value();
    Tensor& v = velocity_[i];
    for (std::size_t k = 0; k < w.numel(); ++k) {
      v[k] = momentum_ * v[k] + g[k] + weight_decay_ * w[k];
      w[k] -= lr * v[k];
    }
  }
}

double scheduled_lr(LrSchedule schedule, double base, std::size_t step, std::size_t total) {
  if (schedule == LrSchedule::constant || total == 0) return base;
  const double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(total));
  return 0.5 * base * (1.0 + std::cos(std::numbers::pi * t));
}

TrainState init_state(const ExperimentConfig& cfg, const LongTailDataset& ds) {
  if (ds.size() == 0) throw std::invalid_argument("training requires a non-empty dataset");
  TrainState st;
  st.model = Model::init(cfg, ds.image_shape(), ds.num_classes());
  const CovarianceMode mode = resolve_mode(cfg.covariance, cfg.feature_dim);
  st.latent_stats = RunningStats(cfg.num_latents, cfg.feature_dim, mode);
  st.class_stats = RunningStats(ds.num_classes(), cfg.feature_dim, mode);
  st.class_counts = ds.class_counts();
  return st;
}

TrainState train_stage1(const ExperimentConfig& cfg, const LongTailDataset& ds, const TrainOptions& opts) {
  TrainState st = init_state(cfg, ds);
  st.stage = 1;
  Model& model = st.model;
  const ClassSplits splits = split_classes(st.class_counts);
  const auto cache = patch_cache(ds);

  std::vector<Var> trainable;
  for (const auto& p : model.encoder.parameters()) trainable.push_back(p.var);
  if (cfg.use_latent)
    for (const auto& p : model.pool.parameters()) trainable.push_back(p.var);
  for (const auto& p : model.decoder.parameters()) trainable.push_back(p.var);
  Sgd opt(trainable, cfg.momentum, cfg.weight_decay);

  const std::size_t n = ds.size(), b = cfg.batch_size;
  const std::size_t steps_per_epoch = (n + b - 1) / b;
  const std::size_t total_steps = std::max<std::size_t>(1, cfg.stage1_epochs * steps_per_epoch);
  const AugSchedule schedule{cfg.lambda0, total_steps};
  Rng rng = Rng(cfg.seed).derive(2);

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<std::size_t> labels, epoch_labels, epoch_preds;

  for (std::size_t epoch = 1; epoch <= cfg.stage1_epochs; ++epoch) {
    rng.shuffle(perm.begin(), perm.end());
    EpochRecord rec;
    rec.stage = 1;
    rec.epoch = epoch;
    epoch_labels.clear();
    epoch_preds.clear();
    for (std::size_t start = 0; start < n; start += b) {
      const std::span<const std::size_t> idx(perm.data() + start, std::min(b, n - start));
      labels.clear();
      for (auto i : idx) labels.push_back(ds[i].label);

      const double lambda = lambda_at(schedule, st.step).lambda;
      const double lr = scheduled_lr(cfg.lr_schedule, cfg.learning_rate, st.step, total_steps);
      LossTerms terms;
      Var loss;
      ForwardPass fp;
      try {
        fp = forward(model, stack_patches(cache, idx), idx.size());
        terms.cls = cross_entropy_rows(fp.out.logits, labels);
        if (recon_enabled(cfg)) terms.recon = recon_loss(fp.reconstructed, fp.features, model.positions());
        if (aug_enabled(cfg)) {
          terms.aug = cfg.aug_target == AugTarget::latent
                          ? latent_aug_loss(model.pool, st.latent_stats, lambda)
                          : feature_isda_loss(fp.out.pooled, labels, model.decoder.cls_weight,
                                              model.decoder.cls_bias, st.class_stats, lambda);
        }
        loss = combined_loss(terms, cfg);
      } catch (const std::invalid_argument& e) {
        throw TrainingDiverged(st.step, e.what());
      }
      check_finite(loss.item(), st.step, "loss");

      const Tensor& logits = fp.out.logits.value();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        epoch_labels.push_back(labels[i]);
        epoch_preds.push_back(argmax_row(logits.row(i)));
      }
      const double w = static_cast<double>(idx.size()) / static_cast<double>(n);
      rec.loss += w * loss.item();
      rec.loss_cls += w * terms.cls.item();
      if (terms.recon.defined()) rec.loss_recon += w * terms.recon.item();
      if (terms.aug.defined()) rec.loss_aug += w * terms.aug.item();
      rec.lambda = lambda;
      rec.lr = lr;

      opt.zero_grad();
      backward(loss);
      opt.step(lr);
      ++st.step;
      check_finite_params(model, st.step);

      if (cfg.use_latent) observe_iteration(st.latent_stats, model.pool, idx.size());
      if (aug_enabled(cfg) && cfg.aug_target == AugTarget::class_features) {
        update_class_stats(st.class_stats, fp.out.pooled.value(), labels);
      }
    }
    rec.step = st.step;
    rec.train = evaluate_predictions(epoch_labels, epoch_preds, ds.num_classes(), splits);
    if (opts.eval_set) rec.eval = diverge_guard(st.step, [&] { return evaluate(model, *opts.eval_set, splits); });
    if (opts.on_epoch) opts.on_epoch(rec);
  }
  return st;
}

void train_stage2(TrainState& st, const ExperimentConfig& cfg, const LongTailDataset& ds,
                  const TrainOptions& opts) {
  Model& model = st.model;
  if (ds.num_classes() != model.num_classes) {
    throw std::invalid_argument("train_stage2: dataset class count does not match the model");
  }
  st.stage = 2;
  if (cfg.stage2_epochs == 0) return;
  const ClassSplits splits = split_classes(st.class_counts);
  const auto cache = patch_cache(ds);
  const Tensor pooled = diverge_guard(st.step, [&] { return pooled_features(model, cache); });
  const std::size_t d = pooled.cols();

  Sgd opt({model.decoder.cls_weight, model.decoder.cls_bias}, cfg.momentum, cfg.weight_decay);
  ClassBalancedSampler sampler(ds, Rng(cfg.seed).derive(3));

  const std::size_t n = ds.size(), b = cfg.batch_size;
  const std::size_t steps_per_epoch = (n + b - 1) / b;
  const std::size_t total_steps = cfg.stage2_epochs * steps_per_epoch;
  std::size_t step = 0;

  std::vector<std::size_t> all_labels(n);
  for (std::size_t i = 0; i < n; ++i) all_labels[i] = ds[i].label;
  std::vector<std::size_t> labels;

  for (std::size_t epoch = 1; epoch <= cfg.stage2_epochs; ++epoch) {
    EpochRecord rec;
    rec.stage = 2;
    rec.epoch = epoch;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      Tensor batch({b, d});
      labels.resize(b);
      for (std::size_t i = 0; i < b; ++i) {
        const std::size_t k = sampler.next();
        labels[i] = all_labels[k];
        std::copy_n(pooled.data().begin() + k * d, d, batch.data().begin() + i * d);
      }
      const double lr = scheduled_lr(cfg.lr_schedule, cfg.stage2_learning_rate, step, total_steps);
      Var loss;
      try {
        loss = cross_entropy_rows(classify_pooled(Var::constant(std::move(batch)), model.decoder), labels);
      } catch (const std::invalid_argument& e) {
        throw TrainingDiverged(st.step, e.what());
      }
      check_finite(loss.item(), st.step, "loss");
      rec.loss += loss.item() / static_cast<double>(steps_per_epoch);
      rec.lr = lr;
      opt.zero_grad();
      backward(loss);
      opt.step(lr);
      ++step;
      ++st.step;
      check_finite_params(model, st.step);
    }
    rec.loss_cls = rec.loss;
    rec.step = step;
    const Tensor logits = classify_pooled(Var::constant(pooled), model.decoder).value();
    std::vector<std::size_t> preds(n);
    for (std::size_t i = 0; i < n; ++i) preds[i] = argmax_row(logits.row(i));
    rec.train = evaluate_predictions(all_labels, preds, ds.num_classes(), splits);
    if (opts.eval_set) rec.eval = diverge_guard(st.step, [&] { return evaluate(model, *opts.eval_set, splits); });
    if (opts.on_epoch) opts.on_epoch(rec);
  }
}

namespace {

nlohmann::ordered_json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

void put_report(nlohmann::ordered_json& j, const std::string& prefix, const MetricsReport& r) {
  j[prefix + "overall_top1"] = r.overall_top1;
  j[prefix + "many_top1"] = optional_json(r.many_top1);
  j[prefix + "medium_top1"] = optional_json(r.medium_top1);
  j[prefix + "few_top1"] = optional_json(r.few_top1);
}

std::string fmt_opt(const std::optional<double>& v) {
  if (!v) return "";
  return nlohmann::json(*v).dump();
}

}  // namespace

std::string metrics_json_line(const EpochRecord& rec) {
  nlohmann::ordered_json j;
  j["stage"] = rec.stage;
  j["epoch"] = rec.epoch;
  j["step"] = rec.step;
  j["loss"] = rec.loss;
  j["loss_cls"] = rec.loss_cls;
  j["loss_recon"] = rec.loss_recon;
  j["loss_aug"] = rec.loss_aug;
  j["lambda"] = rec.lambda;
  j["lr"] = rec.lr;
  put_report(j, "train_", rec.train);
  if (rec.eval) put_report(j, "eval_", *rec.eval);
  return j.dump();
}

std::string report_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  put_report(j, "", r);
  auto per_class = nlohmann::ordered_json::array();
  for (const auto& v : r.per_class_top1) per_class.push_back(optional_json(v));
  j["per_class_top1"] = per_class;
  j["per_class_count"] = r.per_class_count;
  return j.dump();
}

std::string summary_csv_header() { return "run,overall_top1,many_top1,medium_top1,few_top1"; }

std::string summary_csv_row(const std::string& run, const MetricsReport& r) {
  return run + "," + nlohmann::json(r.overall_top1).dump() + "," + fmt_opt(r.many_top1) + "," +
         fmt_opt(r.medium_top1) + "," + fmt_opt(r.few_top1);
}

void write_histogram_csv(const std::filesystem::path& path, const Tensor& weights) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "category,weight\n";
  for (std::size_t m = 0; m < weights.numel(); ++m) f << m << ',' << nlohmann::json(weights[m]).dump() << '\n';
}

}  // namespace lcreg
