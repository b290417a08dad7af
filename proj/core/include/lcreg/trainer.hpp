#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lcreg/config.hpp"
#include "lcreg/latent_isda.hpp"
#include "lcreg/longtail.hpp"
#include "lcreg/model.hpp"

namespace lcreg {

// --- losses -----------------------------------------------------------------

/// Undefined members are treated as disabled.
struct LossTerms {
  Var cls;
  Var recon;
  Var aug;
};

bool recon_enabled(const ExperimentConfig& cfg);
bool aug_enabled(const ExperimentConfig& cfg);

/// alpha * aug + beta * recon + gamma * cls; terms switched off by the
/// ablation flags contribute exactly zero.
Var combined_loss(const LossTerms& terms, const ExperimentConfig& cfg);

// --- evaluation -------------------------------------------------------------

struct MetricsReport {
  double overall_top1 = 0.0;
  std::optional<double> many_top1;  // empty when the split has no samples
  std::optional<double> medium_top1;
  std::optional<double> few_top1;
  std::vector<std::optional<double>> per_class_top1;
  std::vector<std::size_t> per_class_count;
};

/// Accuracy from predictions. Split accuracies are pooled over the samples
/// of the split's classes.
MetricsReport evaluate_predictions(std::span<const std::size_t> labels,
                                   std::span<const std::size_t> predictions, std::size_t num_classes,
                                   const ClassSplits& splits);

std::vector<std::size_t> predict(const Model& model, const LongTailDataset& ds);
MetricsReport evaluate(const Model& model, const LongTailDataset& ds, const ClassSplits& splits);

// --- training ---------------------------------------------------------------

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t step, const std::string& what)
      : std::runtime_error("training diverged at step " + std::to_string(step) + ": " + what),
        step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

/// SGD with momentum and L2 weight decay:
/// g += wd * w; v = mu * v + g; w -= lr * v.
class Sgd {
 public:
  Sgd(std::vector<Var> params, double momentum, double weight_decay);
  void zero_grad();
  void step(double lr);

 private:
  std::vector<Var> params_;
  std::vector<Tensor> velocity_;
  double momentum_;
  double weight_decay_;
};

double scheduled_lr(LrSchedule schedule, double base, std::size_t step, std::size_t total);

struct TrainState {
  Model model;
  RunningStats latent_stats;  // M categories
  RunningStats class_stats;   // C categories, used by the class-feature augmentation arm
  std::vector<std::size_t> class_counts;
  std::size_t step = 0;
  int stage = 0;
};

TrainState init_state(const ExperimentConfig& cfg, const LongTailDataset& ds);

struct EpochRecord {
  int stage = 1;
  std::size_t epoch = 0;  // 1-based
  std::size_t step = 0;   // optimizer steps taken so far in this stage
  double loss = 0.0;      // epoch means of the logged components
  double loss_cls = 0.0;
  double loss_recon = 0.0;
  double loss_aug = 0.0;
  double lambda = 0.0;
  double lr = 0.0;
  MetricsReport train;
  std::optional<MetricsReport> eval;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

struct TrainOptions {
  EpochCallback on_epoch;
  const LongTailDataset* eval_set = nullptr;
};

/// Instance-uniform SGD over the long-tailed set with all enabled losses.
/// Stage 1 of the decoupled scheme.
TrainState train_stage1(const ExperimentConfig& cfg, const LongTailDataset& ds,
                        const TrainOptions& opts = {});

/// Continues from `state`: only the final linear classifier is updated,
/// under class-balanced resampling, for cfg.stage2_epochs.
void train_stage2(TrainState& state, const ExperimentConfig& cfg, const LongTailDataset& ds,
                  const TrainOptions& opts = {});

// --- metrics files ----------------------------------------------------------

/// One JSON object per line, fixed key order, shortest round-trip doubles.
std::string metrics_json_line(const EpochRecord& rec);
std::string report_json(const MetricsReport& r);

std::string summary_csv_header();
std::string summary_csv_row(const std::string& run, const MetricsReport& r);

void write_histogram_csv(const std::filesystem::path& path, const Tensor& weights);

}  // namespace lcreg
