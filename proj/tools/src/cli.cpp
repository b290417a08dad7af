#include "cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>

#include <CLI11.hpp>

#include "lcreg/ablation.hpp"
#include "lcreg/checkpoint.hpp"
#include "lcreg/config.hpp"
#include "lcreg/diagnostics.hpp"
#include "lcreg/longtail.hpp"
#include "lcreg/trainer.hpp"

namespace lcreg::cli {

namespace fs = std::filesystem;

namespace {

// Raised for bad user input discovered after parsing (exit 1).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_config(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Experiment config JSON (unknown keys are rejected)");
}
void add_seed(CLI::App* cmd, Common& c) { cmd->add_option("--seed", c.seed, "Seed override (u64)"); }
void add_out(CLI::App* cmd, Common& c, bool required) {
  auto* o = cmd->add_option("--out", c.out, "Output directory");
  if (required) o->required();
}

ExperimentConfig resolve_config(const Common& c) {
  ExperimentConfig cfg;
  if (!c.config.empty()) {
    if (!fs::is_regular_file(c.config)) throw UsageError("config file not found: " + c.config);
    try {
      cfg = load_config(c.config);
    } catch (const std::invalid_argument& e) {
      throw UsageError(c.config + ": " + e.what());
    }
  }
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

fs::path require_dir(const std::string& path, const char* what) {
  if (!fs::is_directory(path)) throw UsageError(std::string(what) + " directory not found: " + path);
  return path;
}

void write_text(const fs::path& path, const std::string& text, std::ios::openmode mode = std::ios::trunc) {
  std::ofstream f(path, std::ios::out | mode);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

void append_summary(const fs::path& path, const std::string& run, const MetricsReport& r) {
  const bool fresh = !fs::exists(path);
  write_text(path, (fresh ? summary_csv_header() + "\n" : "") + summary_csv_row(run, r) + "\n", std::ios::app);
}

std::string image_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu", index);
  return buf;
}

// ---- subcommands -------------------------------------------------------------

struct GenerateArgs {
  Common common;
  std::size_t classes = 10;
  double imbalance = 100.0;
  std::size_t n_max = 500;
  double noise = 0.5;
  std::size_t test_per_class = 50;
};

int cmd_generate(const GenerateArgs& a, std::ostream& out) {
  const LongTailSpec spec{a.classes, a.n_max, a.imbalance, a.common.seed.value_or(0)};
  const SyntheticBenchmark bench = make_synthetic_benchmark(spec, a.noise, a.test_per_class);
  const fs::path root = a.common.out;
  save_dataset(bench.train, root / "train");
  if (a.test_per_class > 0) save_dataset(bench.test, root / "test");
  out << "wrote " << bench.train.size() << " training samples to " << (root / "train").string();
  if (a.test_per_class > 0) out << " and " << bench.test.size() << " test samples to " << (root / "test").string();
  out << '\n';
  return kExitOk;
}

struct TrainArgs {
  Common common;
  std::string data;
  std::string eval_data;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  const ExperimentConfig cfg = resolve_config(a.common);
  const LongTailDataset train = load_dataset(require_dir(a.data, "data"));
  std::optional<LongTailDataset> eval;
  if (!a.eval_data.empty()) eval = load_dataset(require_dir(a.eval_data, "eval data"));

  const fs::path dir = a.common.out;
  fs::create_directories(dir);
  save_config(cfg, dir / "config.json");
  std::ofstream metrics(dir / "metrics.jsonl", std::ios::trunc);
  if (!metrics) throw std::runtime_error("cannot write " + (dir / "metrics.jsonl").string());

  TrainOptions opts;
  opts.eval_set = eval ? &*eval : nullptr;
  opts.on_epoch = [&](const EpochRecord& r) {
    metrics << metrics_json_line(r) << '\n';
    metrics.flush();
    out << "stage " << r.stage << " epoch " << r.epoch << " loss " << r.loss << '\n';
  };
  TrainState st = train_stage1(cfg, train, opts);
  train_stage2(st, cfg, train, opts);
  save_checkpoint(st, cfg, dir / "checkpoint");
  if (eval) {
    const MetricsReport r = evaluate(st.model, *eval, split_classes(st.class_counts));
    write_text(dir / "summary.csv", summary_csv_header() + "\n" + summary_csv_row("train", r) + "\n");
    out << report_json(r) << '\n';
  }
  return kExitOk;
}

struct EvalArgs {
  Common common;
  std::string checkpoint;
  std::string data;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(require_dir(a.checkpoint, "checkpoint"));
  const LongTailDataset ds = load_dataset(require_dir(a.data, "data"));
  const MetricsReport r = evaluate(ck.state.model, ds, split_classes(ck.state.class_counts));
  const std::string json = report_json(r);
  out << json << '\n';
  if (!a.common.out.empty()) {
    const fs::path dir = a.common.out;
    fs::create_directories(dir);
    write_text(dir / "metrics.jsonl", json + "\n", std::ios::app);
    append_summary(dir / "summary.csv", fs::path(a.checkpoint).filename().string(), r);
  }
  return kExitOk;
}

struct GradArgs {
  Common common;
  std::size_t configs = 10;
  double tolerance = 1e-4;
};

int cmd_gradcheck(const GradArgs& a, std::ostream& out) {
  const GradSuiteResult res = run_gradient_suite(a.common.seed.value_or(0), a.configs);
  for (const auto& e : res.entries) {
    out << e.loss << " config " << e.config << " max_rel_error " << e.report.max_rel_error << " ("
        << e.report.worst_param << ")\n";
  }
  const double worst = res.max_rel_error();
  out << "max relative error: " << worst << '\n';
  if (!a.common.out.empty()) {
    fs::create_directories(a.common.out);
    write_text(fs::path(a.common.out) / "gradcheck.txt", std::to_string(worst) + "\n");
  }
  return worst <= a.tolerance ? kExitOk : kExitRuntime;
}

struct AblateArgs {
  Common common;
  std::string data;
  std::string eval_data;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::vector<std::string> arms;
};

int cmd_ablate(const AblateArgs& a, std::ostream& out) {
  const ExperimentConfig cfg = resolve_config(a.common);
  const LongTailDataset train = load_dataset(require_dir(a.data, "data"));
  const LongTailDataset test = load_dataset(require_dir(a.eval_data, "eval data"));
  std::vector<AblationArm> arms;
  try {
    arms = a.arms.empty() ? standard_arms(cfg) : select_arms(cfg, a.arms);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const std::string csv = ablation_csv(run_ablation(arms, train, test, a.seeds));
  out << csv;
  fs::create_directories(a.common.out);
  write_text(fs::path(a.common.out) / "ablation.csv", csv);
  return kExitOk;
}

struct HistogramArgs {
  Common common;
  std::string checkpoint;
  std::string data;
  std::vector<std::size_t> indices = {0};
  std::vector<std::size_t> region;
};

int cmd_histogram(const HistogramArgs& a, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(require_dir(a.checkpoint, "checkpoint"));
  const LongTailDataset ds = load_dataset(require_dir(a.data, "data"));
  std::optional<Region> region;
  if (!a.region.empty()) {
    if (a.region.size() != 4) throw UsageError("--region expects row,col,height,width");
    region = Region{a.region[0], a.region[1], a.region[2], a.region[3]};
  }
  const fs::path dir = a.common.out;
  fs::create_directories(dir);
  for (const auto i : a.indices) {
    if (i >= ds.size()) throw UsageError("--index " + std::to_string(i) + " out of range");
    const Tensor w = export_histogram(ck.state.model, ds[i].image, region);
    const fs::path file = dir / ("histogram_" + image_name(i) + ".csv");
    write_histogram_csv(file, w);
    out << "wrote " << file.string() << '\n';
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Latent-category regularization for long-tailed classification"};
  app.name("lcreg");
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate-data", "Write a synthetic long-tailed train set and a balanced test set");
  add_seed(g, gen.common);
  add_out(g, gen.common, true);
  g->add_option("--classes", gen.classes, "Number of classes")->check(CLI::PositiveNumber);
  g->add_option("--if", gen.imbalance, "Imbalance factor n_max / n_min")->check(CLI::Range(1.0, 1e9));
  g->add_option("--nmax", gen.n_max, "Samples in the largest class")->check(CLI::PositiveNumber);
  g->add_option("--noise", gen.noise, "Pixel noise sigma")->check(CLI::NonNegativeNumber);
  g->add_option("--test-per-class", gen.test_per_class, "Balanced test samples per class (0 skips)");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Stage-1 and stage-2 training; writes metrics.jsonl and a checkpoint");
  add_config(t, tr.common);
  add_seed(t, tr.common);
  add_out(t, tr.common, true);
  t->add_option("--data", tr.data, "Training dataset directory")->required();
  t->add_option("--eval-data", tr.eval_data, "Evaluated after every epoch and at the end");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  add_out(e, ev.common, false);
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint directory")->required();
  e->add_option("--data", ev.data, "Dataset directory")->required();

  GradArgs gr;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of all objectives");
  add_seed(gc, gr.common);
  add_out(gc, gr.common, false);
  gc->add_option("--configs", gr.configs, "Random configurations per objective")->check(CLI::PositiveNumber);
  gc->add_option("--tol", gr.tolerance, "Maximum accepted relative error");

  AblateArgs ab;
  auto* a = app.add_subcommand("ablate", "Train and evaluate every ablation arm over several seeds");
  add_config(a, ab.common);
  add_out(a, ab.common, true);
  a->add_option("--data", ab.data, "Training dataset directory")->required();
  a->add_option("--eval-data", ab.eval_data, "Test dataset directory")->required();
  a->add_option("--seeds", ab.seeds, "Seeds shared by every arm")->delimiter(',');
  a->add_option("--arms", ab.arms,
                "Subset of baseline,latent,latent_aug,latent_recon,full,feature_isda")
      ->delimiter(',');

  HistogramArgs hi;
  auto* h = app.add_subcommand("histogram", "Export latent-category weight histograms");
  add_out(h, hi.common, true);
  h->add_option("--checkpoint", hi.checkpoint, "Checkpoint directory")->required();
  h->add_option("--data", hi.data, "Dataset directory")->required();
  h->add_option("--index", hi.indices, "Sample indices")->delimiter(',');
  h->add_option("--region", hi.region, "Feature-grid window row,col,height,width")->delimiter(',');

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& pe) {
    const int code = app.exit(pe, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (g->parsed()) return cmd_generate(gen, out);
    if (t->parsed()) return cmd_train(tr, out);
    if (e->parsed()) return cmd_eval(ev, out);
    if (gc->parsed()) return cmd_gradcheck(gr, out);
    if (a->parsed()) return cmd_ablate(ab, out);
    if (h->parsed()) return cmd_histogram(hi, out);
  } catch (const UsageError& ue) {
    err << "error: " << ue.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace lcreg::cli
