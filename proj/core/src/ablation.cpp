#include "lcreg/ablation.hpp"

#include <sstream>
#include <stdexcept>

namespace lcreg {

std::vector<AblationArm> standard_arms(const ExperimentConfig& base) {
  auto arm = [&](std::string name, bool latent, bool aug, bool recon, AugTarget target) {
    ExperimentConfig cfg = base;
    cfg.use_latent = latent;
    cfg.use_aug_loss = aug;
    cfg.use_recon_loss = recon;
    cfg.aug_target = target;
    return AblationArm{std::move(name), cfg};
  };
  return {
      arm("baseline", false, false, false, AugTarget::latent),
      arm("latent", true, false, false, AugTarget::latent),
      arm("latent_aug", true, true, false, AugTarget::latent),
      arm("latent_recon", true, false, true, AugTarget::latent),
      arm("full", true, true, true, AugTarget::latent),
      arm("feature_isda", false, true, false, AugTarget::class_features),
  };
}

std::vector<AblationArm> select_arms(const ExperimentConfig& base, const std::vector<std::string>& names) {
  const auto all = standard_arms(base);
  std::vector<AblationArm> out;
  for (const auto& n : names) {
    bool found = false;
    for (const auto& a : all) {
      if (a.name == n) {
        out.push_back(a);
        found = true;
      }
    }
    if (!found) throw std::invalid_argument("unknown ablation arm '" + n + "'");
  }
  return out;
}

std::vector<AblationRow> run_ablation(const std::vector<AblationArm>& arms, const LongTailDataset& train,
                                      const LongTailDataset& test, const std::vector<std::uint64_t>& seeds) {
  const ClassSplits splits = split_classes(train.class_counts());
  std::vector<AblationRow> rows;
  for (const auto seed : seeds) {
    for (const auto& a : arms) {
      ExperimentConfig cfg = a.cfg;
      cfg.seed = seed;
      TrainState st = train_stage1(cfg, train);
      train_stage2(st, cfg, train);
      rows.push_back({a.name, seed, evaluate(st.model, test, splits)});
    }
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "arm,seed," << summary_csv_header().substr(4) << '\n';
  for (const auto& r : rows) os << summary_csv_row(r.arm + "," + std::to_string(r.seed), r.report) << '\n';
  return os.str();
}

}  // namespace lcreg
