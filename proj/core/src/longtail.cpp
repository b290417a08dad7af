#include "lcreg/longtail.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lcreg/serialize.hpp"

namespace lcreg {

namespace fs = std::filesystem;

std::vector<std::size_t> class_counts(const LongTailSpec& spec) {
  if (spec.num_classes < 1) throw std::invalid_argument("class_counts: num_classes must be >= 1");
  if (spec.n_max < 1) throw std::invalid_argument("class_counts: n_max must be >= 1");
  if (!(spec.imbalance_factor >= 1.0)) {
    throw std::invalid_argument("class_counts: imbalance factor must be >= 1");
  }
  const std::size_t c_count = spec.num_classes;
  std::vector<std::size_t> counts(c_count, spec.n_max);
  if (c_count == 1) return counts;
  const double denom = static_cast<double>(c_count - 1);
  for (std::size_t c = 0; c < c_count; ++c) {
    const double n = static_cast<double>(spec.n_max) *
                     std::pow(spec.imbalance_factor, -static_cast<double>(c) / denom);
    counts[c] = static_cast<std::size_t>(std::llround(n));
  }
  return counts;
}

LongTailDataset::LongTailDataset(LongTailSpec spec, std::vector<Sample> samples)
    : spec_(spec), samples_(std::move(samples)), counts_(spec_.num_classes, 0) {
  for (const auto& s : samples_) {
    if (s.label >= spec_.num_classes) {
      throw DatasetError(DatasetErrc::label_out_of_range,
                         "label out of range: " + std::to_string(s.label) + " >= " +
                             std::to_string(spec_.num_classes));
    }
    ++counts_[s.label];
  }
  if (!samples_.empty()) {
    const Shape& first = samples_.front().image.shape();
    for (const auto& s : samples_) {
      if (s.image.shape() != first) {
        throw std::invalid_argument("dataset images have mixed shapes: " + shape_to_string(first) +
                                    " vs " + shape_to_string(s.image.shape()));
      }
    }
  }
}

const Shape& LongTailDataset::image_shape() const {
  if (samples_.empty()) throw std::logic_error("image_shape of empty dataset");
  return samples_.front().image.shape();
}

std::vector<std::size_t> PartBank::classes_with_part(std::size_t k) const {
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < num_classes(); ++c)
    if (composition.at(c, k) > 0.0) out.push_back(c);
  return out;
}

void PartBank::validate() const {
  if (parts.empty()) throw std::invalid_argument("empty part bank");
  if (anchors.size() != parts.size()) throw std::invalid_argument("part bank: anchors/parts mismatch");
  if (composition.empty() || composition.cols() != parts.size()) {
    throw std::invalid_argument("part bank: composition must be C x K with K = " +
                                std::to_string(parts.size()));
  }
  for (std::size_t k = 0; k < parts.size(); ++k) {
    if (parts[k].shape() != Shape{channels, part_size, part_size}) {
      throw std::invalid_argument("part bank: part " + std::to_string(k) + " has shape " +
                                  shape_to_string(parts[k].shape()));
    }
    const auto [r, c] = anchors[k];
    if (r + part_size + jitter > height || c + part_size + jitter > width) {
      throw std::invalid_argument("part bank: part " + std::to_string(k) + " leaves the canvas");
    }
  }
  for (double w : composition.data()) {
    if (!(w >= 0.0)) throw std::invalid_argument("part bank: composition weights must be >= 0");
  }
  if (num_classes() >= 2) {
    for (std::size_t k = 0; k < parts.size(); ++k) {
      if (classes_with_part(k).size() < 2) {
        throw std::invalid_argument("part bank: part " + std::to_string(k) +
                                    " is used by fewer than two classes");
      }
    }
  }
}

PartBank make_part_bank(std::size_t num_classes, const PartBankOptions& opts, Rng& rng) {
  if (num_classes < 1) throw std::invalid_argument("make_part_bank: num_classes must be >= 1");
  if (opts.slot_grid < 1 || opts.part_size < 1 || opts.options_per_slot < 1 || opts.channels < 1) {
    throw std::invalid_argument("make_part_bank: sizes must be >= 1");
  }
  // Each option needs two classes to be shared.
  const std::size_t options =
      std::max<std::size_t>(1, std::min(opts.options_per_slot, num_classes / 2));
  const std::size_t slots = opts.slot_grid * opts.slot_grid;
  const double tuples = std::pow(static_cast<double>(options), static_cast<double>(slots));
  if (num_classes > 1 && tuples < static_cast<double>(num_classes)) {
    throw std::invalid_argument("make_part_bank: " + std::to_string(num_classes) +
                                " classes need more slots or options per slot");
  }

  PartBank bank;
  bank.channels = opts.channels;
  bank.part_size = opts.part_size;
  bank.jitter = opts.jitter;
  const std::size_t cell = opts.part_size + opts.jitter;
  bank.height = bank.width = opts.slot_grid * cell;

  for (std::size_t s = 0; s < slots; ++s) {
    for (std::size_t o = 0; o < options; ++o) {
      Tensor part({opts.channels, opts.part_size, opts.part_size});
      for (auto& v : part.storage()) v = rng.normal();
      bank.parts.push_back(std::move(part));
      bank.anchors.emplace_back((s / opts.slot_grid) * cell, (s % opts.slot_grid) * cell);
    }
  }

  // Balanced option lists per slot, reshuffled until every class tuple is distinct.
  std::vector<std::vector<std::size_t>> choice(slots, std::vector<std::size_t>(num_classes));
  constexpr int kMaxAttempts = 10000;
  bool ok = false;
  for (int attempt = 0; attempt < kMaxAttempts && !ok; ++attempt) {
    for (auto& slot_choice : choice) {
      for (std::size_t c = 0; c < num_classes; ++c) slot_choice[c] = c % options;
      rng.shuffle(slot_choice.begin(), slot_choice.end());
    }
    std::set<std::vector<std::size_t>> seen;
    ok = true;
    for (std::size_t c = 0; c < num_classes && ok; ++c) {
      std::vector<std::size_t> tuple(slots);
      for (std::size_t s = 0; s < slots; ++s) tuple[s] = choice[s][c];
      ok = seen.insert(tuple).second;
    }
  }
  if (!ok) throw std::runtime_error("make_part_bank: could not find distinct class compositions");

  bank.composition = Tensor({num_classes, bank.parts.size()});
  for (std::size_t c = 0; c < num_classes; ++c)
    for (std::size_t s = 0; s < slots; ++s) bank.composition.at(c, s * options + choice[s][c]) = 1.0;
  bank.validate();
  return bank;
}

RenderedSample render_sample(const PartBank& bank, std::size_t label, double noise_sigma, Rng& rng) {
  if (label >= bank.num_classes()) {
    throw std::out_of_range("render_sample: label " + std::to_string(label) + " out of range");
  }
  RenderedSample out{Tensor({bank.channels, bank.height, bank.width}), {}};
  const std::size_t hw = bank.height * bank.width;
  for (std::size_t k = 0; k < bank.num_parts(); ++k) {
    const double amp = bank.composition.at(label, k);
    if (amp <= 0.0) continue;
    const std::size_t r0 = bank.anchors[k].first + rng.uniform_index(bank.jitter + 1);
    const std::size_t c0 = bank.anchors[k].second + rng.uniform_index(bank.jitter + 1);
    const Tensor& part = bank.parts[k];
    const std::size_t ps = bank.part_size;
    for (std::size_t ch = 0; ch < bank.channels; ++ch)
      for (std::size_t i = 0; i < ps; ++i)
        for (std::size_t j = 0; j < ps; ++j)
          out.image[ch * hw + (r0 + i) * bank.width + (c0 + j)] += amp * part[(ch * ps + i) * ps + j];
    out.placements.push_back({k, r0, c0});
  }
  if (noise_sigma > 0.0) {
    for (auto& v : out.image.storage()) v += noise_sigma * rng.normal();
  }
  return out;
}

LongTailDataset synth_dataset(const LongTailSpec& spec, const PartBank& bank, double noise_sigma,
                              Rng& rng) {
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("synth_dataset: noise_sigma must be >= 0");
  bank.validate();
  if (bank.num_classes() != spec.num_classes) {
    throw std::invalid_argument("synth_dataset: part bank has " + std::to_string(bank.num_classes()) +
                                " classes, spec has " + std::to_string(spec.num_classes));
  }
  const auto counts = class_counts(spec);
  std::vector<Sample> samples;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    for (std::size_t i = 0; i < counts[c]; ++i) {
      samples.push_back({render_sample(bank, c, noise_sigma, rng).image, c});
    }
  }
  return LongTailDataset(spec, std::move(samples));
}

SyntheticBenchmark make_synthetic_benchmark(const LongTailSpec& spec, double noise_sigma,
                                            std::size_t test_per_class, const PartBankOptions& opts) {
  const Rng root(spec.seed);
  Rng bank_rng = root.derive(1), train_rng = root.derive(2), test_rng = root.derive(3);
  SyntheticBenchmark out;
  out.bank = make_part_bank(spec.num_classes, opts, bank_rng);
  out.train = synth_dataset(spec, out.bank, noise_sigma, train_rng);
  if (test_per_class > 0) {
    const LongTailSpec test_spec{spec.num_classes, test_per_class, 1.0, spec.seed};
    out.test = synth_dataset(test_spec, out.bank, noise_sigma, test_rng);
  }
  return out;
}

ClassSplits split_classes(const std::vector<std::size_t>& counts) {
  ClassSplits s;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] > kManyThreshold) s.many.push_back(c);
    else if (counts[c] >= kFewThreshold) s.medium.push_back(c);
    else s.few.push_back(c);
  }
  return s;
}

ClassBalancedSampler::ClassBalancedSampler(const LongTailDataset& ds, Rng rng)
    : by_class_(ds.num_classes()), rng_(std::move(rng)) {
  for (std::size_t i = 0; i < ds.size(); ++i) by_class_[ds[i].label].push_back(i);
  for (std::size_t c = 0; c < by_class_.size(); ++c) {
    if (by_class_[c].empty()) {
      throw std::invalid_argument("class-balanced sampling: class " + std::to_string(c) +
                                  " has no samples");
    }
  }
}

std::size_t ClassBalancedSampler::next() {
  const auto& members = by_class_[rng_.uniform_index(by_class_.size())];
  return members[rng_.uniform_index(members.size())];
}

void save_spec(const LongTailSpec& spec, const fs::path& path) {
  nlohmann::ordered_json j;
  j["num_classes"] = spec.num_classes;
  j["n_max"] = spec.n_max;
  j["imbalance_factor"] = spec.imbalance_factor;
  j["seed"] = spec.seed;
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

LongTailSpec load_spec(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw DatasetError(DatasetErrc::missing_file, "missing file: " + path.string());
  try {
    const auto j = nlohmann::json::parse(f);
    LongTailSpec spec;
    spec.num_classes = j.at("num_classes").get<std::size_t>();
    spec.n_max = j.at("n_max").get<std::size_t>();
    spec.imbalance_factor = j.at("imbalance_factor").get<double>();
    spec.seed = j.at("seed").get<std::uint64_t>();
    if (spec.num_classes == 0) throw std::invalid_argument("num_classes must be >= 1");
    return spec;
  } catch (const std::exception& e) {
    throw DatasetError(DatasetErrc::bad_spec, path.string() + ": " + e.what());
  }
}

void save_dataset(const LongTailDataset& ds, const fs::path& dir) {
  fs::create_directories(dir / "data");
  std::ofstream csv(dir / "labels.csv");
  if (!csv) throw std::runtime_error("cannot write " + (dir / "labels.csv").string());
  csv << "file,label\n";
  char name[32];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    std::snprintf(name, sizeof(name), "data/%06zu.lct", i);
    write_tensor(dir / name, ds[i].image);
    csv << name << ',' << ds[i].label << '\n';
  }
  save_spec(ds.spec(), dir / "spec.json");
}

LongTailDataset load_dataset(const fs::path& dir) {
  const fs::path labels = dir / "labels.csv";
  if (!fs::exists(labels)) throw DatasetError(DatasetErrc::no_samples, "no samples found in " + dir.string());
  const LongTailSpec spec = load_spec(dir / "spec.json");

  std::ifstream csv(labels);
  std::string line;
  if (!std::getline(csv, line)) throw DatasetError(DatasetErrc::no_samples, "no samples found in " + dir.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "file,label") {
    throw DatasetError(DatasetErrc::malformed_csv, "labels.csv: expected header 'file,label'");
  }
  std::vector<Sample> samples;
  std::size_t lineno = 1;
  while (std::getline(csv, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos || comma == 0) {
      throw DatasetError(DatasetErrc::malformed_csv,
                         "labels.csv line " + std::to_string(lineno) + ": expected 'file,label'");
    }
    const std::string file = line.substr(0, comma);
    const std::string label_text = line.substr(comma + 1);
    std::size_t label = 0;
    const auto [ptr, ec] =
        std::from_chars(label_text.data(), label_text.data() + label_text.size(), label);
    if (ec != std::errc() || ptr != label_text.data() + label_text.size()) {
      throw DatasetError(DatasetErrc::malformed_csv,
                         "labels.csv line " + std::to_string(lineno) + ": bad label '" + label_text + "'");
    }
    if (label >= spec.num_classes) {
      throw DatasetError(DatasetErrc::label_out_of_range,
                         "label out of range: " + std::to_string(label) + " at labels.csv line " +
                             std::to_string(lineno));
    }
    const fs::path tensor_path = dir / file;
    if (!fs::exists(tensor_path)) {
      throw DatasetError(DatasetErrc::missing_file, "missing file: " + tensor_path.string());
    }
    samples.push_back({read_tensor(tensor_path), label});
  }
  if (samples.empty()) throw DatasetError(DatasetErrc::no_samples, "no samples found in " + dir.string());
  return LongTailDataset(spec, std::move(samples));
}

}  // namespace lcreg
