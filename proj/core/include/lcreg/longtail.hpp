#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "lcreg/rng.hpp"
#include "lcreg/tensor.hpp"

namespace lcreg {

struct LongTailSpec {
  std::size_t num_classes = 10;
  std::size_t n_max = 500;
  double imbalance_factor = 100.0;
  std::uint64_t seed = 0;
};

/// n_c = round(n_max * beta^(-c/(C-1))), non-increasing in c.
std::vector<std::size_t> class_counts(const LongTailSpec& spec);

struct Sample {
  Tensor image;  // channels x H x W
  std::size_t label = 0;
};

class LongTailDataset {
 public:
  LongTailDataset() = default;
  LongTailDataset(LongTailSpec spec, std::vector<Sample> samples);

  const LongTailSpec& spec() const { return spec_; }
  const std::vector<Sample>& samples() const { return samples_; }
  const std::vector<std::size_t>& class_counts() const { return counts_; }
  std::size_t size() const { return samples_.size(); }
  std::size_t num_classes() const { return spec_.num_classes; }
  const Sample& operator[](std::size_t i) const { return samples_[i]; }

  /// Shape of every image (channels, H, W).
  const Shape& image_shape() const;

 private:
  LongTailSpec spec_;
  std::vector<Sample> samples_;
  std::vector<std::size_t> counts_;
};

struct Placement {
  std::size_t part = 0;
  std::size_t row = 0;  // top-left corner on the canvas
  std::size_t col = 0;
};

/// Part templates and their class composition.
///
/// Part k is a channels x size x size patch with a fixed anchor on the
/// canvas; each stamp is shifted by a uniform offset in [0, jitter] along
/// both axes. composition(c, k) > 0 means class c carries part k with that
/// amplitude.
struct PartBank {
  std::size_t channels = 3;
  std::size_t height = 8;
  std::size_t width = 8;
  std::size_t part_size = 3;
  std::size_t jitter = 1;
  std::vector<Tensor> parts;
  std::vector<std::pair<std::size_t, std::size_t>> anchors;
  Tensor composition;  // C x K

  std::size_t num_parts() const { return parts.size(); }
  std::size_t num_classes() const { return composition.empty() ? 0 : composition.rows(); }
  /// Classes whose composition row uses part k.
  std::vector<std::size_t> classes_with_part(std::size_t k) const;
  /// Throws unless shapes agree, stamps stay on the canvas and every part is
  /// used by at least two classes.
  void validate() const;
};

struct PartBankOptions {
  std::size_t channels = 3;
  std::size_t slot_grid = 2;          // slots per canvas side
  std::size_t part_size = 3;
  std::size_t jitter = 1;
  std::size_t options_per_slot = 3;   // distinct parts competing for each slot
};

/// Compositional bank: the canvas is a slot_grid x slot_grid grid of slots,
/// each slot hosts `options_per_slot` parts, and every class takes exactly
/// one part per slot. Classes get distinct part tuples and every part is
/// shared by at least two classes.
PartBank make_part_bank(std::size_t num_classes, const PartBankOptions& opts, Rng& rng);

struct RenderedSample {
  Tensor image;
  std::vector<Placement> placements;
};

RenderedSample render_sample(const PartBank& bank, std::size_t label, double noise_sigma, Rng& rng);

LongTailDataset synth_dataset(const LongTailSpec& spec, const PartBank& bank, double noise_sigma,
                              Rng& rng);

/// Long-tailed training set plus a balanced test set rendered from the same
/// part bank. Bank, train and test use substreams 1, 2, 3 of Rng(spec.seed).
struct SyntheticBenchmark {
  PartBank bank;
  LongTailDataset train;
  LongTailDataset test;
};

SyntheticBenchmark make_synthetic_benchmark(const LongTailSpec& spec, double noise_sigma,
                                            std::size_t test_per_class, const PartBankOptions& opts = {});

struct ClassSplits {
  std::vector<std::size_t> many;
  std::vector<std::size_t> medium;
  std::vector<std::size_t> few;
};

inline constexpr std::size_t kManyThreshold = 100;  // many: n > 100
inline constexpr std::size_t kFewThreshold = 20;    // few: n < 20

ClassSplits split_classes(const std::vector<std::size_t>& counts);

/// Draws a class uniformly, then a sample of that class uniformly.
class ClassBalancedSampler {
 public:
  ClassBalancedSampler(const LongTailDataset& ds, Rng rng);
  /// Index into the dataset.
  std::size_t next();
  std::size_t num_classes() const { return by_class_.size(); }

 private:
  std::vector<std::vector<std::size_t>> by_class_;
  Rng rng_;
};

enum class DatasetErrc {
  missing_file,
  label_out_of_range,
  malformed_csv,
  no_samples,
  bad_spec,
};

class DatasetError : public std::runtime_error {
 public:
  DatasetError(DatasetErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  DatasetErrc code() const { return code_; }

 private:
  DatasetErrc code_;
};

/// Layout: <dir>/data/NNNNNN.lct, <dir>/labels.csv (file,label), <dir>/spec.json.
void save_dataset(const LongTailDataset& ds, const std::filesystem::path& dir);
LongTailDataset load_dataset(const std::filesystem::path& dir);

void save_spec(const LongTailSpec& spec, const std::filesystem::path& path);
LongTailSpec load_spec(const std::filesystem::path& path);

}  // namespace lcreg
