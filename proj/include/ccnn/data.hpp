#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ccnn/model.hpp"

namespace ccnn {

inline constexpr int kDatasetFormatVersion = 1;

enum class InputKind { Features, Image };

struct Dataset {
  std::string id;
  std::vector<NodeInfo> nodes;
  InputKind input_kind = InputKind::Features;
  Shape input_shape;  // {d,1,1} for features, {1,H,W} for images
  std::vector<LabeledInstance> rows;

  std::vector<std::string> node_names() const;
  std::vector<std::string> subjects() const;  // sorted, unique
};

// Text format, one record per line ('#' starts a comment line):
//
//   ccnn-dataset 1
//   dataset <id>
//   input features <dim>          | input image <height> <width>
//   node <name> <levels>          (one line per output, in column order)
//   rows
//   <subject> <label>... <feature>...   | <subject> <label>... <image path>
//
// Labels are 1..levels or '?' for missing. Image paths are relative to the
// dataset file and are read as 8-bit grayscale scaled to [0,1].
Dataset load_dataset(const std::filesystem::path& path);
Dataset parse_dataset(std::istream& in, const std::filesystem::path& base_dir = {});
void save_dataset(const Dataset& data, const std::filesystem::path& path);
void write_dataset(const Dataset& data, std::ostream& out);

// Checks every row against the header; throws DataError.
void validate_dataset(const Dataset& data);

// Per-image contrast normalization of every image row.
void normalize_images(Dataset& data);

// Subject-disjoint split; round(train_fraction * #subjects) go to training.
std::pair<Dataset, Dataset> split_by_subject(const Dataset& data, double train_fraction, std::uint64_t seed);

// Ground truth for the pairwise-exact generator.
struct SynthNode {
  std::string name;
  std::vector<double> thresholds;
  std::vector<double> beta;
  double sigma = 1.0;
};

struct SynthEdge {
  std::string r;
  std::string s;
  double theta = 0.0;
};

struct SynthSpec {
  std::string dataset_id = "synth";
  std::vector<SynthNode> nodes;
  std::vector<SynthEdge> edges;  // node-disjoint pairs
  int feature_dim = 1;
  double feature_std = 1.0;
  // Observed features are the generating features plus N(0, noise^2) noise.
  double feature_noise = 0.0;
  std::optional<FeatureVector> fixed_feature;
  int samples = 1000;
  int subjects = 10;
  std::uint64_t seed = 1;

  std::vector<OrdinalUnaryParams> unaries() const;
};

void validate_synth_spec(const SynthSpec& spec);
SynthSpec load_synth_spec(const std::filesystem::path& path);  // JSON
void save_synth_spec(const SynthSpec& spec, const std::filesystem::path& path);

// Draws each edge's label pair from its exact joint table and every unpaired
// node from its marginal.
Dataset synth_sample(const SynthSpec& spec);

}  // namespace ccnn
