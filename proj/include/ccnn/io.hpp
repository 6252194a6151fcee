#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "ccnn/infer.hpp"
#include "ccnn/metrics.hpp"
#include "ccnn/model.hpp"

namespace ccnn {

inline constexpr int kModelFormatVersion = 1;
inline constexpr int kPredictionFormatVersion = 1;

using ConfigSnapshot = std::vector<std::pair<std::string, std::string>>;

struct ModelArtifact {
  CrfModel model;
  ConfigSnapshot config;  // training settings that produced the model
};

// JSON document holding the graph of every context and all parameters.
std::string model_to_json(const CrfModel& model, const ConfigSnapshot& config = {});
ModelArtifact model_from_json(const std::string& text);
void save_model(const CrfModel& model, const std::filesystem::path& path, const ConfigSnapshot& config = {});
ModelArtifact load_model(const std::filesystem::path& path);

// "positive dependence", "negative dependence" or "independence".
std::string dependence_label(double theta);
void write_model_summary(const CrfModel& model, std::ostream& out);

struct PredictionRow {
  std::string subject;
  std::vector<Level> labels;
  double score = 0.0;
  bool certificate = false;
};

struct Predictions {
  std::string decoder;
  std::vector<std::string> nodes;
  std::vector<PredictionRow> rows;
};

void write_predictions(const Predictions& p, std::ostream& out);
Predictions read_predictions(std::istream& in);
Predictions load_predictions(const std::filesystem::path& path);

}  // namespace ccnn
