#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ccnn/data.hpp"
#include "ccnn/objective.hpp"

namespace ccnn {

enum class BalanceCriterion { Subject, Level, Cooccurrence };
std::string to_string(BalanceCriterion c);

// How balanced batches are weighted in the objective. Importance weights
// undo the stratified sampling so the expected batch gradient is that of the
// plain average over instances; None uses the balanced batch as is.
enum class BalanceWeighting { Importance, None };
std::string to_string(BalanceWeighting w);
BalanceWeighting parse_balance_weighting(const std::string& text);

struct SampledBatch {
  std::vector<std::size_t> indices;  // into the stream's rows
  std::vector<int> strata;           // stratum drawn for each slot
  std::vector<double> weights;
};

// Stratified sampling with replacement: each slot picks a non-empty stratum
// uniformly and then one of its members uniformly. Strata are subjects,
// (node, level) pairs, or (edge, level pair) combinations.
class BalancedBatchStream {
 public:
  BalancedBatchStream(std::span<const LabeledInstance> rows, BalanceCriterion criterion, int batch_size,
                      std::uint64_t seed, std::span<const CopulaEdgeParams> edges = {},
                      BalanceWeighting weighting = BalanceWeighting::Importance);

  SampledBatch next();

  BalanceCriterion criterion() const { return criterion_; }
  int batch_size() const { return batch_size_; }
  int stratum_count() const { return static_cast<int>(members_.size()); }
  const std::string& stratum_label(int s) const { return labels_[s]; }
  const std::vector<std::size_t>& stratum_members(int s) const { return members_[s]; }
  // Probability that one slot draws row i.
  double inclusion_probability(std::size_t i) const { return inclusion_[i]; }

 private:
  BalanceCriterion criterion_;
  int batch_size_;
  BalanceWeighting weighting_;
  std::size_t row_count_;
  std::vector<std::vector<std::size_t>> members_;
  std::vector<std::string> labels_;
  std::vector<double> inclusion_;
  std::mt19937_64 rng_;
};

// Round-robin over K datasets; every cycle starts at a uniformly drawn
// dataset.
class BatchInterleaver {
 public:
  BatchInterleaver(int datasets, std::uint64_t seed);
  int next();
  int datasets() const { return k_; }

 private:
  int k_;
  int start_ = 0;
  int pos_ = 0;
  std::mt19937_64 rng_;
};

std::vector<int> interleave_order(int datasets, int cycles, std::uint64_t seed);

// Classical momentum: v <- momentum * v - lr * g; p <- p + v.
void sgd_momentum_step(std::span<double> params, std::span<const double> grads, std::span<double> velocity,
                       double learning_rate, double momentum);

struct OptState {
  double learning_rate = 0.001;
  double momentum = 0.9;
  ModelGradient velocity;
  std::size_t iterations = 0;

  static OptState for_model(const CrfModel& model, double learning_rate, double momentum);
};

// Applies one step to the blocks selected by `blocks`; the rest of the model
// and their velocities are not touched. With `context` >= 0 only that
// context's unaries and edges move, so parameters outside the current
// dataset keep their values and velocities.
void sgd_momentum_step(CrfModel& model, const ModelGradient& grad, OptState& state, GradientRequest blocks,
                       int context = -1);

struct TrainConfig {
  double learning_rate = 0.001;
  double momentum = 0.9;
  int batch_size = 128;
  double lambda = 1e-4;
  std::map<std::string, double> node_lambda;
  int phase_steps = 50;
  int epochs = 20;
  std::uint64_t seed = 1;
  // "full", "none", or a comma list of name-name pairs.
  std::string edge_topology = "full";
  double theta_max = kDefaultThetaMax;
  int patience = 10;
  double validation_fraction = 0.0;
  // "passthrough", "default", or a layer list such as conv(8,5),relu,maxpool(2),fc(16).
  std::string encoder = "passthrough";
  double crop_fraction = 1.0;
  BalanceWeighting balance_weighting = BalanceWeighting::Importance;
  // Size of the fixed subset on which the per-phase objective is traced.
  int trace_samples = 5000;
  // Keep sigma at 1: the likelihood is unchanged when psi, beta and sigma
  // are scaled together.
  bool fix_sigma = true;
  double init_beta_std = 0.01;

  void validate() const;
};

// key = value lines, '#' comments. Unknown keys are errors.
TrainConfig parse_train_config(std::istream& in);
TrainConfig load_train_config(const std::filesystem::path& path);
std::vector<std::pair<std::string, std::string>> config_entries(const TrainConfig& config);

// Edges of one dataset under the configured topology, as local index pairs.
std::vector<std::pair<int, int>> topology_edges(const std::string& topology, const std::vector<std::string>& nodes);

// Fresh model for the datasets: one context per dataset, shared unaries for
// nodes with the same name, thresholds at empirical level quantiles, theta 0.
CrfModel build_model(std::span<const Dataset> datasets, const TrainConfig& config);

enum class Phase { Encoder, Unary, Pairwise };
std::string to_string(Phase p);

struct TracePoint {
  int iteration = 0;  // phase counter, 0 = before training
  int epoch = 0;
  std::string phase;
  double loss = 0.0;
  std::optional<double> validation;
};

struct TrainResult {
  std::vector<TracePoint> trace;
  int epochs_run = 0;
  bool stopped_early = false;
  std::optional<double> best_validation;
};

using PhaseCallback = std::function<void(Phase, const CrfModel& before, const CrfModel& after)>;

using StepCallback = std::function<void(Phase, int context, const CrfModel& before, const CrfModel& after)>;
struct TrainOptions {
  // Called after every phase with the model as it was before and after.
  PhaseCallback on_phase;
  // Called after every optimizer step with the context of its batch.
  StepCallback on_step;
};

// Each epoch runs S1 (encoder on subject-balanced batches), S2 (unaries on
// level-balanced batches) and S3 (copula parameters on co-occurrence-balanced
// batches). S1 is skipped for a passthrough encoder and S3 when no context
// has edges. Datasets are matched to contexts by id.
TrainResult ibb_train(CrfModel& model, std::span<const Dataset> datasets, const TrainConfig& config,
                      const TrainOptions& options = {});

void write_trace_csv(const TrainResult& result, std::ostream& out);

struct BlockCheck {
  std::string block;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  // Encoder coordinates whose perturbation changes a ReLU or pooling
  // decision are not differentiable there and are left out.
  std::size_t skipped = 0;
};

struct GradCheckReport {
  std::vector<BlockCheck> blocks;
  double max_rel_error() const;
  bool passed(double tolerance) const { return max_rel_error() <= tolerance; }
};

// Central differences of composite_nll against `analytic`.
GradCheckReport compare_gradients(const CrfModel& model, int context, std::span<const LabeledInstance> batch,
                                  const ModelGradient& analytic, double epsilon = 1e-5);
GradCheckReport grad_check(const CrfModel& model, int context, std::span<const LabeledInstance> batch,
                           double epsilon = 1e-5);

void write_grad_check(const GradCheckReport& report, std::ostream& out);

}  // namespace ccnn
