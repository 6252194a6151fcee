#pragma once

#include <span>
#include <vector>

#include "ccnn/model.hpp"

namespace ccnn {

// Gradient shaped like the trainable parts of a CrfModel.
struct ModelGradient {
  EncoderParams encoder;                     // same layer shapes as the model encoder
  std::vector<std::vector<double>> unaries;  // per node, raw layout
  std::vector<std::vector<double>> thetas;   // per context, per edge

  static ModelGradient zeros_like(const CrfModel& model);
  void scale(double factor);
  void add(const ModelGradient& other);
};

struct BatchItem {
  const LabeledInstance* instance = nullptr;
  double weight = 1.0;
  // When set, used instead of running the encoder (valid while the encoder
  // is frozen).
  const FeatureVector* features = nullptr;
};

struct GradientRequest {
  bool encoder = true;
  bool unary = true;
  bool pairwise = true;
};

std::vector<BatchItem> as_batch(std::span<const LabeledInstance> instances);

// Sum of log unary and log pairwise potentials of a full configuration.
double score(const CrfModel& model, int context, std::span<const double> features, std::span<const Level> labels);

// energy = -score. Every label must be present.
double energy(const CrfModel& model, int context, const ImageTensor& input, std::span<const Level> labels);

// Sum over context nodes of lambda_q * ||raw phi_q||^2.
double unary_regularizer(const CrfModel& model, int context);

// Regularized negative composite log-likelihood averaged over the batch:
//   reg - (1/B) sum_i w_i [ sum_q log P_q(y_i^q) + sum_(r,s) log P_rs(y_i^r, y_i^s) ]
// Terms touching a missing label are skipped. When `grad` is non-null the
// gradient of that value is added into it for the requested blocks.
double composite_nll(const CrfModel& model, int context, std::span<const BatchItem> batch,
                     ModelGradient* grad = nullptr, GradientRequest request = {});
double composite_nll(const CrfModel& model, int context, std::span<const LabeledInstance> batch,
                     ModelGradient* grad = nullptr);

// Fully normalized negative log-likelihood -(score(y) - log Z) averaged over
// the batch, Z by enumeration. Tiny graphs only.
inline constexpr std::size_t kEnumerationLimit = 1'000'000;
double exact_nll(const CrfModel& model, int context, std::span<const LabeledInstance> batch);

struct ContextBatch {
  int context = 0;
  std::span<const BatchItem> items;
};

// Sum of per-dataset composite objectives sharing unary parameters.
double multi_dataset_nll(const CrfModel& model, std::span<const ContextBatch> batches,
                         ModelGradient* grad = nullptr, GradientRequest request = {});

}  // namespace ccnn
