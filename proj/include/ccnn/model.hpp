#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ccnn/copula.hpp"
#include "ccnn/encoder.hpp"
#include "ccnn/ordinal.hpp"

namespace ccnn {

struct NodeInfo {
  std::string name;
  int levels = 0;
  friend bool operator==(const NodeInfo&, const NodeInfo&) = default;
};

// Output graph of one dataset context. `nodes` maps local positions (the
// label order of that dataset) to model node ids; edge endpoints are local
// positions with r < s.
struct CrfGraph {
  std::string context;
  std::vector<int> nodes;
  std::vector<CopulaEdgeParams> edges;

  int size() const { return static_cast<int>(nodes.size()); }
  int local_index(int node_id) const;
};

// All edges among `count` nodes, in lexicographic order.
std::vector<std::pair<int, int>> fully_connected_edges(int count);

// Encoder weights, one unary block per output (shared by every context that
// annotates it) and one edge set with copula parameters per context.
class CrfModel {
 public:
  EncoderParams encoder;
  std::vector<NodeInfo> nodes;
  std::vector<OrdinalUnaryParams> unaries;
  std::vector<CrfGraph> contexts;
  double lambda = 1e-4;
  std::vector<std::optional<double>> node_lambda;
  double theta_max = kDefaultThetaMax;
  // Image inputs are cropped to this fraction per side before the encoder:
  // randomly while training, centered at inference.
  double crop_fraction = 1.0;

  int feature_dim() const { return encoder.feature_dim(); }

  // Registers a node or returns the existing id. Re-registering a name with
  // a different level count is a configuration error.
  int add_node(const std::string& name, int levels);
  int find_node(const std::string& name) const;
  int find_context(const std::string& name) const;

  // Adds a context over the named nodes (which must already exist) with the
  // given local edge list and initial theta.
  int add_context(const std::string& name, const std::vector<std::string>& node_names,
                  const std::vector<std::pair<int, int>>& edges, double theta = 0.0);

  double lambda_for(int node) const;

  // Checks shapes and references; throws ConfigError.
  void validate() const;
};

struct LabeledInstance {
  ImageTensor input;
  std::vector<Level> labels;  // one per context node, kMissing allowed
  std::string subject;
  std::string dataset;
  std::string source;  // image path for image datasets, empty otherwise
};

// Log unary and log pairwise potentials of one input, detached from the model.
struct LogPotentials {
  struct Pair {
    int r = 0;
    int s = 0;
    int rows = 0;
    int cols = 0;
    std::vector<double> table;  // row-major log V(l_r, l_s)
    double at(int i, int j) const { return table[static_cast<std::size_t>(i) * cols + j]; }
  };
  std::vector<std::vector<double>> unary;
  std::vector<Pair> pairs;

  int size() const { return static_cast<int>(unary.size()); }
  // Sum of log-potentials of a full configuration.
  double score(std::span<const Level> labels) const;
  // Product of level counts, saturating at SIZE_MAX.
  std::size_t configuration_count() const;
};

// Center crop for image encoders when crop_fraction < 1, identity otherwise.
ImageTensor inference_input(const CrfModel& model, const ImageTensor& input);

LogPotentials build_potentials(const CrfModel& model, int context, std::span<const double> features);

}  // namespace ccnn
