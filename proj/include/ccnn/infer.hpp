#pragma once

#include <string>
#include <vector>

#include "ccnn/model.hpp"

namespace ccnn {

enum class DecodeMethod { Exact, DualDecomposition, UnaryArgmax };

std::string to_string(DecodeMethod m);
DecodeMethod parse_decode_method(const std::string& name);  // exact | dd | unary

struct DecodeResult {
  std::vector<Level> labels;
  double score = 0.0;  // sum of log U + log V of `labels`
  DecodeMethod method = DecodeMethod::Exact;
  // Dual decomposition: all edge subproblems agreed on every node, so the
  // labelling is a certified optimum. Exact and unary decoders set it true.
  bool certificate = true;
  int iterations = 0;
};

struct DualDecompositionOptions {
  int max_iterations = 500;
  double initial_step = 1.0;  // alpha_t = initial_step / (1 + t)
};

// Exhaustive search; ties resolve to the lexicographically smallest labels.
DecodeResult exact_map(const LogPotentials& pot);

// Subgradient dual decomposition over edge subproblems. Each node's log
// unary is split evenly among its incident edges; Lagrange multipliers drive
// the copies of a node towards agreement. Returns the best primal labelling
// seen (each candidate polished by coordinate ascent).
DecodeResult dd_map(const LogPotentials& pot, const DualDecompositionOptions& options = {});

// Independent per-node argmax; pairwise terms ignored for the choice but
// included in the reported score.
DecodeResult unary_argmax(const LogPotentials& pot);

DecodeResult decode(const LogPotentials& pot, DecodeMethod method, const DualDecompositionOptions& options = {});

DecodeResult exact_map(const CrfModel& model, int context, const ImageTensor& input);
DecodeResult dd_map(const CrfModel& model, int context, const ImageTensor& input,
                    const DualDecompositionOptions& options = {});
DecodeResult unary_argmax(const CrfModel& model, int context, const ImageTensor& input);

}  // namespace ccnn
