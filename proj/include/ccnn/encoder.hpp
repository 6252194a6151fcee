#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ccnn/tensor.hpp"

namespace ccnn {

enum class LayerKind { Conv, Relu, MaxPool, FullyConnected };
enum class Padding { Valid, Same };

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  int units = 0;  // conv filters or fc outputs
  int size = 0;   // conv filter side or pool window
  Padding padding = Padding::Same;

  static LayerSpec conv(int filters, int size, Padding padding = Padding::Same) {
    return {LayerKind::Conv, filters, size, padding};
  }
  static LayerSpec relu() { return {LayerKind::Relu, 0, 0, Padding::Valid}; }
  static LayerSpec maxpool(int size = 2) { return {LayerKind::MaxPool, 0, size, Padding::Valid}; }
  static LayerSpec fc(int outputs) { return {LayerKind::FullyConnected, outputs, 0, Padding::Valid}; }
};

// Parses "conv(32,9),relu,maxpool(2),fc(128)". An optional ":valid" or
// ":same" suffix inside conv(...) selects the padding, e.g. conv(8,5:valid).
std::vector<LayerSpec> parse_layer_specs(const std::string& text);
std::string format_layer_specs(std::span<const LayerSpec> specs);

struct Layer {
  LayerSpec spec;
  Shape in;
  Shape out;
  // conv: [filters][in_channels][size][size]; fc: [outputs][in.size()]
  std::vector<double> weights;
  std::vector<double> bias;
};

// Weights of the feature extractor. With no layers the encoder is a
// passthrough and the flattened input is the feature vector.
class EncoderParams {
 public:
  EncoderParams() = default;

  static EncoderParams passthrough(int feature_dim);
  // Shapes are propagated from `input`; weights are fan-in scaled uniform,
  // biases zero.
  static EncoderParams build(Shape input, std::span<const LayerSpec> specs, std::uint64_t seed);
  // conv(32,9) relu maxpool(2) conv(64,9) relu maxpool(2) conv(128,9) relu
  // maxpool(2) fc(128), same padding.
  static EncoderParams default_architecture(Shape input = {1, 48, 48}, std::uint64_t seed = 0);
  static std::vector<LayerSpec> default_layer_specs();

  const Shape& input_shape() const { return input_; }
  int feature_dim() const;
  bool is_passthrough() const { return layers_.empty(); }

  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<LayerSpec> specs() const;

  // Trainable arrays in a fixed order: for each parametric layer, weights
  // then bias.
  std::vector<std::span<double>> blocks();
  std::vector<std::span<const double>> blocks() const;
  std::size_t parameter_count() const;

  // Same shapes, all entries zero. Used as gradient accumulator.
  EncoderParams zeros_like() const;

 private:
  Shape input_;
  std::vector<Layer> layers_;
};

// Per-layer activations kept for the backward pass. activations[i] is the
// input of layer i; activations.back() is the feature vector.
struct ForwardTrace {
  std::vector<std::vector<double>> activations;
  std::vector<std::vector<std::uint32_t>> pool_argmax;

  // Hash of all ReLU on/off states and pooling winners. Two evaluations with
  // equal signatures lie in the same linear region of the network.
  std::uint64_t activation_signature() const;
};

FeatureVector forward(const ImageTensor& x, const EncoderParams& params, ForwardTrace* trace = nullptr);

// Accumulates d(loss)/d(params) into `grad` (shaped like params) given
// d(loss)/d(features). When `input_grad` is non-null it receives
// d(loss)/d(input).
void backward(const EncoderParams& params, const ForwardTrace& trace, std::span<const double> upstream,
              EncoderParams& grad, std::vector<double>* input_grad = nullptr);

struct EncoderGradient {
  EncoderParams params;
  std::vector<double> input;
};

// Convenience form that recomputes the forward pass.
EncoderGradient backward(const ImageTensor& x, const EncoderParams& params, std::span<const double> upstream);

// Per-image standardization followed by an affine map onto [0,1]. A constant
// image cannot be standardized; it maps to 0.5 everywhere and is flagged.
struct NormalizedImage {
  ImageTensor image;
  bool degenerate = false;
};
NormalizedImage contrast_normalize(const ImageTensor& x);

// Random window of floor(fraction * side) per spatial axis, offset uniform
// over valid positions.
ImageTensor random_crop(const ImageTensor& x, double fraction, std::uint64_t seed);
ImageTensor center_crop(const ImageTensor& x, double fraction);
Shape cropped_shape(Shape s, double fraction);

}  // namespace ccnn
