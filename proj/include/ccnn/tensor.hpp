#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace ccnn {

using FeatureVector = std::vector<double>;

struct Shape {
  int channels = 1;
  int height = 0;
  int width = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) *
           static_cast<std::size_t>(width);
  }
  friend bool operator==(const Shape&, const Shape&) = default;
};

// Channel-major (CHW) image. A feature vector of length d is stored as a
// d x 1 x 1 tensor so that both input kinds travel through the same code.
struct ImageTensor {
  Shape shape;
  std::vector<double> values;

  ImageTensor() = default;
  ImageTensor(Shape s, std::vector<double> v);
  ImageTensor(int channels, int height, int width, double fill = 0.0);

  static ImageTensor from_features(std::span<const double> features);

  double& at(int c, int y, int x) {
    return values[(static_cast<std::size_t>(c) * shape.height + y) * shape.width + x];
  }
  double at(int c, int y, int x) const {
    return values[(static_cast<std::size_t>(c) * shape.height + y) * shape.width + x];
  }
  int height() const { return shape.height; }
  int width() const { return shape.width; }
  int channels() const { return shape.channels; }
};

}  // namespace ccnn
