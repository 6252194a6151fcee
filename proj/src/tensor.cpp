#include "ccnn/tensor.hpp"

#include "ccnn/errors.hpp"

namespace ccnn {

ImageTensor::ImageTensor(Shape s, std::vector<double> v) : shape(s), values(std::move(v)) {
  if (shape.channels <= 0 || shape.height <= 0 || shape.width <= 0)
    throw ConfigError("image dimensions must be positive");
  if (values.size() != shape.size()) throw ConfigError("image value count does not match its shape");
}

ImageTensor::ImageTensor(int channels, int height, int width, double fill)
    : ImageTensor(Shape{channels, height, width},
                  std::vector<double>(Shape{channels, height, width}.size(), fill)) {}

ImageTensor ImageTensor::from_features(std::span<const double> features) {
  return ImageTensor(Shape{static_cast<int>(features.size()), 1, 1},
                     std::vector<double>(features.begin(), features.end()));
}

}  // namespace ccnn
