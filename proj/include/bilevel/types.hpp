#pragma once

#include <cstddef>
#include <string>

#include <Eigen/Core>

namespace bilevel {

using Vec = Eigen::VectorXd;

/// Channel-major image geometry. Pixel (c, y, x) lives at
/// c * height * width + y * width + x.
struct Shape {
  int channels = 1;
  int height = 1;
  int width = 1;

  std::size_t size() const {
    return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) *
           static_cast<std::size_t>(width);
  }
  std::size_t plane() const {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }
  bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

struct Image {
  Shape shape;
  Vec data;
};

}  // namespace bilevel
