#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "gsproto/error.hpp"

namespace gsproto {

/// Interleaved RGB image, row-major, H x W x 3.
template <typename T> struct Image {
  int width = 0;
  int height = 0;
  std::vector<T> data;

  Image() = default;
  Image(int w, int h, T fill = T(0)) : width(w), height(h), data(std::size_t(w) * std::size_t(h) * 3, fill) {}

  std::size_t pixel_count() const { return std::size_t(width) * std::size_t(height); }
  std::size_t size() const { return data.size(); }

  T &at(int x, int y, int c) { return data[(std::size_t(y) * std::size_t(width) + std::size_t(x)) * 3 + std::size_t(c)]; }
  const T &at(int x, int y, int c) const {
    return data[(std::size_t(y) * std::size_t(width) + std::size_t(x)) * 3 + std::size_t(c)];
  }

  bool same_shape(const Image &o) const { return width == o.width && height == o.height && data.size() == o.data.size(); }
  bool operator==(const Image &) const = default;
};

template <typename T> void require_same_shape(const Image<T> &a, const Image<T> &b, const char *what) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(what) + ": image shapes differ (" + std::to_string(a.width) + "x" +
                     std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" + std::to_string(b.height) +
                     ")");
}

template <typename To, typename From> Image<To> cast_image(const Image<From> &in) {
  Image<To> out(in.width, in.height);
  std::transform(in.data.begin(), in.data.end(), out.data.begin(), [](From v) { return static_cast<To>(v); });
  return out;
}

} // namespace gsproto
