#pragma once

#include <array>
#include <cstdint>
#include <span>

#include "gmn/config.hpp"

namespace gmn {

// 28x28 binary observation, row-major, ink = 1.
struct BinaryImage {
  std::array<std::uint8_t, kImagePixels> pixels{};

  std::uint8_t at(int row, int col) const { return pixels[row * kImageSide + col]; }
  std::uint8_t& at(int row, int col) { return pixels[row * kImageSide + col]; }
  std::span<const std::uint8_t> view() const { return pixels; }
  int ink() const {
    int n = 0;
    for (auto p : pixels) n += p;
    return n;
  }

  bool operator==(const BinaryImage&) const = default;
};

}  // namespace gmn
