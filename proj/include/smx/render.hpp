#pragma once

#include <array>
#include <cstdint>

#include "smx/scene.hpp"
#include "smx/tensor.hpp"

namespace smx {

inline constexpr std::size_t kRasterSide = 12;  // 3 cells x 4 pixels
inline constexpr std::size_t kRasterChannels = 3;
inline constexpr std::size_t kRasterSize =
    kRasterSide * kRasterSide * kRasterChannels;  // 432

namespace detail {

// 4x4 coverage masks per (shape, size), one bit per pixel, row-major from the
// top. Every pair has a distinct pattern and a distinct pixel count, so an
// occupied cell identifies its object's shape and size uniquely.
inline constexpr std::array<std::uint16_t, 6> kMasks = {
    // circle small: plus sign, 5 px
    0b0100'1110'0100'0000,
    // circle large: disc with clipped corners, 12 px
    0b0110'1111'1111'0110,
    // triangle small: 3 px wedge
    0b0100'0110'0000'0000,
    // triangle large: staircase fill, 10 px
    0b0100'0110'1110'1111,
    // square small: 2x2 center, 4 px
    0b0000'0110'0110'0000,
    // square large: full block, 16 px
    0b1111'1111'1111'1111,
};

inline std::uint16_t mask_for(Shape shape, Size size) {
  const std::size_t idx = static_cast<std::size_t>(shape) * 2 +
                          (size == Size::Large ? 1 : 0);
  return kMasks[idx];
}

inline std::array<double, 3> rgb_for(Color c) {
  switch (c) {
    case Color::Red: return {1.0, 0.0, 0.0};
    case Color::Green: return {0.0, 1.0, 0.0};
    case Color::Blue: return {0.0, 0.0, 1.0};
    case Color::Yellow: return {1.0, 1.0, 0.0};
    case Color::Gray: return {0.5, 0.5, 0.5};
    case Color::Cyan: return {0.0, 1.0, 1.0};
  }
  throw FormatError("bad color value");
}

}  // namespace detail

// Deterministic raster: 12x12 pixels, 3 channels, values in [0,1], black
// background. Each object paints its mask into its cell's 4x4 block.
inline Tensor render_grid(const Scene& s) {
  Tensor img = Tensor::zeros({kRasterSide, kRasterSide, kRasterChannels});
  for (const SceneObject& o : s.objects()) {
    const std::uint16_t mask = detail::mask_for(o.shape, o.size);
    const std::array<double, 3> rgb = detail::rgb_for(o.color);
    for (int py = 0; py < 4; ++py)
      for (int px = 0; px < 4; ++px) {
        const int bit = 15 - (py * 4 + px);
        if (!((mask >> bit) & 1)) continue;
        const std::size_t row = static_cast<std::size_t>(o.cell.row * 4 + py);
        const std::size_t col = static_cast<std::size_t>(o.cell.col * 4 + px);
        double* px_ptr =
            &img.data[(row * kRasterSide + col) * kRasterChannels];
        px_ptr[0] = rgb[0];
        px_ptr[1] = rgb[1];
        px_ptr[2] = rgb[2];
      }
  }
  return img;
}

// Flat 432-vector view of the raster, the grid encoder's input layout.
inline std::vector<double> render_grid_flat(const Scene& s) {
  return render_grid(s).data;
}

}  // namespace smx
