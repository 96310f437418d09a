#pragma once

#include <string>
#include <vector>

#include "tosuda/tensor.hpp"

namespace tosuda {

/// Writes a [CxHxW] image (C = 1 or 3, values in [0,1]) as binary PPM
/// (P6, maxval 255); bytes are round(value * 255) clamped. Grayscale is
/// replicated across the three planes.
void write_ppm(const std::string& path, const Tensor& image);

/// Reads a P6 PPM back as [3xHxW] with values in [0,1].
Tensor read_ppm(const std::string& path);

/// Places [CxHxW] images side by side; all panels must share C and H.
Tensor hstack_images(const std::vector<Tensor>& panels);

}  // namespace tosuda
