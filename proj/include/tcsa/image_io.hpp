#pragma once

#include <filesystem>

#include <torch/torch.h>

namespace tcsa::image_io {

/// Writes an 8-bit PNG. `pixels` is H x W (gray) or H x W x 3 (RGB), uint8.
void write_png(const std::filesystem::path& path, const torch::Tensor& pixels);

/// Jet-like colour map of a [0, 1] heatmap blended over a [-1, 1] grayscale image, H x W x 3 uint8.
torch::Tensor heatmap_overlay(const torch::Tensor& image, const torch::Tensor& heatmap, double alpha = 0.5);

}  // namespace tcsa::image_io
