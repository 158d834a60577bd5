// Copyright (c) 2026 echosynth contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>

#include "echosynth/tensor.hpp"

namespace echosynth {

// Lossless grayscale storage as binary PGM (P5), 8- or 16-bit. Images are
// normalized to [0,1] in memory; maxval-grid values survive a round trip
// exactly.
void write_pgm(const std::filesystem::path& path, const Tensor& image, int bit_depth = 16);
Tensor read_pgm(const std::filesystem::path& path, int* bit_depth = nullptr);

// Raw integer masks (class ids), stored without normalization.
void write_mask_pgm(const std::filesystem::path& path, const Mask& mask);
Mask read_mask_pgm(const std::filesystem::path& path);

// Area-averaging resample for images, nearest-neighbor for masks.
Tensor resample_image(const Tensor& image, int out_h, int out_w);
Mask resample_mask(const Mask& mask, int out_h, int out_w);

}  // namespace echosynth
