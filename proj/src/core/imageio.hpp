#pragma once

#include <filesystem>
#include <string>

#include "image.hpp"

namespace fbind {

// Dispatches on extension: .png / .jpg / .jpeg decode 8-bit RGB, .npy reads a
// float array of shape (h, w, 3) or (h, w). Values come back in [0, 1].
Image read_image(const std::filesystem::path& path);

// 8-bit RGB PNG; values are clamped to [0, 1] and rounded.
void write_image_png(const std::filesystem::path& path, const Image& img);
void write_image_jpeg(const std::filesystem::path& path, const Image& img,
                      int quality = 95);

// Lossless float64 array, shape (h, w, 3).
void write_image_npy(const std::filesystem::path& path, const Image& img);

// Label masks: 8-bit single-channel PNG, pixel value = class id. Palette
// PNGs are read by index (the VOC palette is ignored).
SegMask read_mask_png(const std::filesystem::path& path);
void write_mask_png(const std::filesystem::path& path, const SegMask& mask);

// Raw numpy I/O used for perturbation maps: little-endian f4/f8, shape
// (h, w), (h, w, 1) or (h, w, 3). A (h, w) map is broadcast across channels.
Image read_npy_map(const std::filesystem::path& path);
void write_npy_map(const std::filesystem::path& path, const Image& img,
                   int channels = 3);

// Signed perturbation map: .npy values are taken verbatim, 8-bit images are
// re-centered as (byte - 128) / 255.
Image read_perturbation(const std::filesystem::path& path);

}  // namespace fbind
