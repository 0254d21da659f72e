#ifndef FACECAP_COMMON_IMAGE_HPP
#define FACECAP_COMMON_IMAGE_HPP

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace facecap {

// Row-major single-channel raster. Intensities live in [0,255] (float),
// probabilities in [0,1], masks in {0,1}.
template <typename T>
struct Image {
    int width = 0;
    int height = 0;
    std::vector<T> data;

    Image() = default;
    Image(int w, int h, T fill = T{}) : width(w), height(h), data(static_cast<size_t>(w) * h, fill) {
        if (w <= 0 || h <= 0) throw std::invalid_argument("Image: non-positive dimensions");
    }

    T& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
    const T& at(int x, int y) const { return data[static_cast<size_t>(y) * width + x]; }

    // Clamp-to-border read; any (x, y) is valid.
    T at_clamped(int x, int y) const {
        x = std::clamp(x, 0, width - 1);
        y = std::clamp(y, 0, height - 1);
        return at(x, y);
    }

    bool same_size(const Image& o) const { return width == o.width && height == o.height; }
    size_t size() const { return data.size(); }

    bool operator==(const Image& o) const {
        return width == o.width && height == o.height && data == o.data;
    }
};

using GrayImage = Image<float>;        // pixel intensity, [0,255]
using ProbabilityMap = Image<float>;   // per-pixel face probability, [0,1]
using BinaryMask = Image<uint8_t>;     // 1 = face, 0 = non-face

// Bilinear sample with pixel-center alignment; coordinates in source pixels.
float bilinear_sample(const GrayImage& img, float x, float y);

// Bilinear resize (pixel-center convention) to target dimensions.
GrayImage resize_bilinear(const GrayImage& src, int target_w, int target_h);

// --- Netpbm / PFM / PNG ---------------------------------------------------

// 8- or 16-bit binary PGM. Values scaled into [0,255] floats on load.
GrayImage load_pgm(const std::string& path);
void save_pgm8(const std::string& path, const GrayImage& img);

// 16-bit PGM carrying a probability map: p = value / 65535.
ProbabilityMap load_prob_pgm16(const std::string& path);
void save_prob_pgm16(const std::string& path, const ProbabilityMap& map);

// Grayscale PFM (float32, bottom-up rows, negative scale = little endian).
ProbabilityMap load_pfm(const std::string& path);
void save_pfm(const std::string& path, const ProbabilityMap& map);

// P4 packed PBM; a set bit means face.
BinaryMask load_pbm(const std::string& path);
void save_pbm(const std::string& path, const BinaryMask& mask);

// 8-bit grayscale PNG (zlib-deflated); used for mask export (face = 255).
void save_png_gray(const std::string& path, const GrayImage& img);
void save_mask_png(const std::string& path, const BinaryMask& mask);

} // namespace facecap

#endif
