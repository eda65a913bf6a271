#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <vector>

namespace mmreg {

/// Row-major single channel raster. Intensities live in [0, 1]; 8-bit only
/// at file boundaries.
class GrayImage {
public:
    GrayImage() = default;
    GrayImage(std::size_t width, std::size_t height, double fill = 0.0);
    GrayImage(std::size_t width, std::size_t height, std::vector<double> data);

    std::size_t width() const { return width_; }
    std::size_t height() const { return height_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t x, std::size_t y) { return data_[y * width_ + x]; }
    double operator()(std::size_t x, std::size_t y) const { return data_[y * width_ + x]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    bool same_shape(const GrayImage& other) const {
        return width_ == other.width_ && height_ == other.height_;
    }

    friend bool operator==(const GrayImage&, const GrayImage&) = default;

private:
    std::size_t width_ = 0;
    std::size_t height_ = 0;
    std::vector<double> data_;
};

/// Row-major interleaved RGB triples in [0, 1].
class RgbImage {
public:
    RgbImage() = default;
    RgbImage(std::size_t width, std::size_t height);
    RgbImage(std::size_t width, std::size_t height, std::vector<double> data);

    std::size_t width() const { return width_; }
    std::size_t height() const { return height_; }
    std::size_t pixel_count() const { return width_ * height_; }

    double channel(std::size_t pixel, std::size_t c) const { return data_[3 * pixel + c]; }
    double& channel(std::size_t pixel, std::size_t c) { return data_[3 * pixel + c]; }

    const std::vector<double>& data() const { return data_; }

private:
    std::size_t width_ = 0;
    std::size_t height_ = 0;
    std::vector<double> data_;
};

using ChannelWeights = std::array<double, 3>;

inline constexpr ChannelWeights kLumaWeights{0.299, 0.587, 0.114};

/// Decodes an 8-bit RGB or RGBA PNG; alpha is dropped.
RgbImage load_png(const std::filesystem::path& path);

/// Binary PGM (P5, maxval 255). Values are rounded to the nearest byte.
void save_pgm(const GrayImage& img, const std::filesystem::path& path);
GrayImage load_pgm(const std::filesystem::path& path);

/// Loads a grayscale image from .pgm, or from .png using `weights`.
GrayImage load_gray(const std::filesystem::path& path, const ChannelWeights& weights = kLumaWeights);

GrayImage to_gray_weighted(const RgbImage& img, const ChannelWeights& weights = kLumaWeights);

/// HSV saturation (max - min) / max, with 0 for black pixels.
GrayImage to_gray_saturation(const RgbImage& img);

/// Bilinear resampling with the align-corners convention: target index i maps
/// to source coordinate i * (src - 1) / (dst - 1), or the source centre when dst = 1.
GrayImage resize_bilinear(const GrayImage& img, std::size_t out_w, std::size_t out_h);

/// Separable Gaussian blur with clamp-to-edge borders, kernel truncated at 3 sigma.
GrayImage gaussian_blur(const GrayImage& img, double sigma);

} // namespace mmreg
