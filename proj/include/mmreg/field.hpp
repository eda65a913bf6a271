#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "mmreg/image.hpp"

namespace mmreg {

/// Dense per-pixel displacement (dx, dy) in pixel units. Sampling position of
/// output pixel (x, y) is (x + dx, y + dy).
class DisplacementField {
public:
    DisplacementField() = default;
    DisplacementField(std::size_t width, std::size_t height);
    DisplacementField(std::size_t width, std::size_t height, std::vector<double> dx, std::vector<double> dy);

    std::size_t width() const { return width_; }
    std::size_t height() const { return height_; }
    std::size_t size() const { return dx_.size(); }

    double& dx(std::size_t x, std::size_t y) { return dx_[y * width_ + x]; }
    double& dy(std::size_t x, std::size_t y) { return dy_[y * width_ + x]; }
    double dx(std::size_t x, std::size_t y) const { return dx_[y * width_ + x]; }
    double dy(std::size_t x, std::size_t y) const { return dy_[y * width_ + x]; }

    std::vector<double>& dx() { return dx_; }
    std::vector<double>& dy() { return dy_; }
    const std::vector<double>& dx() const { return dx_; }
    const std::vector<double>& dy() const { return dy_; }

    template <typename Shape>
    bool same_shape(const Shape& other) const {
        return width_ == other.width() && height_ == other.height();
    }

    /// Largest absolute component over both rasters.
    double max_abs() const;
    bool all_finite() const;

    friend bool operator==(const DisplacementField&, const DisplacementField&) = default;

private:
    std::size_t width_ = 0;
    std::size_t height_ = 0;
    std::vector<double> dx_;
    std::vector<double> dy_;
};

DisplacementField identity_field(std::size_t width, std::size_t height);

/// Bilinear sample with clamp-to-edge indices.
double sample_bilinear(const std::vector<double>& raster, std::size_t width, std::size_t height, double x,
                       double y);

/// M(phi): bilinear resampling of `img` at the displaced grid, border clamped.
GrayImage warp_bilinear(const GrayImage& img, const DisplacementField& phi);

/// Gradient of a scalar loss with respect to phi, given the loss gradient with
/// respect to warp_bilinear(img, phi). At integer-aligned sample positions the
/// right-sided derivative is used.
DisplacementField warp_backward(const GrayImage& img, const DisplacementField& phi, const GrayImage& upstream);

/// Resizes both components (align-corners bilinear) and rescales them to the
/// new pixel units.
DisplacementField upsample_field(const DisplacementField& phi, std::size_t out_w, std::size_t out_h);

/// Field equivalent to warping by `outer` first and `inner` second:
/// out(p) = inner(p) + outer(p + inner(p)).
DisplacementField compose_fields(const DisplacementField& outer, const DisplacementField& inner);

DisplacementField operator+(const DisplacementField& a, const DisplacementField& b);
DisplacementField operator*(double s, const DisplacementField& f);

/// DDF1 container: "DDF1", u32 width, u32 height, dx then dy as f32, all little-endian.
void save_ddf(const DisplacementField& phi, const std::filesystem::path& path);
DisplacementField load_ddf(const std::filesystem::path& path);

} // namespace mmreg
