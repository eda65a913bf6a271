#include "mmreg/field.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "mmreg/error.hpp"

namespace mmreg {

DisplacementField::DisplacementField(std::size_t width, std::size_t height)
    : width_(width), height_(height), dx_(width * height, 0.0), dy_(width * height, 0.0) {}

DisplacementField::DisplacementField(std::size_t width, std::size_t height, std::vector<double> dx,
                                     std::vector<double> dy)
    : width_(width), height_(height), dx_(std::move(dx)), dy_(std::move(dy)) {
    if (dx_.size() != width_ * height_ || dy_.size() != width_ * height_) {
        throw ParameterError("DisplacementField: raster length does not match width * height");
    }
}

double DisplacementField::max_abs() const {
    double m = 0.0;
    for (double v : dx_) m = std::max(m, std::abs(v));
    for (double v : dy_) m = std::max(m, std::abs(v));
    return m;
}

bool DisplacementField::all_finite() const {
    auto finite = [](double v) { return std::isfinite(v); };
    return std::all_of(dx_.begin(), dx_.end(), finite) && std::all_of(dy_.begin(), dy_.end(), finite);
}

DisplacementField identity_field(std::size_t width, std::size_t height) {
    return DisplacementField(width, height);
}

namespace {

struct Tap {
    std::size_t x0, x1, y0, y1;
    double fx, fy;
};

Tap locate(double x, double y, std::size_t width, std::size_t height) {
    const double fx0 = std::floor(x);
    const double fy0 = std::floor(y);
    const auto clampi = [](double v, std::size_t n) {
        return static_cast<std::size_t>(std::clamp(v, 0.0, static_cast<double>(n - 1)));
    };
    return Tap{clampi(fx0, width), clampi(fx0 + 1.0, width), clampi(fy0, height), clampi(fy0 + 1.0, height),
               x - fx0, y - fy0};
}

void require_same(const DisplacementField& a, std::size_t w, std::size_t h, const char* what) {
    if (a.width() != w || a.height() != h) {
        throw ParameterError(std::string(what) + ": dimension mismatch");
    }
}

} // namespace

double sample_bilinear(const std::vector<double>& raster, std::size_t width, std::size_t height, double x,
                       double y) {
    const Tap t = locate(x, y, width, height);
    const double v00 = raster[t.y0 * width + t.x0];
    const double v10 = raster[t.y0 * width + t.x1];
    const double v01 = raster[t.y1 * width + t.x0];
    const double v11 = raster[t.y1 * width + t.x1];
    return (1.0 - t.fy) * ((1.0 - t.fx) * v00 + t.fx * v10) + t.fy * ((1.0 - t.fx) * v01 + t.fx * v11);
}

GrayImage warp_bilinear(const GrayImage& img, const DisplacementField& phi) {
    require_same(phi, img.width(), img.height(), "warp_bilinear");
    const std::size_t w = img.width(), h = img.height();
    GrayImage out(w, h);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            out(x, y) = sample_bilinear(img.data(), w, h, static_cast<double>(x) + phi.dx(x, y),
                                        static_cast<double>(y) + phi.dy(x, y));
        }
    }
    return out;
}

DisplacementField warp_backward(const GrayImage& img, const DisplacementField& phi, const GrayImage& upstream) {
    require_same(phi, img.width(), img.height(), "warp_backward");
    require_same(phi, upstream.width(), upstream.height(), "warp_backward");
    const std::size_t w = img.width(), h = img.height();
    DisplacementField grad(w, h);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const double g = upstream(x, y);
            if (g == 0.0) {
                continue;
            }
            const double sx = static_cast<double>(x) + phi.dx(x, y);
            const double sy = static_cast<double>(y) + phi.dy(x, y);
            const Tap t = locate(sx, sy, w, h);
            // A coordinate past the border clamps both taps to the same pixel,
            // which makes the derivative along that axis vanish.
            const double v00 = img(t.x0, t.y0), v10 = img(t.x1, t.y0);
            const double v01 = img(t.x0, t.y1), v11 = img(t.x1, t.y1);
            const double d_dx = (1.0 - t.fy) * (v10 - v00) + t.fy * (v11 - v01);
            const double d_dy = (1.0 - t.fx) * (v01 - v00) + t.fx * (v11 - v10);
            grad.dx(x, y) = g * d_dx;
            grad.dy(x, y) = g * d_dy;
        }
    }
    return grad;
}

DisplacementField upsample_field(const DisplacementField& phi, std::size_t out_w, std::size_t out_h) {
    if (out_w == 0 || out_h == 0) {
        throw ParameterError("upsample_field: target dimensions must be at least 1");
    }
    if (out_w == phi.width() && out_h == phi.height()) {
        return phi;
    }
    const GrayImage dx = resize_bilinear(GrayImage(phi.width(), phi.height(), phi.dx()), out_w, out_h);
    const GrayImage dy = resize_bilinear(GrayImage(phi.width(), phi.height(), phi.dy()), out_w, out_h);
    const auto scale = [](std::size_t in, std::size_t out) {
        return (in > 1 && out > 1) ? static_cast<double>(out - 1) / static_cast<double>(in - 1) : 1.0;
    };
    const double sx = scale(phi.width(), out_w);
    const double sy = scale(phi.height(), out_h);
    DisplacementField out(out_w, out_h);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.dx()[i] = dx[i] * sx;
        out.dy()[i] = dy[i] * sy;
    }
    return out;
}

DisplacementField compose_fields(const DisplacementField& outer, const DisplacementField& inner) {
    require_same(outer, inner.width(), inner.height(), "compose_fields");
    const std::size_t w = inner.width(), h = inner.height();
    DisplacementField out(w, h);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const double px = static_cast<double>(x) + inner.dx(x, y);
            const double py = static_cast<double>(y) + inner.dy(x, y);
            out.dx(x, y) = inner.dx(x, y) + sample_bilinear(outer.dx(), w, h, px, py);
            out.dy(x, y) = inner.dy(x, y) + sample_bilinear(outer.dy(), w, h, px, py);
        }
    }
    return out;
}

DisplacementField operator+(const DisplacementField& a, const DisplacementField& b) {
    require_same(a, b.width(), b.height(), "field addition");
    DisplacementField out = a;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.dx()[i] += b.dx()[i];
        out.dy()[i] += b.dy()[i];
    }
    return out;
}

DisplacementField operator*(double s, const DisplacementField& f) {
    DisplacementField out = f;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.dx()[i] *= s;
        out.dy()[i] *= s;
    }
    return out;
}

namespace {

constexpr char kDdfMagic[4] = {'D', 'D', 'F', '1'};

void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFFU));
    }
}

void put_f32(std::string& buf, float f) { put_u32(buf, std::bit_cast<std::uint32_t>(f)); }

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

} // namespace

void save_ddf(const DisplacementField& phi, const std::filesystem::path& path) {
    std::string buf(kDdfMagic, 4);
    put_u32(buf, static_cast<std::uint32_t>(phi.width()));
    put_u32(buf, static_cast<std::uint32_t>(phi.height()));
    for (double v : phi.dx()) put_f32(buf, static_cast<float>(v));
    for (double v : phi.dy()) put_f32(buf, static_cast<float>(v));
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("save_ddf: cannot open " + path.string() + " for writing");
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) {
        throw IoError("save_ddf: write failed for " + path.string());
    }
}

DisplacementField load_ddf(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("load_ddf: cannot open " + path.string());
    }
    const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto* bytes = reinterpret_cast<const unsigned char*>(buf.data());
    if (buf.size() < 12 || std::memcmp(buf.data(), kDdfMagic, 4) != 0) {
        throw DataError("load_ddf: bad magic or header in " + path.string());
    }
    const std::size_t w = get_u32(bytes + 4);
    const std::size_t h = get_u32(bytes + 8);
    if (buf.size() != 12 + 8 * w * h) {
        throw DataError("load_ddf: truncated or oversized payload in " + path.string());
    }
    std::vector<double> dx(w * h), dy(w * h);
    const unsigned char* p = bytes + 12;
    for (std::size_t i = 0; i < w * h; ++i, p += 4) dx[i] = std::bit_cast<float>(get_u32(p));
    for (std::size_t i = 0; i < w * h; ++i, p += 4) dy[i] = std::bit_cast<float>(get_u32(p));
    DisplacementField phi(w, h, std::move(dx), std::move(dy));
    if (!phi.all_finite()) {
        throw DataError("load_ddf: non-finite displacement in " + path.string());
    }
    return phi;
}

} // namespace mmreg
