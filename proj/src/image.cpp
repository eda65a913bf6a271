#include "mmreg/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>

#include "mmreg/error.hpp"

namespace mmreg {

GrayImage::GrayImage(std::size_t width, std::size_t height, double fill)
    : width_(width), height_(height), data_(width * height, fill) {}

GrayImage::GrayImage(std::size_t width, std::size_t height, std::vector<double> data)
    : width_(width), height_(height), data_(std::move(data)) {
    if (data_.size() != width_ * height_) {
        throw ParameterError("GrayImage: data length does not match width * height");
    }
}

RgbImage::RgbImage(std::size_t width, std::size_t height)
    : width_(width), height_(height), data_(3 * width * height, 0.0) {}

RgbImage::RgbImage(std::size_t width, std::size_t height, std::vector<double> data)
    : width_(width), height_(height), data_(std::move(data)) {
    if (data_.size() != 3 * width_ * height_) {
        throw ParameterError("RgbImage: data length does not match width * height * 3");
    }
}

RgbImage load_png(const std::filesystem::path& path) {
    const std::string name = path.string();
    if (!std::filesystem::exists(path)) {
        throw IoError("load_png: no such file: " + name);
    }

    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (png_image_begin_read_from_file(&image, name.c_str()) == 0) {
        throw DataError("load_png: cannot decode " + name + ": " + image.message);
    }
    const auto fmt = image.format;
    if ((fmt & PNG_FORMAT_FLAG_LINEAR) != 0 || (fmt & PNG_FORMAT_FLAG_COLOR) == 0 ||
        (fmt & PNG_FORMAT_FLAG_COLORMAP) != 0) {
        png_image_free(&image);
        throw DataError("load_png: " + name + " is not an 8-bit RGB/RGBA image");
    }

    // Read with alpha and drop it ourselves; asking for RGB would composite onto black.
    image.format = PNG_FORMAT_RGBA;
    std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
    if (png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr) == 0) {
        throw DataError("load_png: cannot decode " + name + ": " + image.message);
    }

    const std::size_t pixels = static_cast<std::size_t>(image.width) * image.height;
    std::vector<double> data(3 * pixels);
    for (std::size_t i = 0; i < pixels; ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
            data[3 * i + c] = static_cast<double>(buffer[4 * i + c]) / 255.0;
        }
    }
    return RgbImage(image.width, image.height, std::move(data));
}

void save_pgm(const GrayImage& img, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("save_pgm: cannot open " + path.string() + " for writing");
    }
    out << "P5\n" << img.width() << ' ' << img.height() << "\n255\n";
    std::vector<char> payload(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) {
        const double v = std::clamp(img[i], 0.0, 1.0);
        payload[i] = static_cast<char>(static_cast<std::uint8_t>(std::lround(v * 255.0)));
    }
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) {
        throw IoError("save_pgm: write failed for " + path.string());
    }
}

namespace {

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::istream& in) {
    std::string token;
    char c;
    while (in.get(c)) {
        if (c == '#') {
            std::string ignored;
            std::getline(in, ignored);
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(c)) != 0) {
            if (!token.empty()) {
                break;
            }
            continue;
        }
        token.push_back(c);
    }
    return token;
}

} // namespace

GrayImage load_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("load_pgm: cannot open " + path.string());
    }
    if (next_token(in) != "P5") {
        throw DataError("load_pgm: " + path.string() + " is not a binary PGM");
    }
    std::size_t w = 0, h = 0, maxval = 0;
    try {
        w = std::stoul(next_token(in));
        h = std::stoul(next_token(in));
        maxval = std::stoul(next_token(in));
    } catch (const std::exception&) {
        throw DataError("load_pgm: malformed header in " + path.string());
    }
    if (maxval != 255 || w == 0 || h == 0) {
        throw DataError("load_pgm: unsupported header in " + path.string());
    }
    std::vector<char> payload(w * h);
    in.read(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (in.gcount() != static_cast<std::streamsize>(payload.size())) {
        throw DataError("load_pgm: truncated payload in " + path.string());
    }
    std::vector<double> data(w * h);
    for (std::size_t i = 0; i < data.size(); ++i) {
        data[i] = static_cast<double>(static_cast<std::uint8_t>(payload[i])) / 255.0;
    }
    return GrayImage(w, h, std::move(data));
}

GrayImage load_gray(const std::filesystem::path& path, const ChannelWeights& weights) {
    auto ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".pgm") {
        return load_pgm(path);
    }
    return to_gray_weighted(load_png(path), weights);
}

GrayImage to_gray_weighted(const RgbImage& img, const ChannelWeights& weights) {
    double sum = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) {
            throw ParameterError("to_gray_weighted: weights must be nonnegative");
        }
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw ParameterError("to_gray_weighted: weights must sum to 1");
    }
    GrayImage out(img.width(), img.height());
    for (std::size_t p = 0; p < img.pixel_count(); ++p) {
        const double v = weights[0] * img.channel(p, 0) + weights[1] * img.channel(p, 1) +
                         weights[2] * img.channel(p, 2);
        out[p] = std::clamp(v, 0.0, 1.0);
    }
    return out;
}

GrayImage to_gray_saturation(const RgbImage& img) {
    GrayImage out(img.width(), img.height());
    for (std::size_t p = 0; p < img.pixel_count(); ++p) {
        const double r = img.channel(p, 0), g = img.channel(p, 1), b = img.channel(p, 2);
        const double hi = std::max({r, g, b});
        const double lo = std::min({r, g, b});
        out[p] = hi > 0.0 ? (hi - lo) / hi : 0.0;
    }
    return out;
}

namespace {

// Source coordinate for target index i under align-corners.
double source_coord(std::size_t i, std::size_t src, std::size_t dst) {
    if (dst == 1) {
        return 0.5 * static_cast<double>(src - 1);
    }
    return static_cast<double>(i) * static_cast<double>(src - 1) / static_cast<double>(dst - 1);
}

} // namespace

GrayImage resize_bilinear(const GrayImage& img, std::size_t out_w, std::size_t out_h) {
    if (out_w == 0 || out_h == 0) {
        throw ParameterError("resize_bilinear: target dimensions must be at least 1");
    }
    if (img.empty()) {
        throw ParameterError("resize_bilinear: empty source image");
    }
    if (out_w == img.width() && out_h == img.height()) {
        return img;
    }
    const std::size_t sw = img.width(), sh = img.height();
    GrayImage out(out_w, out_h);
    for (std::size_t y = 0; y < out_h; ++y) {
        const double sy = source_coord(y, sh, out_h);
        const auto y0 = std::min(static_cast<std::size_t>(sy), sh - 1);
        const std::size_t y1 = std::min(y0 + 1, sh - 1);
        const double fy = sy - static_cast<double>(y0);
        for (std::size_t x = 0; x < out_w; ++x) {
            const double sx = source_coord(x, sw, out_w);
            const auto x0 = std::min(static_cast<std::size_t>(sx), sw - 1);
            const std::size_t x1 = std::min(x0 + 1, sw - 1);
            const double fx = sx - static_cast<double>(x0);
            const double top = (1.0 - fx) * img(x0, y0) + fx * img(x1, y0);
            const double bottom = (1.0 - fx) * img(x0, y1) + fx * img(x1, y1);
            out(x, y) = (1.0 - fy) * top + fy * bottom;
        }
    }
    return out;
}

GrayImage gaussian_blur(const GrayImage& img, double sigma) {
    if (sigma <= 0.0) {
        return img;
    }
    const auto radius = static_cast<long>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double total = 0.0;
    for (long k = -radius; k <= radius; ++k) {
        const double w = std::exp(-0.5 * static_cast<double>(k * k) / (sigma * sigma));
        kernel[static_cast<std::size_t>(k + radius)] = w;
        total += w;
    }
    for (double& w : kernel) {
        w /= total;
    }

    const long w = static_cast<long>(img.width()), h = static_cast<long>(img.height());
    GrayImage tmp(img.width(), img.height());
    for (long y = 0; y < h; ++y) {
        for (long x = 0; x < w; ++x) {
            double acc = 0.0;
            for (long k = -radius; k <= radius; ++k) {
                const long sx = std::clamp(x + k, 0L, w - 1);
                acc += kernel[static_cast<std::size_t>(k + radius)] *
                       img(static_cast<std::size_t>(sx), static_cast<std::size_t>(y));
            }
            tmp(static_cast<std::size_t>(x), static_cast<std::size_t>(y)) = acc;
        }
    }
    GrayImage out(img.width(), img.height());
    for (long y = 0; y < h; ++y) {
        for (long x = 0; x < w; ++x) {
            double acc = 0.0;
            for (long k = -radius; k <= radius; ++k) {
                const long sy = std::clamp(y + k, 0L, h - 1);
                acc += kernel[static_cast<std::size_t>(k + radius)] *
                       tmp(static_cast<std::size_t>(x), static_cast<std::size_t>(sy));
            }
            out(static_cast<std::size_t>(x), static_cast<std::size_t>(y)) = acc;
        }
    }
    return out;
}

} // namespace mmreg
