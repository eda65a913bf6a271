#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <string>
#include <vector>

#include <png.h>

#include "mmreg/error.hpp"
#include "mmreg/field.hpp"
#include "mmreg/image.hpp"
#include "mmreg/rng.hpp"

namespace testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::uint64_t counter = 0;
        mmreg::Xoshiro256pp rng(reinterpret_cast<std::uintptr_t>(this) ^ ++counter);
        path_ = std::filesystem::temp_directory_path() / ("mmreg_" + tag + "_" + std::to_string(rng() % 1000000007));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline mmreg::GrayImage random_image(std::size_t w, std::size_t h, std::uint64_t seed) {
    mmreg::Xoshiro256pp rng(seed);
    mmreg::GrayImage img(w, h);
    for (auto& v : img.data()) v = rng.uniform01();
    return img;
}

/// Random field with components uniform in (-amp, amp), shifted away from integer offsets.
inline mmreg::DisplacementField random_field(std::size_t w, std::size_t h, double amp, std::uint64_t seed) {
    mmreg::Xoshiro256pp rng(seed);
    mmreg::DisplacementField f(w, h);
    auto jitter = [&] {
        double v = rng.uniform(-amp, amp);
        const double frac = v - std::floor(v);
        if (frac < 0.05 || frac > 0.95) v += 0.1;
        return v;
    };
    for (auto& v : f.dx()) v = jitter();
    for (auto& v : f.dy()) v = jitter();
    return f;
}

/// Writes an 8-bit PNG (RGB or RGBA, chosen by channels) with libpng's simplified API.
inline void write_png(const std::filesystem::path& path, std::size_t w, std::size_t h,
                      const std::vector<std::uint8_t>& bytes, int channels) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(w);
    image.height = static_cast<png_uint_32>(h);
    image.format = channels == 4 ? PNG_FORMAT_RGBA : (channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB);
    if (!png_image_write_to_file(&image, path.c_str(), 0, bytes.data(), 0, nullptr)) {
        throw std::runtime_error("test fixture: cannot write " + path.string());
    }
}

inline std::vector<char> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& path, const std::vector<char>& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

/// Relative error with an absolute floor so near-zero derivatives do not blow up.
inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline double central_difference(const std::function<double(double)>& f, double x, double h = 1e-5) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

} // namespace testing
