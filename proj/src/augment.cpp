#include "mmreg/augment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "mmreg/error.hpp"
#include "mmreg/rng.hpp"

namespace mmreg {

DisplacementField random_unit_field(std::size_t width, std::size_t height, std::uint64_t seed) {
    Xoshiro256pp rng(seed);
    DisplacementField phi(width, height);
    for (double& v : phi.dx()) v = rng.uniform(-1.0, 1.0);
    for (double& v : phi.dy()) v = rng.uniform(-1.0, 1.0);
    return phi;
}

namespace {

std::vector<double> gaussian_kernel_1d(int filter_size, double sigma) {
    const int radius = filter_size / 2;
    std::vector<double> k(static_cast<std::size_t>(filter_size));
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double w = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
        k[static_cast<std::size_t>(i + radius)] = w;
        total += w;
    }
    for (double& w : k) w /= total;
    return k;
}

// Separable pass along x (step 1) or y (step width) with clamped indices.
std::vector<double> convolve_axis(const std::vector<double>& src, std::size_t width, std::size_t height,
                                  const std::vector<double>& kernel, bool along_x) {
    const long radius = static_cast<long>(kernel.size() / 2);
    const long w = static_cast<long>(width), h = static_cast<long>(height);
    std::vector<double> out(src.size());
    for (long y = 0; y < h; ++y) {
        for (long x = 0; x < w; ++x) {
            double acc = 0.0;
            for (long k = -radius; k <= radius; ++k) {
                const long sx = along_x ? std::clamp(x + k, 0L, w - 1) : x;
                const long sy = along_x ? y : std::clamp(y + k, 0L, h - 1);
                acc += kernel[static_cast<std::size_t>(k + radius)] * src[static_cast<std::size_t>(sy * w + sx)];
            }
            out[static_cast<std::size_t>(y * w + x)] = acc;
        }
    }
    return out;
}

std::vector<double> smooth_raster(const std::vector<double>& src, std::size_t width, std::size_t height,
                                  const std::vector<double>& kernel) {
    return convolve_axis(convolve_axis(src, width, height, kernel, true), width, height, kernel, false);
}

} // namespace

std::vector<double> gaussian_kernel(int filter_size, double sigma) {
    DeformParams{sigma, 0.0, filter_size, 0}.validate();
    const auto k1 = gaussian_kernel_1d(filter_size, sigma);
    std::vector<double> k2(k1.size() * k1.size());
    for (std::size_t r = 0; r < k1.size(); ++r) {
        for (std::size_t c = 0; c < k1.size(); ++c) {
            k2[r * k1.size() + c] = k1[r] * k1[c];
        }
    }
    return k2;
}

DisplacementField gaussian_smooth_field(const DisplacementField& phi, const DeformParams& params) {
    params.validate();
    // The 2D kernel is the outer product of the normalized 1D kernel, so two
    // 1D passes give the same convolution.
    const auto kernel = gaussian_kernel_1d(params.filter_size, params.sigma);
    return DisplacementField(phi.width(), phi.height(), smooth_raster(phi.dx(), phi.width(), phi.height(), kernel),
                             smooth_raster(phi.dy(), phi.width(), phi.height(), kernel));
}

ElasticResult elastic_deform(const GrayImage& img, const DeformParams& params) {
    params.validate();
    if (img.empty()) {
        throw ParameterError("elastic_deform: empty image");
    }
    if (params.alpha == 0.0) {
        return {img, identity_field(img.width(), img.height())};
    }
    DisplacementField field =
        params.alpha * gaussian_smooth_field(random_unit_field(img.width(), img.height(), params.seed), params);
    GrayImage warped = warp_bilinear(img, field);
    return {std::move(warped), std::move(field)};
}

DeformParams sample_deform_params(const IntensityLevel& level, std::uint64_t seed) {
    level.validate();
    Xoshiro256pp rng(seed);
    DeformParams p;
    p.sigma = rng.uniform(level.sigma_range.first, level.sigma_range.second);
    p.alpha = rng.uniform(level.alpha_range.first, level.alpha_range.second);
    p.filter_size = level.filter_choices[rng.below(level.filter_choices.size())];
    p.seed = rng();
    return p;
}

std::vector<PairRecord> build_augmented_set(const std::vector<PairRecord>& pairs, std::size_t per_pair,
                                            const LevelMix& levels, std::uint64_t seed, AugmentMode mode) {
    if (pairs.empty()) {
        throw ParameterError("build_augmented_set: no input pairs");
    }
    if (per_pair == 0) {
        throw ParameterError("build_augmented_set: per_pair must be at least 1");
    }
    std::vector<PairRecord> out;
    out.reserve(pairs.size() * per_pair);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const PairRecord& src = pairs[i];
        src.validate();
        for (std::size_t j = 0; j < per_pair; ++j) {
            const std::uint64_t record_seed = derive_seed(seed, i * per_pair + j);
            const IntensityLevel& level = levels.level_for(j, per_pair);
            const DeformParams params = sample_deform_params(level, record_seed);

            PairRecord rec;
            char suffix[32];
            std::snprintf(suffix, sizeof suffix, "_a%02zu", j);
            rec.id = src.id + suffix;
            rec.source_id = src.source_id.empty() ? src.id : src.source_id;
            rec.deform = params;
            rec.level = level.level;
            if (mode == AugmentMode::unsupervised) {
                auto [image, field] = elastic_deform(src.fixed, params);
                rec.fixed = std::move(image);
                rec.moving = src.moving;
                rec.truth_field = std::move(field);
            } else {
                auto [image, field] = elastic_deform(src.moving, params);
                rec.fixed = src.fixed;
                rec.moving = std::move(image);
                rec.label = src.moving;
                rec.truth_field = std::move(field);
            }
            out.push_back(std::move(rec));
        }
    }
    return out;
}

} // namespace mmreg
