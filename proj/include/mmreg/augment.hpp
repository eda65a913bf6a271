#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "mmreg/deform_params.hpp"
#include "mmreg/field.hpp"
#include "mmreg/image.hpp"
#include "mmreg/record.hpp"

namespace mmreg {

/// i.i.d. U(-1, 1) displacements from xoshiro256++: the dx raster is drawn
/// first in row-major order, then the dy raster.
DisplacementField random_unit_field(std::size_t width, std::size_t height, std::uint64_t seed);

/// Normalized, truncated 2D Gaussian of width `filter_size` (row-major, sums to 1).
std::vector<double> gaussian_kernel(int filter_size, double sigma);

/// Convolves dx and dy with gaussian_kernel(params.filter_size, params.sigma),
/// clamp-to-edge borders.
DisplacementField gaussian_smooth_field(const DisplacementField& phi, const DeformParams& params);

struct ElasticResult {
    GrayImage image;
    DisplacementField field;
};

/// field = alpha * smooth(random_unit_field(seed)); image = warp(img, field).
ElasticResult elastic_deform(const GrayImage& img, const DeformParams& params);

DeformParams sample_deform_params(const IntensityLevel& level, std::uint64_t seed);

enum class AugmentMode { unsupervised, supervised };

/// Emits `per_pair` deformed records per input. Unsupervised: the fixed
/// (histology-side) image is deformed. Supervised: the moving (snapshot-side)
/// image is deformed and the original moving image becomes the label.
std::vector<PairRecord> build_augmented_set(const std::vector<PairRecord>& pairs, std::size_t per_pair,
                                            const LevelMix& levels, std::uint64_t seed, AugmentMode mode);

} // namespace mmreg
