#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "mmreg/deform_params.hpp"
#include "mmreg/evalstats.hpp"
#include "mmreg/field.hpp"
#include "mmreg/record.hpp"

namespace mmreg {

struct Artifact {
    enum class Kind { none, tears, holes } kind = Kind::none;
    std::size_t count = 0;
    double size = 0.0;  ///< Streak width (tears) or disc radius (holes), in pixels.

    static Artifact none() { return {}; }
    static Artifact tears(std::size_t count, double width) { return {Kind::tears, count, width}; }
    static Artifact holes(std::size_t count, double radius) { return {Kind::holes, count, radius}; }
    /// "none", "tears:<count>:<width>" or "holes:<count>:<radius>".
    static Artifact parse(const std::string& text);
};

struct PhantomParams {
    std::size_t width = 128;
    std::size_t height = 96;
    std::size_t blob_count = 8;
    double texture_scale = 1.5;  ///< Std (px) of the Gaussian that band-limits the texture noise.
    /// Knots (input, output) of the monotone remap producing the second modality.
    std::vector<std::pair<double, double>> modality_map{{0.0, 0.1}, {0.3, 0.55}, {0.6, 0.7}, {1.0, 0.95}};
    Artifact artifact;
    DeformParams deform;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Piecewise-linear interpolation through the knots, clamped to [0, 1].
double apply_remap(const std::vector<std::pair<double, double>>& knots, double v);

/// Pixels zeroed by the artifact model of `p` (all false for Artifact::none).
BinaryMask artifact_mask(const PhantomParams& p);

/// Blob-and-texture base image A (the histology-side modality), in [0, 1].
GrayImage phantom_base(const PhantomParams& p);

/// Second modality B: remapped A plus independent mild texture. An identity
/// remap returns A unchanged.
GrayImage phantom_second_modality(const GrayImage& base, const PhantomParams& p);

/// fixed = elastic_deform(A) with artifacts zeroed in, moving = B, label = A.
PairRecord generate_phantom_pair(const PhantomParams& p);

struct EndpointError {
    double mean = 0.0;
    double median = 0.0;
    double p95 = 0.0;
};

/// Statistics of |pred - truth| per pixel, over `mask` when given.
EndpointError endpoint_error(const DisplacementField& pred, const DisplacementField& truth,
                             const std::optional<BinaryMask>& mask = std::nullopt);

struct BenchmarkOptions {
    std::size_t width = 128;
    std::size_t height = 96;
    LevelMix levels;
    Artifact artifact;
};

/// n phantom pairs with per-record derived seeds; record ids are zero-padded indices.
std::vector<PairRecord> generate_benchmark_set(std::size_t n, const BenchmarkOptions& options, std::uint64_t seed);

} // namespace mmreg
