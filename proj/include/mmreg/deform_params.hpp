#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mmreg {

/// Parameters of one synthetic elastic deformation.
struct DeformParams {
    double sigma = 8.0;      ///< Gaussian std in pixels (elasticity coefficient).
    double alpha = 0.0;      ///< Displacement scale in pixels.
    int filter_size = 21;    ///< Odd kernel width in pixels.
    std::uint64_t seed = 0;

    /// Throws ParameterError unless sigma > 0, alpha >= 0 and filter_size is odd and >= 1.
    void validate() const;

    friend bool operator==(const DeformParams&, const DeformParams&) = default;
};

enum class Level { low, medium, high };

std::string_view to_string(Level level);
Level level_from_string(std::string_view name);

/// Sampling ranges for DeformParams at one deformation intensity.
struct IntensityLevel {
    Level level = Level::low;
    std::pair<double, double> sigma_range;
    std::pair<double, double> alpha_range;
    std::vector<int> filter_choices;

    static IntensityLevel defaults(Level level);
    void validate() const;
};

/// Relative proportions of low / medium / high records, e.g. 40:40:20.
struct LevelMix {
    std::array<double, 3> weights{0.4, 0.4, 0.2};
    std::array<IntensityLevel, 3> levels{IntensityLevel::defaults(Level::low),
                                         IntensityLevel::defaults(Level::medium),
                                         IntensityLevel::defaults(Level::high)};

    /// Parses "a:b:c" proportions (any nonnegative reals, not all zero).
    static LevelMix parse(std::string_view text);

    /// Deterministic proportional allocation: the level of slot `index` out of `count`.
    const IntensityLevel& level_for(std::size_t index, std::size_t count) const;
};

} // namespace mmreg
