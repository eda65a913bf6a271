#include "mmreg/deform_params.hpp"

#include <charconv>
#include <cmath>
#include <string>

#include "mmreg/error.hpp"

namespace mmreg {

void DeformParams::validate() const {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) {
        throw ParameterError("DeformParams: sigma must be positive");
    }
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
        throw ParameterError("DeformParams: alpha must be nonnegative");
    }
    if (filter_size < 1 || filter_size % 2 == 0) {
        throw ParameterError("DeformParams: filter_size must be odd and >= 1, got " + std::to_string(filter_size));
    }
}

std::string_view to_string(Level level) {
    switch (level) {
    case Level::low:
        return "low";
    case Level::medium:
        return "medium";
    case Level::high:
        return "high";
    }
    return "unknown";
}

Level level_from_string(std::string_view name) {
    if (name == "low") return Level::low;
    if (name == "medium" || name == "med") return Level::medium;
    if (name == "high") return Level::high;
    throw ParameterError("unknown deformation level: " + std::string(name));
}

IntensityLevel IntensityLevel::defaults(Level level) {
    switch (level) {
    case Level::low:
        return {Level::low, {8.0, 12.0}, {12.0, 24.0}, {21}};
    case Level::medium:
        return {Level::medium, {6.0, 10.0}, {24.0, 48.0}, {21, 31}};
    case Level::high:
        return {Level::high, {4.0, 8.0}, {48.0, 96.0}, {31, 41}};
    }
    throw ParameterError("unknown deformation level");
}

void IntensityLevel::validate() const {
    if (!(sigma_range.first > 0.0) || sigma_range.second < sigma_range.first) {
        throw ParameterError("IntensityLevel: invalid sigma range");
    }
    if (!(alpha_range.first >= 0.0) || alpha_range.second < alpha_range.first) {
        throw ParameterError("IntensityLevel: invalid alpha range");
    }
    if (filter_choices.empty()) {
        throw ParameterError("IntensityLevel: no filter sizes");
    }
    for (int f : filter_choices) {
        if (f < 1 || f % 2 == 0) {
            throw ParameterError("IntensityLevel: filter sizes must be odd and >= 1");
        }
    }
}

LevelMix LevelMix::parse(std::string_view text) {
    LevelMix mix;
    std::size_t start = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        const std::size_t end = text.find(':', start);
        if ((i < 2) == (end == std::string_view::npos)) {
            throw ParameterError("level mix must look like low:medium:high, got '" + std::string(text) + "'");
        }
        const std::string part(text.substr(start, end == std::string_view::npos ? text.size() - start : end - start));
        try {
            std::size_t used = 0;
            mix.weights[i] = std::stod(part, &used);
            if (used != part.size()) throw std::invalid_argument(part);
        } catch (const std::exception&) {
            throw ParameterError("level mix: not a number: '" + part + "'");
        }
        if (!(mix.weights[i] >= 0.0)) {
            throw ParameterError("level mix: proportions must be nonnegative");
        }
        start = end + 1;
    }
    if (mix.weights[0] + mix.weights[1] + mix.weights[2] <= 0.0) {
        throw ParameterError("level mix: proportions must not all be zero");
    }
    return mix;
}

const IntensityLevel& LevelMix::level_for(std::size_t index, std::size_t count) const {
    const double total = weights[0] + weights[1] + weights[2];
    const double u = (static_cast<double>(index) + 0.5) / static_cast<double>(count);
    double cumulative = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        cumulative += weights[i] / total;
        if (u < cumulative && weights[i] > 0.0) {
            return levels[i];
        }
    }
    for (std::size_t i = 3; i-- > 0;) {
        if (weights[i] > 0.0) return levels[i];
    }
    return levels[2];
}

} // namespace mmreg
