#include "mmreg/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <string>

#include "mmreg/augment.hpp"
#include "mmreg/error.hpp"
#include "mmreg/rng.hpp"

namespace mmreg {

namespace {

// Sub-stream indices of a phantom seed.
enum Stream : std::uint64_t { kBlobs = 0, kTextureA = 1, kTextureB = 2, kArtifacts = 3, kDeform = 4 };

constexpr double kTissueLevel = 0.3;
constexpr double kFatLevel = 0.5;
constexpr double kEdgeSoftness = 0.01;
constexpr double kSecondModalityNoise = 0.02;

// Zero-mean, unit-std noise band-limited by a Gaussian of std `scale`.
GrayImage band_limited_noise(std::size_t w, std::size_t h, double scale, std::uint64_t seed) {
    Xoshiro256pp rng(seed);
    GrayImage noise(w, h);
    for (double& v : noise.data()) v = rng.normal();
    GrayImage smooth = gaussian_blur(noise, scale);
    double mean = 0.0;
    for (double v : smooth.data()) mean += v;
    mean /= static_cast<double>(smooth.size());
    double var = 0.0;
    for (double v : smooth.data()) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(smooth.size()));
    for (double& v : smooth.data()) v = sd > 0.0 ? (v - mean) / sd : 0.0;
    return smooth;
}

double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
    const double vx = bx - ax, vy = by - ay;
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0.0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = px - (ax + t * vx), dy = py - (ay + t * vy);
    return std::sqrt(dx * dx + dy * dy);
}

} // namespace

Artifact Artifact::parse(const std::string& text) {
    if (text == "none") return none();
    const auto c1 = text.find(':');
    const auto c2 = c1 == std::string::npos ? std::string::npos : text.find(':', c1 + 1);
    if (c2 == std::string::npos) {
        throw ParameterError("artifact must be none, tears:<count>:<width> or holes:<count>:<radius>");
    }
    const std::string kind = text.substr(0, c1);
    std::size_t count = 0;
    double size = 0.0;
    try {
        count = std::stoul(text.substr(c1 + 1, c2 - c1 - 1));
        size = std::stod(text.substr(c2 + 1));
    } catch (const std::exception&) {
        throw ParameterError("artifact: malformed numbers in '" + text + "'");
    }
    if (kind == "tears") return tears(count, size);
    if (kind == "holes") return holes(count, size);
    throw ParameterError("artifact: unknown kind '" + kind + "'");
}

void PhantomParams::validate() const {
    if (width < 32 || height < 32) {
        throw ParameterError("PhantomParams: dimensions must be at least 32");
    }
    if (blob_count < 1) {
        throw ParameterError("PhantomParams: blob_count must be at least 1");
    }
    if (!(texture_scale > 0.0)) {
        throw ParameterError("PhantomParams: texture_scale must be positive");
    }
    if (modality_map.size() < 2) {
        throw ParameterError("PhantomParams: modality_map needs at least two knots");
    }
    for (std::size_t i = 1; i < modality_map.size(); ++i) {
        if (!(modality_map[i].first > modality_map[i - 1].first)) {
            throw ParameterError("PhantomParams: modality_map knots must be strictly increasing in input");
        }
        if (modality_map[i].second < modality_map[i - 1].second) {
            throw ParameterError("PhantomParams: modality_map must be monotone nondecreasing");
        }
    }
    if (artifact.kind != Artifact::Kind::none && !(artifact.size > 0.0)) {
        throw ParameterError("PhantomParams: artifact size must be positive");
    }
    deform.validate();
}

double apply_remap(const std::vector<std::pair<double, double>>& knots, double v) {
    if (v <= knots.front().first) return std::clamp(knots.front().second, 0.0, 1.0);
    if (v >= knots.back().first) return std::clamp(knots.back().second, 0.0, 1.0);
    for (std::size_t i = 1; i < knots.size(); ++i) {
        if (v <= knots[i].first) {
            const auto& [x0, y0] = knots[i - 1];
            const auto& [x1, y1] = knots[i];
            return std::clamp(y0 + (v - x0) * (y1 - y0) / (x1 - x0), 0.0, 1.0);
        }
    }
    return std::clamp(knots.back().second, 0.0, 1.0);
}

GrayImage phantom_base(const PhantomParams& p) {
    p.validate();
    const std::size_t w = p.width, h = p.height;
    const double extent = static_cast<double>(std::min(w, h));
    Xoshiro256pp rng(derive_seed(p.seed, kBlobs));
    GrayImage base(w, h);
    for (std::size_t k = 0; k < p.blob_count; ++k) {
        const double cx = rng.uniform(0.25, 0.75) * static_cast<double>(w);
        const double cy = rng.uniform(0.25, 0.75) * static_cast<double>(h);
        const double radius = rng.uniform(0.1, 0.2) * extent;
        const double amplitude = rng.uniform(0.5, 1.0);
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
                base(x, y) += amplitude * std::exp(-0.5 * (dx * dx + dy * dy) / (radius * radius));
            }
        }
    }
    // Fat lobules: smaller bumps carved out of the tissue as dark holes.
    GrayImage fat(w, h);
    for (std::size_t k = 0; k < 2 * p.blob_count; ++k) {
        const double cx = rng.uniform(0.15, 0.85) * static_cast<double>(w);
        const double cy = rng.uniform(0.15, 0.85) * static_cast<double>(h);
        const double radius = rng.uniform(0.03, 0.07) * extent;
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
                fat(x, y) = std::max(fat(x, y), std::exp(-0.5 * (dx * dx + dy * dy) / (radius * radius)));
            }
        }
    }
    const GrayImage texture = band_limited_noise(w, h, p.texture_scale, derive_seed(p.seed, kTextureA));
    const double peak = *std::max_element(base.data().begin(), base.data().end());
    auto soft_step = [](double v, double level) { return 1.0 / (1.0 + std::exp(-(v - level) / kEdgeSoftness)); };
    for (std::size_t i = 0; i < base.size(); ++i) {
        const double s = base[i] / peak;
        // Sharp-edged tissue support from the blob sum, minus the fat holes.
        const double tissue = soft_step(s, kTissueLevel) * (1.0 - soft_step(fat[i], kFatLevel));
        base[i] = tissue * (0.45 + 0.4 * s + 0.1 * texture[i]);
    }
    const auto [lo, hi] = std::minmax_element(base.data().begin(), base.data().end());
    const double min = *lo, range = *hi - *lo;
    for (double& v : base.data()) v = range > 0.0 ? (v - min) / range : 0.0;
    return base;
}

GrayImage phantom_second_modality(const GrayImage& base, const PhantomParams& p) {
    // An identity remap describes a single-modality pair: no second-modality texture either.
    const bool identity = std::all_of(p.modality_map.begin(), p.modality_map.end(),
                                      [](const auto& knot) { return knot.first == knot.second; });
    if (identity) {
        return base;
    }
    const GrayImage texture =
        band_limited_noise(base.width(), base.height(), p.texture_scale, derive_seed(p.seed, kTextureB));
    GrayImage out(base.width(), base.height());
    for (std::size_t i = 0; i < base.size(); ++i) {
        out[i] = std::clamp(apply_remap(p.modality_map, base[i]) + kSecondModalityNoise * texture[i], 0.0, 1.0);
    }
    return out;
}

BinaryMask artifact_mask(const PhantomParams& p) {
    const std::size_t w = p.width, h = p.height;
    BinaryMask mask(w, h);
    if (p.artifact.kind == Artifact::Kind::none || p.artifact.count == 0) {
        return mask;
    }
    Xoshiro256pp rng(derive_seed(p.seed, kArtifacts));
    const double fw = static_cast<double>(w), fh = static_cast<double>(h);
    const double extent = std::min(fw, fh);
    for (std::size_t k = 0; k < p.artifact.count; ++k) {
        if (p.artifact.kind == Artifact::Kind::holes) {
            const double cx = rng.uniform(0.2, 0.8) * fw, cy = rng.uniform(0.2, 0.8) * fh;
            for (std::size_t y = 0; y < h; ++y) {
                for (std::size_t x = 0; x < w; ++x) {
                    const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
                    if (dx * dx + dy * dy <= p.artifact.size * p.artifact.size) mask.set(y * w + x, true);
                }
            }
            continue;
        }
        // Tear: a 3-segment polyline wandering from a random start point.
        std::vector<std::pair<double, double>> pts;
        pts.emplace_back(rng.uniform(0.2, 0.8) * fw, rng.uniform(0.2, 0.8) * fh);
        double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
        for (int s = 0; s < 3; ++s) {
            heading += rng.uniform(-0.6, 0.6);
            const double len = rng.uniform(0.12, 0.25) * extent;
            pts.emplace_back(pts.back().first + len * std::cos(heading), pts.back().second + len * std::sin(heading));
        }
        const double half = 0.5 * p.artifact.size;
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                for (std::size_t s = 1; s < pts.size(); ++s) {
                    if (segment_distance(static_cast<double>(x), static_cast<double>(y), pts[s - 1].first,
                                         pts[s - 1].second, pts[s].first, pts[s].second) <= half) {
                        mask.set(y * w + x, true);
                        break;
                    }
                }
            }
        }
    }
    return mask;
}

PairRecord generate_phantom_pair(const PhantomParams& p) {
    p.validate();
    const GrayImage a = phantom_base(p);
    auto [fixed, field] = elastic_deform(a, p.deform);
    const BinaryMask tears = artifact_mask(p);
    for (std::size_t i = 0; i < fixed.size(); ++i) {
        if (tears[i]) fixed[i] = 0.0;
    }
    PairRecord rec;
    rec.fixed = std::move(fixed);
    rec.moving = phantom_second_modality(a, p);
    rec.label = a;
    rec.truth_field = std::move(field);
    rec.deform = p.deform;
    return rec;
}

EndpointError endpoint_error(const DisplacementField& pred, const DisplacementField& truth,
                             const std::optional<BinaryMask>& mask) {
    if (!pred.same_shape(truth)) {
        throw ParameterError("endpoint_error: dimension mismatch");
    }
    if (mask && (mask->width() != pred.width() || mask->height() != pred.height())) {
        throw ParameterError("endpoint_error: mask dimension mismatch");
    }
    std::vector<double> norms;
    norms.reserve(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (mask && !(*mask)[i]) continue;
        const double ex = pred.dx()[i] - truth.dx()[i];
        const double ey = pred.dy()[i] - truth.dy()[i];
        norms.push_back(std::sqrt(ex * ex + ey * ey));
    }
    if (norms.empty()) {
        throw ParameterError("endpoint_error: empty mask");
    }
    EndpointError e;
    double sum = 0.0;
    for (double v : norms) sum += v;
    e.mean = sum / static_cast<double>(norms.size());
    e.median = quantile(norms, 0.5);
    e.p95 = quantile(std::move(norms), 0.95);
    return e;
}

std::vector<PairRecord> generate_benchmark_set(std::size_t n, const BenchmarkOptions& options, std::uint64_t seed) {
    if (n == 0) {
        throw ParameterError("generate_benchmark_set: n must be at least 1");
    }
    std::vector<PairRecord> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint64_t record_seed = derive_seed(seed, i);
        const IntensityLevel& level = options.levels.level_for(i, n);
        PhantomParams p;
        p.width = options.width;
        p.height = options.height;
        p.artifact = options.artifact;
        p.seed = record_seed;
        p.deform = sample_deform_params(level, derive_seed(record_seed, kDeform));
        PairRecord rec = generate_phantom_pair(p);
        char id[32];
        std::snprintf(id, sizeof id, "%03zu", i);
        rec.id = id;
        rec.source_id = id;
        rec.level = level.level;
        out.push_back(std::move(rec));
    }
    return out;
}

} // namespace mmreg
