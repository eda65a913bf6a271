#include "mmreg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mmreg/error.hpp"

namespace mmreg {

void LossConfig::validate() const {
    if (!(lambda >= 0.0)) {
        throw ParameterError("LossConfig: lambda must be nonnegative");
    }
    if (bins < 2) {
        throw ParameterError("LossConfig: bins must be at least 2");
    }
    if (!(parzen_width > 0.0)) {
        throw ParameterError("LossConfig: parzen_width must be positive");
    }
}

namespace {

void require_same(const GrayImage& a, const GrayImage& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ParameterError(std::string(what) + ": dimension mismatch");
    }
}

std::size_t hard_bin(double v, std::size_t bins) {
    const double scaled = std::floor(v * static_cast<double>(bins));
    if (!(scaled > 0.0)) {
        return 0;
    }
    return std::min(static_cast<std::size_t>(scaled), bins - 1);
}

void fill_marginals(JointHistogram& h) {
    h.marginal_a.assign(h.bins, 0.0);
    h.marginal_b.assign(h.bins, 0.0);
    for (std::size_t i = 0; i < h.bins; ++i) {
        for (std::size_t j = 0; j < h.bins; ++j) {
            h.marginal_a[i] += h.at(i, j);
            h.marginal_b[j] += h.at(i, j);
        }
    }
}

// Sparse Parzen weights of one pixel over bins [first, first + weights.size()).
struct ParzenWeights {
    std::size_t first = 0;
    std::vector<double> weights;
    std::vector<double> dweights;  // d weight / d intensity
};

ParzenWeights parzen(double v, std::size_t bins, double width, bool with_derivative) {
    ParzenWeights pw;
    const double scale = static_cast<double>(bins - 1);
    const double c = v * scale;
    const double reach = 3.0 * width;
    const double lo = std::max(0.0, std::ceil(c - reach));
    const double hi = std::min(scale, std::floor(c + reach));
    if (lo > hi) {
        pw.first = static_cast<std::size_t>(std::clamp(std::round(c), 0.0, scale));
        pw.weights = {1.0};
        if (with_derivative) pw.dweights = {0.0};
        return pw;
    }
    pw.first = static_cast<std::size_t>(lo);
    const auto n = static_cast<std::size_t>(hi - lo) + 1;
    pw.weights.resize(n);
    double total = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double d = (lo + static_cast<double>(k)) - c;
        pw.weights[k] = std::exp(-0.5 * d * d / (width * width));
        total += pw.weights[k];
    }
    for (double& w : pw.weights) w /= total;
    if (with_derivative) {
        // w_k = g_k / sum g, dg_k/dc = g_k * (k - c) / width^2.
        double mean_slope = 0.0;
        std::vector<double> slope(n);
        for (std::size_t k = 0; k < n; ++k) {
            slope[k] = ((lo + static_cast<double>(k)) - c) / (width * width);
            mean_slope += pw.weights[k] * slope[k];
        }
        pw.dweights.resize(n);
        for (std::size_t k = 0; k < n; ++k) {
            pw.dweights[k] = pw.weights[k] * (slope[k] - mean_slope) * scale;
        }
    }
    return pw;
}

} // namespace

JointHistogram joint_histogram_hard(const GrayImage& a, const GrayImage& b, std::size_t bins) {
    require_same(a, b, "joint_histogram_hard");
    if (bins < 2) {
        throw ParameterError("joint_histogram_hard: bins must be at least 2");
    }
    JointHistogram h;
    h.bins = bins;
    h.counts.assign(bins * bins, 0.0);
    for (std::size_t p = 0; p < a.size(); ++p) {
        h.counts[hard_bin(a[p], bins) * bins + hard_bin(b[p], bins)] += 1.0;
    }
    h.total = static_cast<double>(a.size());
    fill_marginals(h);
    return h;
}

double mutual_information(const JointHistogram& hist) {
    if (hist.total <= 0.0) {
        return 0.0;
    }
    // Terms are summed in sorted order so that transposing the histogram
    // (swapping the two images) gives a bitwise-identical result.
    std::vector<double> terms;
    for (std::size_t i = 0; i < hist.bins; ++i) {
        if (hist.marginal_a[i] <= 0.0) continue;
        for (std::size_t j = 0; j < hist.bins; ++j) {
            const double c = hist.at(i, j);
            if (c <= 0.0) continue;
            terms.push_back(c * std::log(c * hist.total / (hist.marginal_a[i] * hist.marginal_b[j])));
        }
    }
    std::sort(terms.begin(), terms.end());
    double mi = 0.0;
    for (double t : terms) mi += t;
    return mi / hist.total;
}

double entropy(const std::vector<double>& counts) {
    double total = 0.0;
    for (double c : counts) total += c;
    if (total <= 0.0) return 0.0;
    double h = 0.0;
    for (double c : counts) {
        if (c > 0.0) {
            const double p = c / total;
            h -= p * std::log(p);
        }
    }
    return h;
}

double histogram_entropy(const GrayImage& img, std::size_t bins) {
    std::vector<double> counts(bins, 0.0);
    for (double v : img.data()) counts[hard_bin(v, bins)] += 1.0;
    return entropy(counts);
}

double hmi_hard(const GrayImage& a, const GrayImage& b, std::size_t bins) {
    return std::max(0.0, mutual_information(joint_histogram_hard(a, b, bins)));
}

JointHistogram joint_histogram_soft(const GrayImage& a, const GrayImage& b, std::size_t bins, double parzen_width) {
    require_same(a, b, "joint_histogram_soft");
    LossConfig{0.0, bins, parzen_width}.validate();
    JointHistogram h;
    h.bins = bins;
    h.counts.assign(bins * bins, 0.0);
    for (std::size_t p = 0; p < a.size(); ++p) {
        const ParzenWeights wa = parzen(a[p], bins, parzen_width, false);
        const ParzenWeights wb = parzen(b[p], bins, parzen_width, false);
        for (std::size_t i = 0; i < wa.weights.size(); ++i) {
            double* row = &h.counts[(wa.first + i) * bins + wb.first];
            for (std::size_t j = 0; j < wb.weights.size(); ++j) {
                row[j] += wa.weights[i] * wb.weights[j];
            }
        }
    }
    h.total = static_cast<double>(a.size());
    fill_marginals(h);
    return h;
}

LossValue hmi_soft(const GrayImage& a, const GrayImage& b, const LossConfig& cfg) {
    require_same(a, b, "hmi_soft");
    cfg.validate();
    const std::size_t bins = cfg.bins;
    const std::size_t n = a.size();

    std::vector<ParzenWeights> wa(n), wb(n);
    JointHistogram h;
    h.bins = bins;
    h.counts.assign(bins * bins, 0.0);
    for (std::size_t p = 0; p < n; ++p) {
        wa[p] = parzen(a[p], bins, cfg.parzen_width, false);
        wb[p] = parzen(b[p], bins, cfg.parzen_width, true);
        for (std::size_t i = 0; i < wa[p].weights.size(); ++i) {
            double* row = &h.counts[(wa[p].first + i) * bins + wb[p].first];
            for (std::size_t j = 0; j < wb[p].weights.size(); ++j) {
                row[j] += wa[p].weights[i] * wb[p].weights[j];
            }
        }
    }
    h.total = static_cast<double>(n);
    fill_marginals(h);

    LossValue out;
    out.value = mutual_information(h);

    // dMI/db_p = (1/N) sum_j w'_j(p) [sum_i wa_i(p) log P_ij - log Pb_j];
    // the constant terms cancel because sum_j w'_j = 0.
    const double total = h.total;
    std::vector<double> log_joint(bins * bins, 0.0);
    for (std::size_t k = 0; k < log_joint.size(); ++k) {
        if (h.counts[k] > 0.0) log_joint[k] = std::log(h.counts[k] / total);
    }
    std::vector<double> log_b(bins, 0.0);
    for (std::size_t j = 0; j < bins; ++j) {
        if (h.marginal_b[j] > 0.0) log_b[j] = std::log(h.marginal_b[j] / total);
    }
    GrayImage grad(a.width(), a.height());
    for (std::size_t p = 0; p < n; ++p) {
        double g = 0.0;
        for (std::size_t j = 0; j < wb[p].weights.size(); ++j) {
            const double dw = wb[p].dweights[j];
            if (dw == 0.0) continue;
            const std::size_t col = wb[p].first + j;
            double inner = -log_b[col];
            for (std::size_t i = 0; i < wa[p].weights.size(); ++i) {
                inner += wa[p].weights[i] * log_joint[(wa[p].first + i) * bins + col];
            }
            g += dw * inner;
        }
        grad[p] = g / total;
    }
    out.grad_image = std::move(grad);
    return out;
}

LossValue mse(const GrayImage& gamma, const GrayImage& pred) {
    require_same(gamma, pred, "mse");
    const double n = static_cast<double>(gamma.size());
    LossValue out;
    GrayImage grad(gamma.width(), gamma.height());
    double sum = 0.0;
    for (std::size_t i = 0; i < gamma.size(); ++i) {
        const double d = pred[i] - gamma[i];
        sum += d * d;
        grad[i] = 2.0 * d / n;
    }
    out.value = sum / n;
    out.grad_image = std::move(grad);
    return out;
}

LossValue smoothness(const DisplacementField& phi) {
    const std::size_t w = phi.width(), h = phi.height();
    const double norm = 2.0 * static_cast<double>(w * h);
    DisplacementField grad(w, h);
    double sum = 0.0;
    auto accumulate = [&](const std::vector<double>& f, std::vector<double>& g) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                const std::size_t i = y * w + x;
                if (x + 1 < w) {
                    const double d = f[i + 1] - f[i];
                    sum += d * d;
                    g[i + 1] += 2.0 * d / norm;
                    g[i] -= 2.0 * d / norm;
                }
                if (y + 1 < h) {
                    const double d = f[i + w] - f[i];
                    sum += d * d;
                    g[i + w] += 2.0 * d / norm;
                    g[i] -= 2.0 * d / norm;
                }
            }
        }
    };
    accumulate(phi.dx(), grad.dx());
    accumulate(phi.dy(), grad.dy());
    LossValue out;
    out.value = sum / norm;
    out.grad_field = std::move(grad);
    return out;
}

namespace {

LossValue combine(const LossValue& sim, double sim_sign, const GrayImage& moving, const DisplacementField& phi,
                  const LossConfig& cfg) {
    GrayImage upstream = *sim.grad_image;
    for (double& g : upstream.data()) g *= sim_sign;
    DisplacementField grad = warp_backward(moving, phi, upstream);
    LossValue out;
    out.value = sim_sign * sim.value;
    if (cfg.lambda > 0.0) {
        const LossValue reg = smoothness(phi);
        out.value += cfg.lambda * reg.value;
        grad = grad + cfg.lambda * *reg.grad_field;
    }
    out.grad_field = std::move(grad);
    return out;
}

} // namespace

LossValue total_loss_unsupervised(const GrayImage& fixed, const GrayImage& moving, const DisplacementField& phi,
                                  const LossConfig& cfg) {
    require_same(fixed, moving, "total_loss_unsupervised");
    cfg.validate();
    const GrayImage warped = warp_bilinear(moving, phi);
    return combine(hmi_soft(fixed, warped, cfg), -1.0, moving, phi, cfg);
}

LossValue total_loss_supervised(const GrayImage& gamma, const GrayImage& moving, const DisplacementField& phi,
                                const LossConfig& cfg) {
    require_same(gamma, moving, "total_loss_supervised");
    cfg.validate();
    const GrayImage warped = warp_bilinear(moving, phi);
    return combine(mse(gamma, warped), 1.0, moving, phi, cfg);
}

} // namespace mmreg
