#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "mmreg/field.hpp"
#include "mmreg/image.hpp"

namespace mmreg {

/// B x B joint histogram; rows index the first image's bins, columns the second's.
struct JointHistogram {
    std::size_t bins = 0;
    std::vector<double> counts;    ///< Row-major, bins * bins.
    std::vector<double> marginal_a;
    std::vector<double> marginal_b;
    double total = 0.0;

    double at(std::size_t i, std::size_t j) const { return counts[i * bins + j]; }
};

struct LossConfig {
    double lambda = 1.0;        ///< Weight of the smoothness term.
    std::size_t bins = 32;      ///< Histogram bins for both MI forms.
    double parzen_width = 1.0;  ///< Parzen kernel std, in bins.

    void validate() const;

    friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

struct LossValue {
    double value = 0.0;
    std::optional<DisplacementField> grad_field;
    std::optional<GrayImage> grad_image;
};

/// Hard-binned histogram: pixel value v goes to bin min(floor(v * B), B - 1).
JointHistogram joint_histogram_hard(const GrayImage& a, const GrayImage& b, std::size_t bins);

/// Mutual information (nats) of a joint histogram; empty cells contribute 0.
double mutual_information(const JointHistogram& hist);

/// Shannon entropy (nats) of a histogram of counts.
double entropy(const std::vector<double>& counts);

/// Entropy of the hard-binned intensity histogram of `img`.
double histogram_entropy(const GrayImage& img, std::size_t bins);

double hmi_hard(const GrayImage& a, const GrayImage& b, std::size_t bins);

/// Parzen-window histogram. Each pixel spreads unit mass over the bins within
/// 3 std of its continuous bin coordinate v * (B - 1), with Gaussian weights
/// renormalized per pixel. When no bin falls inside the window (very narrow
/// kernels) the nearest bin takes the whole mass.
JointHistogram joint_histogram_soft(const GrayImage& a, const GrayImage& b, std::size_t bins, double parzen_width);

/// Parzen-window MI with grad_image = d MI / d b.
LossValue hmi_soft(const GrayImage& a, const GrayImage& b, const LossConfig& cfg);

/// Mean squared error with grad_image = d MSE / d pred.
LossValue mse(const GrayImage& gamma, const GrayImage& pred);

/// Diffusion regularizer: sum over both components of squared forward
/// differences in x and y (zero past the last column/row), divided by 2N for
/// N pixels. grad_field is its exact gradient.
LossValue smoothness(const DisplacementField& phi);

/// -hmi_soft(F, M(phi)) + lambda * smoothness(phi), gradient with respect to phi.
LossValue total_loss_unsupervised(const GrayImage& fixed, const GrayImage& moving, const DisplacementField& phi,
                                  const LossConfig& cfg);

/// mse(gamma, M(phi)) + lambda * smoothness(phi), gradient with respect to phi.
LossValue total_loss_supervised(const GrayImage& gamma, const GrayImage& moving, const DisplacementField& phi,
                                const LossConfig& cfg);

} // namespace mmreg
