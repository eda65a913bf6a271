#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "mmreg/field.hpp"
#include "mmreg/image.hpp"
#include "mmreg/record.hpp"

namespace mmreg {

/// Boolean raster, true = foreground (tissue).
class BinaryMask {
public:
    BinaryMask() = default;
    BinaryMask(std::size_t width, std::size_t height, bool fill = false)
        : width_(width), height_(height), data_(width * height, fill ? 1 : 0) {}

    std::size_t width() const { return width_; }
    std::size_t height() const { return height_; }
    std::size_t size() const { return data_.size(); }

    bool operator[](std::size_t i) const { return data_[i] != 0; }
    void set(std::size_t i, bool v) { data_[i] = v ? 1 : 0; }
    std::size_t count() const;
    BinaryMask complement() const;

    friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

private:
    std::size_t width_ = 0;
    std::size_t height_ = 0;
    std::vector<unsigned char> data_;
};

struct BinarizeMethod {
    enum class Kind { otsu, fixed } kind = Kind::otsu;
    double threshold = 0.5;  ///< Used by fixed: foreground = value > threshold.

    static BinarizeMethod otsu() { return {}; }
    static BinarizeMethod fixed(double t) { return {Kind::fixed, t}; }
    /// "otsu" or "fixed:<t>".
    static BinarizeMethod parse(const std::string& text);
    std::string to_string() const;
};

/// Otsu over 256 candidate cuts of the 256-bin histogram (bin = floor(v * 256)).
/// Returns the chosen cut k: foreground is bin > k. Returns 255 (everything
/// background) when no cut separates two nonempty classes. Ties between
/// maximal cuts resolve to the middle of the maximal run.
std::size_t otsu_cut(const GrayImage& img);

BinaryMask binarize(const GrayImage& img, const BinarizeMethod& method = BinarizeMethod::otsu());

/// 2|A & B| / (|A| + |B|), 1 when both masks are empty.
double dice(const BinaryMask& a, const BinaryMask& b);

struct MiMetric {
    double raw = 0.0;         ///< Hard-binned MI in nats.
    double normalized = 0.0;  ///< 2 MI / (H(a) + H(b)), in [0, 1].
};

MiMetric mi_metric(const GrayImage& a, const GrayImage& b, std::size_t bins);

struct MannWhitneyResult {
    double u = 0.0;  ///< U statistic of the first sample.
    double p = 1.0;  ///< Two-sided p-value.
    bool exact = false;
};

/// Two-sided Mann-Whitney U test. Exact null distribution when min(n, m) <= 8
/// and there are no ties; otherwise the normal approximation with tie-corrected
/// variance and continuity correction.
MannWhitneyResult mann_whitney_u(const std::vector<double>& x, const std::vector<double>& y);

/// Exact two-sided p-value of U for samples of sizes n and m without ties.
double mann_whitney_exact_p(double u, std::size_t n, std::size_t m);

/// Normal-approximation two-sided p-value; `tie_term` is sum(t^3 - t) over tie groups.
double mann_whitney_normal_p(double u, std::size_t n, std::size_t m, double tie_term = 0.0);

struct EvalConfig {
    std::size_t bins = 32;
    BinarizeMethod binarize = BinarizeMethod::otsu();
};

struct EvalRow {
    std::string id;
    double dice_before = 0.0, dice_after = 0.0;
    double mi_before = 0.0, mi_after = 0.0;
    double nmi_before = 0.0, nmi_after = 0.0;
};

struct ColumnSummary {
    double median = 0.0, q1 = 0.0, q3 = 0.0, iqr = 0.0, min = 0.0, max = 0.0;
};

struct EvalReport {
    EvalConfig config;
    std::vector<EvalRow> rows;
    /// Keyed by column name (dice_before, ..., nmi_after).
    std::vector<std::pair<std::string, ColumnSummary>> aggregates;
    /// Before-vs-after tests keyed by metric (dice, mi, nmi); x = before, y = after.
    std::vector<std::pair<std::string, MannWhitneyResult>> tests;

    const ColumnSummary& aggregate(const std::string& column) const;
    const MannWhitneyResult& test(const std::string& metric) const;
    std::vector<double> column(const std::string& name) const;
};

/// Quantile with linear interpolation between order statistics (R type 7).
double quantile(std::vector<double> values, double q);
double median(std::vector<double> values);

/// Metrics of fixed vs moving (before) and fixed vs warp(moving, field) (after).
EvalRow evaluate_pair(const PairRecord& pair, const DisplacementField& field, const EvalConfig& cfg);

EvalReport evaluate_pairs(const std::vector<PairRecord>& pairs, const std::vector<DisplacementField>& fields,
                          const EvalConfig& cfg);

/// One row per pair, then a "# summary" block (median, q1, q3, iqr per column)
/// and a "# tests" block (metric, U, p).
void write_report_csv(const EvalReport& report, const std::filesystem::path& path);
void write_report_json(const EvalReport& report, const std::filesystem::path& path);
EvalReport read_report_json(const std::filesystem::path& path);

/// Plain CSV of the six raw metric columns for violin plotting.
void write_violin_csv(const EvalReport& report, const std::filesystem::path& path);

} // namespace mmreg
