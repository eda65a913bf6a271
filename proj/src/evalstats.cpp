#include "mmreg/evalstats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "mmreg/error.hpp"
#include "mmreg/losses.hpp"

namespace mmreg {

std::size_t BinaryMask::count() const {
    return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), 1));
}

BinaryMask BinaryMask::complement() const {
    BinaryMask out(width_, height_);
    for (std::size_t i = 0; i < data_.size(); ++i) out.data_[i] = data_[i] != 0 ? 0 : 1;
    return out;
}

BinarizeMethod BinarizeMethod::parse(const std::string& text) {
    if (text == "otsu") {
        return otsu();
    }
    if (text.rfind("fixed:", 0) == 0) {
        try {
            std::size_t used = 0;
            const std::string num = text.substr(6);
            const double t = std::stod(num, &used);
            if (used == num.size()) return fixed(t);
        } catch (const std::exception&) {
        }
    }
    throw ParameterError("binarize method must be 'otsu' or 'fixed:<threshold>', got '" + text + "'");
}

std::string BinarizeMethod::to_string() const {
    if (kind == Kind::otsu) return "otsu";
    std::ostringstream os;
    os << "fixed:" << threshold;
    return os.str();
}

namespace {

std::size_t otsu_bin(double v) {
    const double scaled = std::floor(v * 256.0);
    if (!(scaled > 0.0)) return 0;
    return std::min<std::size_t>(static_cast<std::size_t>(scaled), 255);
}

} // namespace

std::size_t otsu_cut(const GrayImage& img) {
    std::array<double, 256> counts{}, sums{};
    for (double v : img.data()) {
        const std::size_t b = otsu_bin(v);
        counts[b] += 1.0;
        sums[b] += v;
    }
    const double total_n = static_cast<double>(img.size());
    const double total_s = std::accumulate(sums.begin(), sums.end(), 0.0);

    std::array<double, 256> between{};
    double best = 0.0;
    double n0 = 0.0, s0 = 0.0;
    for (std::size_t k = 0; k < 255; ++k) {
        n0 += counts[k];
        s0 += sums[k];
        const double n1 = total_n - n0;
        if (n0 <= 0.0 || n1 <= 0.0) continue;
        const double diff = s0 / n0 - (total_s - s0) / n1;
        between[k] = (n0 / total_n) * (n1 / total_n) * diff * diff;
        best = std::max(best, between[k]);
    }
    if (!(best > 0.0)) {
        return 255;
    }
    std::size_t first = 0;
    while (between[first] != best) ++first;
    std::size_t last = first;
    while (last + 1 < 255 && between[last + 1] == best) ++last;
    return first + (last - first) / 2;
}

BinaryMask binarize(const GrayImage& img, const BinarizeMethod& method) {
    BinaryMask mask(img.width(), img.height());
    if (method.kind == BinarizeMethod::Kind::fixed) {
        for (std::size_t i = 0; i < img.size(); ++i) mask.set(i, img[i] > method.threshold);
        return mask;
    }
    const std::size_t cut = otsu_cut(img);
    for (std::size_t i = 0; i < img.size(); ++i) mask.set(i, otsu_bin(img[i]) > cut);
    return mask;
}

double dice(const BinaryMask& a, const BinaryMask& b) {
    if (a.width() != b.width() || a.height() != b.height()) {
        throw ParameterError("dice: dimension mismatch");
    }
    std::size_t na = 0, nb = 0, both = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        na += a[i] ? 1 : 0;
        nb += b[i] ? 1 : 0;
        both += (a[i] && b[i]) ? 1 : 0;
    }
    if (na + nb == 0) {
        return 1.0;
    }
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

MiMetric mi_metric(const GrayImage& a, const GrayImage& b, std::size_t bins) {
    if (!a.same_shape(b)) {
        throw ParameterError("mi_metric: dimension mismatch");
    }
    const JointHistogram h = joint_histogram_hard(a, b, bins);
    MiMetric m;
    m.raw = std::max(0.0, mutual_information(h));
    const double ha = entropy(h.marginal_a);
    const double hb = entropy(h.marginal_b);
    m.normalized = (ha > 0.0 && hb > 0.0) ? std::clamp(2.0 * m.raw / (ha + hb), 0.0, 1.0) : 0.0;
    return m;
}

double mann_whitney_exact_p(double u, std::size_t n, std::size_t m) {
    // counts[j][v]: number of rank assignments of size-j sample against the
    // other sample giving U = v, built with the recurrence
    // f(n, m, u) = f(n - 1, m, u - m) + f(n, m - 1, u).
    const std::size_t umax = n * m;
    std::vector<std::vector<double>> prev(n + 1, std::vector<double>(umax + 1, 0.0));
    // m' = 0: only U = 0.
    for (std::size_t j = 0; j <= n; ++j) prev[j][0] = 1.0;
    for (std::size_t mm = 1; mm <= m; ++mm) {
        std::vector<std::vector<double>> cur(n + 1, std::vector<double>(umax + 1, 0.0));
        cur[0][0] = 1.0;
        for (std::size_t j = 1; j <= n; ++j) {
            for (std::size_t v = 0; v <= j * mm; ++v) {
                double c = prev[j][v];
                if (v >= mm) c += cur[j - 1][v - mm];
                cur[j][v] = c;
            }
        }
        prev = std::move(cur);
    }
    const std::vector<double>& dist = prev[n];
    const double total = std::accumulate(dist.begin(), dist.end(), 0.0);
    const auto k = static_cast<std::size_t>(std::llround(u));
    double lower = 0.0, upper = 0.0;
    for (std::size_t v = 0; v <= umax; ++v) {
        if (v <= k) lower += dist[v];
        if (v >= k) upper += dist[v];
    }
    return std::min(1.0, 2.0 * std::min(lower, upper) / total);
}

double mann_whitney_normal_p(double u, std::size_t n, std::size_t m, double tie_term) {
    const double nn = static_cast<double>(n), mm = static_cast<double>(m);
    const double big_n = nn + mm;
    const double mean = nn * mm / 2.0;
    double variance = nn * mm / 12.0 * (big_n + 1.0);
    if (big_n > 1.0) {
        variance -= nn * mm / 12.0 * tie_term / (big_n * (big_n - 1.0));
    }
    const double num = std::abs(u - mean) - 0.5;
    if (!(variance > 0.0) || num <= 0.0) {
        return 1.0;
    }
    const double z = num / std::sqrt(variance);
    const double p = std::erfc(z / std::sqrt(2.0));
    return std::clamp(p, std::numeric_limits<double>::min(), 1.0);
}

MannWhitneyResult mann_whitney_u(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.empty() || y.empty()) {
        throw ParameterError("mann_whitney_u: both samples must be nonempty");
    }
    const std::size_t n = x.size(), m = y.size(), big_n = n + m;
    std::vector<std::pair<double, bool>> pooled;
    pooled.reserve(big_n);
    for (double v : x) pooled.emplace_back(v, true);
    for (double v : y) pooled.emplace_back(v, false);
    std::stable_sort(pooled.begin(), pooled.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });

    double rank_sum_x = 0.0;
    double tie_term = 0.0;
    for (std::size_t i = 0; i < big_n;) {
        std::size_t j = i;
        while (j + 1 < big_n && pooled[j + 1].first == pooled[i].first) ++j;
        const double group = static_cast<double>(j - i + 1);
        const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) {
            if (pooled[k].second) rank_sum_x += midrank;
        }
        tie_term += group * group * group - group;
        i = j + 1;
    }

    MannWhitneyResult r;
    r.u = rank_sum_x - static_cast<double>(n) * static_cast<double>(n + 1) / 2.0;
    if (std::min(n, m) <= 8 && tie_term == 0.0) {
        r.exact = true;
        r.p = mann_whitney_exact_p(r.u, n, m);
    } else {
        r.p = mann_whitney_normal_p(r.u, n, m, tie_term);
    }
    return r;
}

double quantile(std::vector<double> values, double q) {
    if (values.empty()) {
        throw ParameterError("quantile: empty sample");
    }
    if (!(q >= 0.0 && q <= 1.0)) {
        throw ParameterError("quantile: q must lie in [0, 1]");
    }
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

double median(std::vector<double> values) { return quantile(std::move(values), 0.5); }

EvalRow evaluate_pair(const PairRecord& pair, const DisplacementField& field, const EvalConfig& cfg) {
    pair.validate();
    if (!field.same_shape(pair.moving)) {
        throw ParameterError("evaluate_pair: field dimensions differ from record " + pair.id);
    }
    const GrayImage warped = warp_bilinear(pair.moving, field);
    const BinaryMask fixed_mask = binarize(pair.fixed, cfg.binarize);
    EvalRow row;
    row.id = pair.id;
    row.dice_before = dice(fixed_mask, binarize(pair.moving, cfg.binarize));
    row.dice_after = dice(fixed_mask, binarize(warped, cfg.binarize));
    const MiMetric before = mi_metric(pair.fixed, pair.moving, cfg.bins);
    const MiMetric after = mi_metric(pair.fixed, warped, cfg.bins);
    row.mi_before = before.raw;
    row.mi_after = after.raw;
    row.nmi_before = before.normalized;
    row.nmi_after = after.normalized;
    return row;
}

namespace {

const std::array<std::string, 6> kColumns{"dice_before", "dice_after", "mi_before",
                                          "mi_after",    "nmi_before", "nmi_after"};

double column_value(const EvalRow& r, const std::string& name) {
    if (name == "dice_before") return r.dice_before;
    if (name == "dice_after") return r.dice_after;
    if (name == "mi_before") return r.mi_before;
    if (name == "mi_after") return r.mi_after;
    if (name == "nmi_before") return r.nmi_before;
    if (name == "nmi_after") return r.nmi_after;
    throw ParameterError("unknown report column: " + name);
}

ColumnSummary summarize(const std::vector<double>& v) {
    ColumnSummary s;
    s.median = quantile(v, 0.5);
    s.q1 = quantile(v, 0.25);
    s.q3 = quantile(v, 0.75);
    s.iqr = s.q3 - s.q1;
    s.min = *std::min_element(v.begin(), v.end());
    s.max = *std::max_element(v.begin(), v.end());
    return s;
}

void finalize(EvalReport& report) {
    report.aggregates.clear();
    report.tests.clear();
    if (report.rows.empty()) return;
    for (const auto& c : kColumns) {
        report.aggregates.emplace_back(c, summarize(report.column(c)));
    }
    for (const std::string metric : {"dice", "mi", "nmi"}) {
        report.tests.emplace_back(metric,
                                  mann_whitney_u(report.column(metric + "_before"), report.column(metric + "_after")));
    }
}

} // namespace

const ColumnSummary& EvalReport::aggregate(const std::string& column) const {
    for (const auto& [name, s] : aggregates) {
        if (name == column) return s;
    }
    throw ParameterError("no aggregate for column " + column);
}

const MannWhitneyResult& EvalReport::test(const std::string& metric) const {
    for (const auto& [name, t] : tests) {
        if (name == metric) return t;
    }
    throw ParameterError("no test for metric " + metric);
}

std::vector<double> EvalReport::column(const std::string& name) const {
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(column_value(r, name));
    return out;
}

EvalReport evaluate_pairs(const std::vector<PairRecord>& pairs, const std::vector<DisplacementField>& fields,
                          const EvalConfig& cfg) {
    if (pairs.size() != fields.size()) {
        throw ParameterError("evaluate_pairs: " + std::to_string(pairs.size()) + " pairs but " +
                             std::to_string(fields.size()) + " fields");
    }
    EvalReport report;
    report.config = cfg;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        report.rows.push_back(evaluate_pair(pairs[i], fields[i], cfg));
    }
    finalize(report);
    return report;
}

void write_report_csv(const EvalReport& report, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("write_report_csv: cannot open " + path.string());
    }
    out << std::setprecision(17);
    out << "id";
    for (const auto& c : kColumns) out << ',' << c;
    out << '\n';
    for (const auto& r : report.rows) {
        out << r.id;
        for (const auto& c : kColumns) out << ',' << column_value(r, c);
        out << '\n';
    }
    out << "# summary\nstatistic";
    for (const auto& c : kColumns) out << ',' << c;
    out << '\n';
    const std::array<std::pair<const char*, double ColumnSummary::*>, 6> stats{{{"median", &ColumnSummary::median},
                                                                                {"q1", &ColumnSummary::q1},
                                                                                {"q3", &ColumnSummary::q3},
                                                                                {"iqr", &ColumnSummary::iqr},
                                                                                {"min", &ColumnSummary::min},
                                                                                {"max", &ColumnSummary::max}}};
    if (!report.aggregates.empty()) {
        for (const auto& [label, member] : stats) {
            out << label;
            for (const auto& c : kColumns) out << ',' << report.aggregate(c).*member;
            out << '\n';
        }
    }
    out << "# tests\nmetric,U,p\n";
    for (const auto& [metric, t] : report.tests) {
        out << metric << ',' << t.u << ',' << t.p << '\n';
    }
    if (!out) {
        throw IoError("write_report_csv: write failed for " + path.string());
    }
}

void write_report_json(const EvalReport& report, const std::filesystem::path& path) {
    using nlohmann::ordered_json;
    ordered_json j;
    j["bins"] = report.config.bins;
    j["binarize"] = report.config.binarize.to_string();
    j["rows"] = ordered_json::array();
    for (const auto& r : report.rows) {
        ordered_json row;
        row["id"] = r.id;
        for (const auto& c : kColumns) row[c] = column_value(r, c);
        j["rows"].push_back(row);
    }
    j["aggregates"] = ordered_json::object();
    for (const auto& [name, s] : report.aggregates) {
        j["aggregates"][name] = {{"median", s.median}, {"q1", s.q1}, {"q3", s.q3},
                                 {"iqr", s.iqr},       {"min", s.min}, {"max", s.max}};
    }
    j["tests"] = ordered_json::object();
    for (const auto& [metric, t] : report.tests) {
        j["tests"][metric] = {{"U", t.u}, {"p", t.p}, {"exact", t.exact}};
    }
    std::ofstream out(path);
    if (!out) {
        throw IoError("write_report_json: cannot open " + path.string());
    }
    out << j.dump(2) << '\n';
}

EvalReport read_report_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("read_report_json: cannot open " + path.string());
    }
    EvalReport report;
    try {
        const auto j = nlohmann::json::parse(in);
        report.config.bins = j.value("bins", std::size_t{32});
        report.config.binarize = BinarizeMethod::parse(j.value("binarize", std::string("otsu")));
        for (const auto& row : j.at("rows")) {
            EvalRow r;
            r.id = row.at("id").get<std::string>();
            r.dice_before = row.at("dice_before").get<double>();
            r.dice_after = row.at("dice_after").get<double>();
            r.mi_before = row.at("mi_before").get<double>();
            r.mi_after = row.at("mi_after").get<double>();
            r.nmi_before = row.at("nmi_before").get<double>();
            r.nmi_after = row.at("nmi_after").get<double>();
            report.rows.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("read_report_json: " + path.string() + ": " + e.what());
    }
    finalize(report);
    return report;
}

void write_violin_csv(const EvalReport& report, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("write_violin_csv: cannot open " + path.string());
    }
    out << std::setprecision(17);
    for (std::size_t i = 0; i < kColumns.size(); ++i) out << (i ? "," : "") << kColumns[i];
    out << '\n';
    for (const auto& r : report.rows) {
        for (std::size_t i = 0; i < kColumns.size(); ++i) out << (i ? "," : "") << column_value(r, kColumns[i]);
        out << '\n';
    }
}

} // namespace mmreg
