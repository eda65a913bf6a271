#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmreg/evalstats.hpp"
#include "mmreg/losses.hpp"
#include "support.hpp"

using namespace mmreg;

namespace {

BinaryMask random_mask(std::size_t w, std::size_t h, std::uint64_t seed, double p = 0.5) {
    Xoshiro256pp rng(seed);
    BinaryMask m(w, h);
    for (std::size_t i = 0; i < m.size(); ++i) m.set(i, rng.uniform01() < p);
    return m;
}

// Two-sided exact p by enumerating every assignment of ranks 1..n+m to the first sample.
double enumerated_p(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size(), m = y.size();
    std::vector<double> all = x;
    all.insert(all.end(), y.begin(), y.end());
    std::vector<double> sorted = all;
    std::sort(sorted.begin(), sorted.end());
    double rx = 0.0;
    for (double v : x) rx += static_cast<double>(std::lower_bound(sorted.begin(), sorted.end(), v) - sorted.begin() + 1);
    const double u_obs = rx - n * (n + 1) / 2.0;
    const double centre = n * m / 2.0;
    const double dev = std::abs(u_obs - centre);

    std::vector<int> pick(n + m, 0);
    std::fill(pick.begin(), pick.begin() + static_cast<long>(n), 1);
    std::sort(pick.begin(), pick.end());
    std::size_t total = 0, extreme = 0;
    do {
        double r = 0.0;
        for (std::size_t i = 0; i < n + m; ++i)
            if (pick[i]) r += static_cast<double>(i + 1);
        const double u = r - n * (n + 1) / 2.0;
        ++total;
        if (std::abs(u - centre) >= dev - 1e-9) ++extreme;
    } while (std::next_permutation(pick.begin(), pick.end()));
    return std::min(1.0, static_cast<double>(extreme) / static_cast<double>(total));
}

std::size_t brute_otsu(const GrayImage& img) {
    std::vector<double> hist(256, 0.0);
    for (double v : img.data()) hist[std::min<std::size_t>(static_cast<std::size_t>(v * 256), 255)] += 1.0;
    double best = -1.0;
    std::vector<std::size_t> winners;
    for (std::size_t k = 0; k < 256; ++k) {
        double w0 = 0, w1 = 0, s0 = 0, s1 = 0;
        for (std::size_t i = 0; i < 256; ++i) {
            if (i <= k) {
                w0 += hist[i];
                s0 += hist[i] * i;
            } else {
                w1 += hist[i];
                s1 += hist[i] * i;
            }
        }
        if (w0 == 0 || w1 == 0) continue;
        const double d = s0 / w0 - s1 / w1;
        const double between = w0 * w1 * d * d;
        if (between > best + 1e-9 * std::abs(best)) {
            best = between;
            winners = {k};
        } else if (std::abs(between - best) <= 1e-9 * std::abs(best)) {
            winners.push_back(k);
        }
    }
    if (winners.empty()) return 255;
    return winners[(winners.size() - 1) / 2];
}

void shuffle(std::vector<double>& v, Xoshiro256pp& rng) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

} // namespace

TEST_CASE("binarize") {
    CHECK(binarize(GrayImage(4, 4, 0.6)).count() == 0);
    const BinaryMask f = binarize(GrayImage(2, 1, {0.2, 0.8}), BinarizeMethod::fixed(0.5));
    CHECK(!f[0]);
    CHECK(f[1]);

    GrayImage bimodal(10, 10);
    for (std::size_t i = 0; i < 100; ++i) bimodal[i] = i < 50 ? 0.1 : 0.9;
    const std::size_t cut = otsu_cut(bimodal);
    CHECK(cut >= static_cast<std::size_t>(0.1 * 256));
    CHECK(cut < static_cast<std::size_t>(0.9 * 256));
    const BinaryMask m = binarize(bimodal);
    CHECK(m.count() == 50);
    CHECK(m[99]);
    CHECK(!m[0]);

    CHECK(BinarizeMethod::parse("otsu").kind == BinarizeMethod::Kind::otsu);
    CHECK(BinarizeMethod::parse("fixed:0.25").threshold == 0.25);
    CHECK(BinarizeMethod::parse(BinarizeMethod::fixed(0.3).to_string()).threshold == 0.3);
    CHECK_THROWS_AS(BinarizeMethod::parse("kmeans"), ParameterError);
    CHECK_THROWS_AS(BinarizeMethod::parse("fixed:x"), ParameterError);
}

TEST_CASE("otsu_cut matches an exhaustive scan") {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        Xoshiro256pp rng(seed);
        GrayImage img(16, 12);
        const double lo = rng.uniform(0.0, 0.4), hi = rng.uniform(0.5, 1.0);
        for (auto& v : img.data()) v = std::clamp((rng.uniform01() < 0.4 ? lo : hi) + rng.uniform(-0.1, 0.1), 0.0, 1.0);
        CHECK(otsu_cut(img) == brute_otsu(img));
    }
}

TEST_CASE("dice") {
    const BinaryMask full(4, 4, true), empty(4, 4);
    CHECK(dice(full, full) == 1.0);
    CHECK(dice(empty, empty) == 1.0);
    CHECK(dice(full, empty) == 0.0);

    BinaryMask a(4, 4), b(4, 4);
    for (std::size_t i = 0; i < 8; ++i) a.set(i, true);
    for (std::size_t i = 2; i < 10; ++i) b.set(i, true);
    CHECK(dice(a, b) == 0.75);
    CHECK_THROWS_AS(dice(a, BinaryMask(3, 4)), ParameterError);

    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const BinaryMask x = random_mask(9, 7, seed), y = random_mask(9, 7, seed + 1000, 0.3);
        std::size_t inter = 0, nx = 0, ny = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            inter += x[i] && y[i];
            nx += x[i];
            ny += y[i];
        }
        CHECK(dice(x, y) == 2.0 * inter / static_cast<double>(nx + ny));
        CHECK(dice(x, y) == dice(y, x));
        if (x.count() > 0 && x.count() < x.size()) CHECK(dice(x, x.complement()) == 0.0);
    }
}

TEST_CASE("mi_metric") {
    const GrayImage a = testing::random_image(8, 8, 3);
    const MiMetric c = mi_metric(a, GrayImage(8, 8, 0.4), 16);
    CHECK(c.raw == 0.0);
    CHECK(c.normalized == 0.0);
    CHECK(mi_metric(a, a, 16).normalized == doctest::Approx(1.0).epsilon(1e-12));
    const MiMetric ind = mi_metric(GrayImage(2, 2, {0.0, 0.0, 0.9, 0.9}), GrayImage(2, 2, {0.0, 0.9, 0.0, 0.9}), 2);
    CHECK(std::abs(ind.raw) < 1e-15);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const MiMetric m = mi_metric(testing::random_image(8, 8, seed), testing::random_image(8, 8, seed + 1), 8);
        CHECK(m.raw >= 0.0);
        CHECK(m.normalized >= 0.0);
        CHECK(m.normalized <= 1.0);
    }
    CHECK_THROWS_AS(mi_metric(a, GrayImage(8, 7), 16), ParameterError);
}

TEST_CASE("quantile uses linear interpolation") {
    CHECK(median({3.0, 1.0, 2.0}) == 2.0);
    CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
    CHECK(quantile({1.0, 2.0, 3.0, 4.0, 5.0}, 0.25) == 2.0);
    CHECK(quantile({1.0, 2.0, 3.0, 4.0}, 0.25) == doctest::Approx(1.75));
    CHECK(quantile({7.0}, 0.9) == 7.0);
    CHECK_THROWS_AS(quantile({}, 0.5), ParameterError);
    CHECK_THROWS_AS(quantile({1.0}, 1.5), ParameterError);
}

TEST_CASE("mann_whitney_u examples") {
    const auto r = mann_whitney_u({1, 2, 3}, {4, 5, 6});
    CHECK(r.u == 0.0);
    CHECK(r.exact);
    CHECK(r.p == doctest::Approx(0.1).epsilon(1e-12));

    const auto same = mann_whitney_u({1, 2, 2, 3, 5}, {5, 3, 2, 2, 1});
    CHECK(same.u == 12.5);
    CHECK(same.p >= 0.99);

    Xoshiro256pp rng(2024);
    std::vector<double> x(20), y(20);
    for (auto& v : x) v = rng.normal();
    for (auto& v : y) v = rng.normal() + 2.0;
    const auto shifted = mann_whitney_u(x, y);
    CHECK(!shifted.exact);
    CHECK(shifted.p <= 0.05);

    CHECK_THROWS_AS(mann_whitney_u({}, {1.0}), ParameterError);
}

TEST_CASE("mann_whitney_u exact path matches enumeration") {
    Xoshiro256pp rng(99);
    for (std::size_t n = 1; n <= 6; ++n) {
        for (std::size_t m = 1; m <= 6; ++m) {
            for (int trial = 0; trial < 3; ++trial) {
                std::vector<double> all(n + m);
                std::iota(all.begin(), all.end(), 1.0);
                shuffle(all, rng);
                const std::vector<double> x(all.begin(), all.begin() + static_cast<long>(n));
                const std::vector<double> y(all.begin() + static_cast<long>(n), all.end());
                const auto r = mann_whitney_u(x, y);
                CHECK(r.exact);
                CHECK(std::abs(r.p - enumerated_p(x, y)) < 1e-9);
            }
        }
    }
}

TEST_CASE("mann_whitney_u is invariant under increasing transforms") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Xoshiro256pp rng(seed);
        std::vector<double> x(12), y(9);
        for (auto& v : x) v = std::round(rng.uniform(0.0, 10.0));
        for (auto& v : y) v = std::round(rng.uniform(2.0, 12.0));
        const auto r = mann_whitney_u(x, y);
        auto tx = x, ty = y;
        for (auto& v : tx) v = std::exp(0.3 * v) + 1.0;
        for (auto& v : ty) v = std::exp(0.3 * v) + 1.0;
        const auto t = mann_whitney_u(tx, ty);
        CHECK(t.u == r.u);
        CHECK(t.p == r.p);
    }
}

TEST_CASE("exact and normal paths agree at n = m = 8") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Xoshiro256pp rng(seed + 7);
        std::vector<double> all(16);
        std::iota(all.begin(), all.end(), 0.0);
        shuffle(all, rng);
        std::vector<double> x(all.begin(), all.begin() + 8), y(all.begin() + 8, all.end());
        const auto r = mann_whitney_u(x, y);
        REQUIRE(r.exact);
        CHECK(std::abs(r.p - mann_whitney_normal_p(r.u, 8, 8)) < 0.02);
    }
}

TEST_CASE("evaluate_pairs") {
    std::vector<PairRecord> pairs;
    std::vector<DisplacementField> zeros;
    for (int i = 0; i < 5; ++i) {
        PairRecord r;
        r.id = "r" + std::to_string(i);
        r.fixed = testing::random_image(12, 8, i);
        r.moving = testing::random_image(12, 8, i + 50);
        pairs.push_back(r);
        zeros.push_back(identity_field(12, 8));
    }
    const EvalReport rep = evaluate_pairs(pairs, zeros, EvalConfig{});
    REQUIRE(rep.rows.size() == 5);
    for (const auto& row : rep.rows) {
        CHECK(row.dice_before == row.dice_after);
        CHECK(row.mi_before == row.mi_after);
        CHECK(row.nmi_before == row.nmi_after);
    }
    CHECK(rep.test("dice").p >= 0.99);
    CHECK(rep.aggregate("mi_before").median == rep.aggregate("mi_after").median);
    CHECK(rep.column("dice_before").size() == 5);
    CHECK_THROWS_AS(evaluate_pairs(pairs, {zeros[0]}, EvalConfig{}), ParameterError);

    const EvalRow one = evaluate_pair(pairs[2], zeros[2], EvalConfig{});
    CHECK(one.mi_before == hmi_hard(pairs[2].fixed, pairs[2].moving, 32));
    CHECK(one.dice_before == dice(binarize(pairs[2].fixed), binarize(pairs[2].moving)));
}

TEST_CASE("report serialization") {
    testing::TempDir dir("report");
    std::vector<PairRecord> pairs;
    std::vector<DisplacementField> fields;
    for (int i = 0; i < 4; ++i) {
        PairRecord r;
        r.id = "p" + std::to_string(i);
        r.fixed = testing::random_image(8, 8, i);
        r.moving = testing::random_image(8, 8, i + 9);
        pairs.push_back(r);
        fields.push_back(testing::random_field(8, 8, 1.0, i));
    }
    const EvalReport rep = evaluate_pairs(pairs, fields, EvalConfig{16, BinarizeMethod::fixed(0.5)});
    write_report_json(rep, dir / "r.json");
    const EvalReport back = read_report_json(dir / "r.json");
    REQUIRE(back.rows.size() == rep.rows.size());
    for (std::size_t i = 0; i < rep.rows.size(); ++i) {
        CHECK(back.rows[i].id == rep.rows[i].id);
        CHECK(back.rows[i].dice_after == rep.rows[i].dice_after);
        CHECK(back.rows[i].nmi_before == rep.rows[i].nmi_before);
    }
    CHECK(back.config.bins == 16);
    CHECK(back.test("mi").p == rep.test("mi").p);

    write_report_csv(rep, dir / "r.csv");
    const auto csv = testing::read_bytes(dir / "r.csv");
    const std::string text(csv.begin(), csv.end());
    CHECK(text.find("# summary") != std::string::npos);
    CHECK(text.find("# tests") != std::string::npos);
    CHECK(text.find("p3,") != std::string::npos);

    write_violin_csv(rep, dir / "v.csv");
    const auto v = testing::read_bytes(dir / "v.csv");
    CHECK(std::count(v.begin(), v.end(), '\n') == 5);
}
