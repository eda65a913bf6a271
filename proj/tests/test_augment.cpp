#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "mmreg/augment.hpp"
#include "mmreg/deform_params.hpp"
#include "support.hpp"

using namespace mmreg;

namespace {

PairRecord small_pair(const std::string& id, std::uint64_t seed) {
    PairRecord r;
    r.id = id;
    r.source_id = id;
    r.fixed = testing::random_image(12, 10, seed);
    r.moving = testing::random_image(12, 10, seed + 1);
    return r;
}

} // namespace

TEST_CASE("DeformParams validation") {
    CHECK_NOTHROW(DeformParams{}.validate());
    CHECK_THROWS_AS((DeformParams{0.0, 1.0, 21, 0}).validate(), ParameterError);
    CHECK_THROWS_AS((DeformParams{1.0, -1.0, 21, 0}).validate(), ParameterError);
    CHECK_THROWS_AS((DeformParams{1.0, 1.0, 20, 0}).validate(), ParameterError);
    CHECK_THROWS_AS((DeformParams{1.0, 1.0, -1, 0}).validate(), ParameterError);
}

TEST_CASE("intensity levels grow stronger") {
    const auto low = IntensityLevel::defaults(Level::low);
    const auto med = IntensityLevel::defaults(Level::medium);
    const auto high = IntensityLevel::defaults(Level::high);
    for (const auto& l : {low, med, high}) CHECK_NOTHROW(l.validate());
    CHECK(low.alpha_range.second < med.alpha_range.second);
    CHECK(med.alpha_range.second < high.alpha_range.second);
    CHECK(level_from_string("med") == Level::medium);
    CHECK(level_from_string(to_string(Level::high)) == Level::high);
    CHECK_THROWS_AS(level_from_string("extreme"), ParameterError);
}

TEST_CASE("LevelMix parsing and allocation") {
    const LevelMix mix = LevelMix::parse("2:2:1");
    std::array<int, 3> counts{};
    for (std::size_t i = 0; i < 40; ++i) ++counts[static_cast<int>(mix.level_for(i, 40).level)];
    CHECK(counts == std::array<int, 3>{16, 16, 8});
    CHECK_THROWS_AS(LevelMix::parse("1:2"), ParameterError);
    CHECK_THROWS_AS(LevelMix::parse("1:x:2"), ParameterError);
    CHECK_THROWS_AS(LevelMix::parse("0:0:0"), ParameterError);
    CHECK_THROWS_AS(LevelMix::parse("1:-1:2"), ParameterError);
}

TEST_CASE("random_unit_field") {
    const DisplacementField a = random_unit_field(100, 50, 42);
    CHECK(a == random_unit_field(100, 50, 42));
    CHECK(!(a == random_unit_field(100, 50, 43)));
    CHECK(a.max_abs() <= 1.0);
    double mean = 0.0, sq = 0.0;
    for (double v : a.dx()) {
        mean += v;
        sq += v * v;
    }
    const double n = static_cast<double>(a.size());
    mean /= n;
    const double var = sq / n - mean * mean;
    CHECK(std::abs(mean) < 0.05);
    CHECK(std::abs(var - 1.0 / 3.0) < 0.05);
}

TEST_CASE("gaussian_kernel") {
    for (int f : {1, 3, 21, 41}) {
        const auto k = gaussian_kernel(f, 3.0);
        CHECK(k.size() == static_cast<std::size_t>(f * f));
        CHECK(std::abs(std::accumulate(k.begin(), k.end(), 0.0) - 1.0) < 1e-12);
    }
    CHECK_THROWS_AS(gaussian_kernel(4, 1.0), ParameterError);
}

TEST_CASE("gaussian_smooth_field") {
    SUBCASE("constant field unchanged") {
        const DisplacementField c(9, 9, std::vector<double>(81, 0.7), std::vector<double>(81, -0.2));
        const DisplacementField s = gaussian_smooth_field(c, {2.0, 1.0, 7, 0});
        for (double v : s.dx()) CHECK(v == doctest::Approx(0.7).epsilon(1e-12));
        for (double v : s.dy()) CHECK(v == doctest::Approx(-0.2).epsilon(1e-12));
    }
    SUBCASE("F = 1 is the identity") {
        const DisplacementField f = random_unit_field(8, 6, 1);
        CHECK(gaussian_smooth_field(f, {3.0, 1.0, 1, 0}) == f);
    }
    SUBCASE("impulse response equals the kernel") {
        DisplacementField f(7, 7);
        f.dx(3, 3) = 1.0;
        const DisplacementField s = gaussian_smooth_field(f, {0.8, 1.0, 3, 0});
        double norm = 0.0;
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) norm += std::exp(-(dx * dx + dy * dy) / (2 * 0.64));
        for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
                const double expected = std::exp(-(dx * dx + dy * dy) / (2 * 0.64)) / norm;
                CHECK(s.dx(3 + dx, 3 + dy) == doctest::Approx(expected).epsilon(1e-12));
            }
        }
        CHECK(s.dx(0, 0) == 0.0);
        CHECK(s.dy().size() == 49);
    }
    SUBCASE("even filter size") {
        CHECK_THROWS_AS(gaussian_smooth_field(random_unit_field(4, 4, 0), {1.0, 1.0, 4, 0}), ParameterError);
    }
    SUBCASE("shift equivariance away from borders") {
        const int F = 5;
        const DisplacementField base = random_unit_field(30, 30, 77);
        DisplacementField shifted(30, 30);
        for (std::size_t y = 0; y < 30; ++y)
            for (std::size_t x = 0; x < 30; ++x) {
                shifted.dx(x, y) = base.dx((x + 29) % 30, (y + 28) % 30);
                shifted.dy(x, y) = base.dy((x + 29) % 30, (y + 28) % 30);
            }
        const DeformParams p{1.5, 1.0, F, 0};
        const DisplacementField a = gaussian_smooth_field(base, p);
        const DisplacementField b = gaussian_smooth_field(shifted, p);
        for (std::size_t y = 2 * F; y < 30 - 2 * F; ++y)
            for (std::size_t x = 2 * F; x < 30 - 2 * F; ++x)
                CHECK(b.dx(x, y) == doctest::Approx(a.dx(x - 1, y - 2)).epsilon(1e-12));
    }
}

TEST_CASE("elastic_deform") {
    const GrayImage img = testing::random_image(24, 16, 3);
    SUBCASE("alpha zero is the identity") {
        const auto r = elastic_deform(img, {5.0, 0.0, 11, 9});
        CHECK(r.image == img);
        CHECK(r.field.max_abs() == 0.0);
    }
    SUBCASE("deterministic and bounded") {
        Xoshiro256pp rng(5);
        for (int k = 0; k < 50; ++k) {
            const DeformParams p{rng.uniform(1.0, 10.0), rng.uniform(0.0, 40.0), 1 + 2 * static_cast<int>(rng.below(20)),
                                 rng()};
            const auto a = elastic_deform(img, p);
            const auto b = elastic_deform(img, p);
            CHECK(a.image == b.image);
            CHECK(a.field == b.field);
            CHECK(a.field.max_abs() <= p.alpha);
            CHECK(a.image == warp_bilinear(img, a.field));
        }
    }
    SUBCASE("mean magnitude grows with alpha") {
        double previous = -1.0;
        for (double alpha : {0.0, 1.0, 4.0, 16.0}) {
            const auto r = elastic_deform(img, {4.0, alpha, 11, 123});
            double m = 0.0;
            for (std::size_t i = 0; i < r.field.size(); ++i) m += std::hypot(r.field.dx()[i], r.field.dy()[i]);
            CHECK(m >= previous);
            previous = m;
        }
    }
}

TEST_CASE("sample_deform_params") {
    const auto high = IntensityLevel::defaults(Level::high);
    CHECK(sample_deform_params(high, 7) == sample_deform_params(high, 7));
    double alpha_sum = 0.0;
    for (std::uint64_t s = 0; s < 1000; ++s) {
        const DeformParams p = sample_deform_params(high, s);
        CHECK_NOTHROW(p.validate());
        CHECK(p.alpha >= high.alpha_range.first);
        CHECK(p.alpha <= high.alpha_range.second);
        CHECK(p.sigma >= high.sigma_range.first);
        CHECK(p.sigma <= high.sigma_range.second);
        CHECK(std::find(high.filter_choices.begin(), high.filter_choices.end(), p.filter_size) !=
              high.filter_choices.end());
        alpha_sum += p.alpha;
    }
    const double mean = alpha_sum / 1000.0;
    CHECK(mean > high.alpha_range.first);
    CHECK(mean < high.alpha_range.second);
}

TEST_CASE("build_augmented_set") {
    std::vector<PairRecord> pairs;
    for (int i = 0; i < 113; ++i) pairs.push_back(small_pair("p" + std::to_string(i), 1000 + i));

    SUBCASE("five per pair") {
        const auto out = build_augmented_set(pairs, 5, LevelMix{}, 3, AugmentMode::unsupervised);
        CHECK(out.size() == 565);
        for (const auto& r : out) {
            REQUIRE(r.truth_field);
            REQUIRE(r.deform);
            CHECK(r.truth_field->max_abs() <= r.deform->alpha);
        }
        CHECK(out[7].source_id == "p1");
    }
    SUBCASE("unsupervised deforms the fixed image") {
        const auto out = build_augmented_set({pairs[0]}, 3, LevelMix{}, 3, AugmentMode::unsupervised);
        for (const auto& r : out) {
            CHECK(r.moving == pairs[0].moving);
            CHECK(r.fixed == warp_bilinear(pairs[0].fixed, *r.truth_field));
            CHECK(!r.label);
        }
    }
    SUBCASE("supervised deforms the moving image and keeps it as label") {
        const auto out = build_augmented_set({pairs[0]}, 3, LevelMix{}, 3, AugmentMode::supervised);
        for (const auto& r : out) {
            CHECK(r.fixed == pairs[0].fixed);
            REQUIRE(r.label);
            CHECK(*r.label == pairs[0].moving);
            CHECK(r.moving == warp_bilinear(pairs[0].moving, *r.truth_field));
        }
    }
    SUBCASE("zero-alpha level reproduces the reference") {
        LevelMix still;
        for (auto& l : still.levels) l.alpha_range = {0.0, 0.0};
        const auto out = build_augmented_set({pairs[1]}, 1, still, 9, AugmentMode::supervised);
        REQUIRE(out.size() == 1);
        CHECK(out[0].moving == *out[0].label);
    }
    SUBCASE("pure function of inputs and seed") {
        const auto a = build_augmented_set({pairs[2], pairs[3]}, 4, LevelMix{}, 17, AugmentMode::unsupervised);
        const auto b = build_augmented_set({pairs[2], pairs[3]}, 4, LevelMix{}, 17, AugmentMode::unsupervised);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].id == b[i].id);
            CHECK(a[i].fixed == b[i].fixed);
            CHECK(a[i].truth_field == b[i].truth_field);
        }
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(build_augmented_set({}, 5, LevelMix{}, 1, AugmentMode::unsupervised), ParameterError);
        CHECK_THROWS_AS(build_augmented_set(pairs, 0, LevelMix{}, 1, AugmentMode::unsupervised), ParameterError);
    }
}
