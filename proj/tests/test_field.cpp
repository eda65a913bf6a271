#include <doctest.h>

#include <cmath>

#include "mmreg/field.hpp"
#include "mmreg/losses.hpp"
#include "support.hpp"

using namespace mmreg;

namespace {

DisplacementField constant_field(std::size_t w, std::size_t h, double dx, double dy) {
    return DisplacementField(w, h, std::vector<double>(w * h, dx), std::vector<double>(w * h, dy));
}

/// Loss L = sum(upstream * warp(img, phi)) so dL/d(warp) = upstream.
double probe_loss(const GrayImage& img, const DisplacementField& phi, const GrayImage& upstream) {
    const GrayImage out = warp_bilinear(img, phi);
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * upstream[i];
    return s;
}

} // namespace

TEST_CASE("identity_field") {
    const DisplacementField f = identity_field(3, 2);
    CHECK(f.size() == 6);
    CHECK(f.max_abs() == 0.0);
    const GrayImage img = testing::random_image(3, 2, 1);
    CHECK(warp_bilinear(img, f) == img);
    CHECK(smoothness(f).value == 0.0);
}

TEST_CASE("warp_bilinear examples") {
    SUBCASE("shift with border clamp") {
        const GrayImage row(3, 1, {0.0, 0.5, 1.0});
        CHECK(warp_bilinear(row, constant_field(3, 1, 1.0, 0.0)).data() == std::vector<double>{0.5, 1.0, 1.0});
    }
    SUBCASE("half-pixel offsets average the clamped neighbourhood") {
        const GrayImage img(2, 2, {0.1, 0.3, 0.5, 0.9});
        const GrayImage out = warp_bilinear(img, constant_field(2, 2, 0.5, 0.5));
        auto at = [&](long x, long y) {
            x = std::clamp(x, 0L, 1L);
            y = std::clamp(y, 0L, 1L);
            return img(static_cast<std::size_t>(x), static_cast<std::size_t>(y));
        };
        for (long y = 0; y < 2; ++y) {
            for (long x = 0; x < 2; ++x) {
                const double mean = 0.25 * (at(x, y) + at(x + 1, y) + at(x, y + 1) + at(x + 1, y + 1));
                CHECK(out(x, y) == doctest::Approx(mean).epsilon(1e-15));
            }
        }
    }
    SUBCASE("dimension mismatch") {
        CHECK_THROWS_AS(warp_bilinear(GrayImage(3, 3), identity_field(3, 2)), ParameterError);
    }
}

TEST_CASE("warp_bilinear stays within the image range and is linear") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const GrayImage a = testing::random_image(9, 7, seed);
        const GrayImage b = testing::random_image(9, 7, seed + 100);
        const DisplacementField phi = testing::random_field(9, 7, 4.0, seed + 200);
        const GrayImage wa = warp_bilinear(a, phi);
        const auto [lo, hi] = std::minmax_element(a.data().begin(), a.data().end());
        for (double v : wa.data()) {
            CHECK(v >= *lo);
            CHECK(v <= *hi);
        }
        GrayImage mix(9, 7);
        for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = 0.3 * a[i] - 1.7 * b[i];
        const GrayImage wm = warp_bilinear(mix, phi);
        const GrayImage wb = warp_bilinear(b, phi);
        for (std::size_t i = 0; i < mix.size(); ++i) CHECK(std::abs(wm[i] - (0.3 * wa[i] - 1.7 * wb[i])) < 1e-12);
    }
}

TEST_CASE("warp_backward trivial cases") {
    const GrayImage img = testing::random_image(6, 5, 2);
    const DisplacementField phi = testing::random_field(6, 5, 2.0, 3);
    const DisplacementField g0 = warp_backward(img, phi, GrayImage(6, 5, 0.0));
    CHECK(g0.max_abs() == 0.0);
    const DisplacementField gc = warp_backward(GrayImage(6, 5, 0.4), phi, testing::random_image(6, 5, 4));
    CHECK(gc.max_abs() == 0.0);
    CHECK_THROWS_AS(warp_backward(img, phi, GrayImage(5, 5)), ParameterError);
}

TEST_CASE("warp_backward matches central differences") {
    for (std::uint64_t seed = 0; seed < 12; ++seed) {
        const GrayImage img = testing::random_image(8, 8, seed);
        const GrayImage upstream = testing::random_image(8, 8, seed + 50);
        const DisplacementField phi = testing::random_field(8, 8, 3.0, seed + 99);
        const DisplacementField grad = warp_backward(img, phi, upstream);
        double worst = 0.0;
        for (std::size_t i = 0; i < phi.size(); ++i) {
            for (int comp = 0; comp < 2; ++comp) {
                auto f = [&](double v) {
                    DisplacementField p = phi;
                    (comp == 0 ? p.dx() : p.dy())[i] = v;
                    return probe_loss(img, p, upstream);
                };
                const double x0 = (comp == 0 ? phi.dx() : phi.dy())[i];
                const double numeric = testing::central_difference(f, x0);
                const double analytic = (comp == 0 ? grad.dx() : grad.dy())[i];
                worst = std::max(worst, testing::rel_error(analytic, numeric));
            }
        }
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("warp_backward uses the right-sided derivative at integer positions") {
    const GrayImage row(3, 1, {0.0, 1.0, 5.0});
    const DisplacementField phi = identity_field(3, 1);
    const DisplacementField g = warp_backward(row, phi, GrayImage(3, 1, 1.0));
    CHECK(g.dx()[0] == doctest::Approx(1.0));
    CHECK(g.dx()[1] == doctest::Approx(4.0));
    // Past the last pixel the clamped image is flat.
    CHECK(g.dx()[2] == doctest::Approx(0.0));
}

TEST_CASE("upsample_field") {
    const DisplacementField f = testing::random_field(5, 4, 2.0, 8);
    CHECK(upsample_field(f, 5, 4) == f);
    CHECK(upsample_field(identity_field(3, 3), 7, 5).max_abs() == 0.0);
    const DisplacementField up = upsample_field(constant_field(2, 2, 1.0, 0.5), 4, 4);
    for (double v : up.dx()) CHECK(v == doctest::Approx(3.0));
    for (double v : up.dy()) CHECK(v == doctest::Approx(1.5));
    CHECK_THROWS_AS(upsample_field(f, 0, 4), ParameterError);
}

TEST_CASE("compose_fields") {
    const DisplacementField f = testing::random_field(6, 6, 2.0, 21);
    const DisplacementField zero = identity_field(6, 6);
    CHECK(compose_fields(zero, f) == f);
    CHECK(compose_fields(f, zero) == f);
    const DisplacementField sum = compose_fields(constant_field(20, 10, 1.0, 0.0), constant_field(20, 10, 2.0, 0.0));
    for (std::size_t y = 2; y < 8; ++y) {
        for (std::size_t x = 2; x < 15; ++x) {
            CHECK(sum.dx(x, y) == doctest::Approx(3.0));
            CHECK(sum.dy(x, y) == doctest::Approx(0.0));
        }
    }
    CHECK_THROWS_AS(compose_fields(f, identity_field(5, 6)), ParameterError);
}

TEST_CASE("composition approximates sequential warps on smooth data") {
    GrayImage img(32, 32);
    for (std::size_t y = 0; y < 32; ++y)
        for (std::size_t x = 0; x < 32; ++x) img(x, y) = 0.5 + 0.4 * std::sin(0.2 * x) * std::cos(0.15 * y);
    const DisplacementField outer = constant_field(32, 32, 1.5, -0.5);
    const DisplacementField inner = constant_field(32, 32, 0.75, 1.25);
    const GrayImage seq = warp_bilinear(warp_bilinear(img, outer), inner);
    const GrayImage once = warp_bilinear(img, compose_fields(outer, inner));
    for (std::size_t y = 4; y < 28; ++y)
        for (std::size_t x = 4; x < 28; ++x) CHECK(std::abs(seq(x, y) - once(x, y)) < 0.01);
}

TEST_CASE("DDF round trip and validation") {
    testing::TempDir dir("ddf");
    const DisplacementField f = testing::random_field(7, 3, 5.0, 12);
    save_ddf(f, dir / "f.ddf");
    const DisplacementField back = load_ddf(dir / "f.ddf");
    REQUIRE(back.same_shape(f));
    for (std::size_t i = 0; i < f.size(); ++i) {
        CHECK(back.dx()[i] == static_cast<double>(static_cast<float>(f.dx()[i])));
        CHECK(back.dy()[i] == static_cast<double>(static_cast<float>(f.dy()[i])));
    }
    auto bytes = testing::read_bytes(dir / "f.ddf");
    CHECK(bytes.size() == 12 + 8 * f.size());
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "DDF1");

    auto bad = bytes;
    bad[3] = '2';
    testing::write_bytes(dir / "magic.ddf", bad);
    CHECK_THROWS_AS(load_ddf(dir / "magic.ddf"), DataError);

    auto truncated = bytes;
    truncated.resize(bytes.size() - 3);
    testing::write_bytes(dir / "short.ddf", truncated);
    CHECK_THROWS_AS(load_ddf(dir / "short.ddf"), DataError);

    CHECK_THROWS_AS(load_ddf(dir / "absent.ddf"), IoError);
}
