#include <doctest.h>

#include <cmath>

#include "cfm/data.hpp"
#include "cfm/errors.hpp"

using namespace cfm;

TEST_CASE("problem names") {
    for (const char* name : {"single-point", "eight-gaussians", "two-moons", "checkerboard"}) {
        CHECK(ProblemSpec::named(name).name() == name);
    }
    CHECK_THROWS_AS((void)parse_problem_kind("spiral"), Error);
    CHECK(ProblemSpec::named("eight-gaussians").num_conditions() == 8);
    CHECK(ProblemSpec::named("two-moons").num_conditions() == 2);
}

TEST_CASE("single point target") {
    const auto spec = ProblemSpec::named("single-point");
    RngStream rng(1);
    const auto pairs = sample_pairs(spec, rng, 64);
    for (std::size_t r = 0; r < 64; ++r) {
        CHECK(pairs.x1.at(r, 0) == 1.5);
        CHECK(pairs.x1.at(r, 1) == -0.5);
        CHECK(pairs.condition[r] == 0);
    }
}

TEST_CASE("pairs are deterministic for a given stream state") {
    const auto spec = ProblemSpec::named("two-moons");
    RngStream a(9, 4);
    RngStream b(9, 4);
    const auto pa = sample_pairs(spec, a, 32);
    const auto pb = sample_pairs(spec, b, 32);
    CHECK(pa.x0 == pb.x0);
    CHECK(pa.x1 == pb.x1);
    CHECK(pa.condition == pb.condition);
}

TEST_CASE("eight gaussians component means") {
    const auto spec = ProblemSpec::named("eight-gaussians");
    RngStream rng(2);
    for (int k = 0; k < 8; ++k) {
        const Tensor x = sample_target(spec, rng, k, 10000);
        double mx = 0.0;
        double my = 0.0;
        for (std::size_t r = 0; r < x.rows(); ++r) {
            mx += x.at(r, 0);
            my += x.at(r, 1);
        }
        const auto c = gaussian_center(spec, k);
        CHECK(std::abs(mx / 1e4 - c[0]) < 0.05);
        CHECK(std::abs(my / 1e4 - c[1]) < 0.05);
        CHECK(std::hypot(c[0], c[1]) == doctest::Approx(2.0));
    }
}

TEST_CASE("two moons labels are balanced") {
    const auto spec = ProblemSpec::named("two-moons");
    RngStream rng(3);
    const auto pairs = sample_pairs(spec, rng, 100000);
    std::size_t zeros = 0;
    for (int c : pairs.condition) {
        CHECK((c == 0 || c == 1));
        zeros += c == 0 ? 1 : 0;
    }
    const double fraction = static_cast<double>(zeros) / 1e5;
    CHECK(fraction >= 0.49);
    CHECK(fraction <= 0.51);
    CHECK(pairs.x1.all_finite());
}

TEST_CASE("checkerboard samples stay inside their cell") {
    const auto spec = ProblemSpec::named("checkerboard");
    RngStream rng(4);
    const auto pairs = sample_pairs(spec, rng, 5000);
    for (std::size_t r = 0; r < 5000; ++r) {
        const auto cell = checkerboard_cell(pairs.condition[r]);
        const double x = pairs.x1.at(r, 0);
        const double y = pairs.x1.at(r, 1);
        if (!(x >= cell[0] && x <= cell[0] + 1.0 && y >= cell[1] && y <= cell[1] + 1.0)) {
            FAIL("sample outside its cell");
        }
        CHECK(std::abs(x) <= 2.0);
        CHECK(std::abs(y) <= 2.0);
    }
    CHECK_THROWS_AS((void)checkerboard_cell(8), Error);
}

TEST_CASE("noise source is standard normal") {
    const auto spec = ProblemSpec::named("two-moons");
    RngStream rng(5);
    const auto pairs = sample_pairs(spec, rng, 50000);
    double mean = 0.0;
    double sq = 0.0;
    for (double v : pairs.x0.values()) {
        mean += v;
        sq += v * v;
    }
    mean /= 1e5;
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(sq / 1e5 - 1.0) < 0.05);
}
