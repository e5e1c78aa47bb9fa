#include <doctest.h>

#include <cmath>
#include <limits>

#include "cfm/autodiff.hpp"
#include "cfm/errors.hpp"
#include "cfm/gradcheck.hpp"
#include "cfm/ops.hpp"

using namespace cfm;
namespace o = cfm::ops;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected cfm::Error");
    return ErrorKind::contract;
}

}  // namespace

TEST_CASE("elementwise add") {
    const Var a(Tensor::row({1.0, 2.0}));
    const Var b(Tensor::row({3.0, 4.0}));
    const Var c = o::add(a, b);
    CHECK(c.value()[0] == 4.0);
    CHECK(c.value()[1] == 6.0);
    CHECK_FALSE(c.tracked());
}

TEST_CASE("matmul with identity returns the input") {
    const Tensor x = Tensor::matrix(2, 2, {1.0, 2.0, 3.0, 4.0});
    const Tensor eye = Tensor::matrix(2, 2, {1.0, 0.0, 0.0, 1.0});
    CHECK(o::matmul(Var(x), Var(eye)).value() == x);
    CHECK(kind_of([&] { (void)o::matmul(Var(x), Var(Tensor::matrix(3, 1, {1, 2, 3}))); }) == ErrorKind::dimension);
}

TEST_CASE("backward through mean and sum of squares") {
    SUBCASE("mean over three entries") {
        Tape tape;
        const Var x = tape.leaf(Tensor::row({1.0, 2.0, 3.0}));
        const auto g = tape.backward(o::mean(x));
        for (double v : g.wrt(x).values()) {
            CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
        }
    }
    SUBCASE("sum of squares") {
        Tape tape;
        const Var x = tape.leaf(Tensor::row({1.0, 2.0}));
        const auto g = tape.backward(o::sum(o::square(x)));
        CHECK(g.wrt(x)[0] == 2.0);
        CHECK(g.wrt(x)[1] == 4.0);
    }
    SUBCASE("a variable used twice accumulates") {
        Tape tape;
        const Var x = tape.leaf(Tensor::row({3.0}));
        const auto g = tape.backward(o::sum(o::multiply(x, x)));
        CHECK(g.wrt(x)[0] == 6.0);
    }
}

TEST_CASE("backward edge cases") {
    SUBCASE("loss independent of the leaf gives a zero gradient") {
        Tape tape;
        const Var x = tape.leaf(Tensor::row({1.0, 2.0}));
        const auto g = tape.backward(o::sum(Var(Tensor::row({5.0}))));
        CHECK(g.wrt(x) == Tensor::row({0.0, 0.0}));
    }
    SUBCASE("non-scalar loss is a contract error") {
        Tape tape;
        const Var x = tape.leaf(Tensor::row({1.0, 2.0}));
        CHECK(kind_of([&] { (void)tape.backward(o::square(x)); }) == ErrorKind::contract);
    }
    SUBCASE("a tape is single use") {
        Tape tape;
        const Var x = tape.leaf(Tensor::row({1.0}));
        const Var loss = o::sum(x);
        (void)tape.backward(loss);
        CHECK(tape.consumed());
        CHECK_THROWS_AS((void)tape.backward(loss), Error);
    }
    SUBCASE("non-finite loss is a numeric error") {
        const double nan = std::numeric_limits<double>::quiet_NaN();
        Tape tape;
        CHECK(kind_of([&] { (void)tape.leaf(Tensor::row({nan})); }) == ErrorKind::numeric);
        const Var x = tape.leaf(Tensor::row({1.0}));
        CHECK(kind_of([&] { (void)o::scale(x, nan); }) == ErrorKind::numeric);
    }
    SUBCASE("sqrt of a negative value is a numeric error") {
        CHECK(kind_of([] { (void)o::sqrt(Var(Tensor::row({-1.0}))); }) == ErrorKind::numeric);
    }
}

TEST_CASE("parameters and freezing") {
    Parameter w{"w", Tensor::row({1.0, -2.0}), false};
    Parameter frozen{"f", Tensor::row({0.5, 0.5}), true};
    Tape tape;
    const Var pw = tape.param(w);
    CHECK(tape.param(w).node() == pw.node());
    const Var pf = tape.param(frozen);
    CHECK_FALSE(pf.tracked());
    const auto g = tape.backward(o::sum(o::multiply(pw, pf)));
    REQUIRE(g.find(w) != nullptr);
    CHECK(*g.find(w) == Tensor::row({0.5, 0.5}));
    CHECK(g.find(frozen) == nullptr);
    CHECK(g.parameter_names() == std::vector<std::string>{"w"});
}

TEST_CASE("constant-only ops do not grow a tape") {
    Tape tape;
    (void)tape.leaf(Tensor::row({1.0}));
    const std::size_t before = tape.size();
    (void)o::gelu(o::add(Var(Tensor::row({1.0})), Var(Tensor::row({2.0}))));
    CHECK(tape.size() == before);
}

TEST_CASE("relative gradient error convention") {
    CHECK(relative_gradient_error(Tensor::row({1.0, 0.0}), Tensor::row({1.0, 0.0})) == 0.0);
    CHECK(relative_gradient_error(Tensor::row({0.0}), Tensor::row({0.0})) == 0.0);
    CHECK(relative_gradient_error(Tensor::row({3.0, 4.0}), Tensor::row({0.0, 0.0})) == doctest::Approx(1.0));
}

TEST_CASE("finite-difference suite passes") {
    GradcheckOptions opts;
    opts.instances = 4;
    for (const auto& r : run_gradcheck_suite(opts)) {
        INFO(r.name << " max rel err " << r.max_relative_error);
        CHECK(r.passed);
        CHECK(r.max_relative_error < 1e-4);
    }
}
