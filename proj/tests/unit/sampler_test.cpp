#include <doctest.h>

#include <cmath>
#include <limits>

#include "cfm/errors.hpp"
#include "cfm/sampler.hpp"

using namespace cfm;

namespace {

Tensor noise(std::uint64_t seed, std::size_t n) {
    RngStream rng(seed);
    return sample_standard_normal(rng, {n, 2});
}

}  // namespace

TEST_CASE("constant field is integrated exactly") {
    const Tensor x0 = Tensor::matrix(2, 2, {0.0, 1.0, -2.0, 0.5});
    const auto field = [](double, const Tensor& x) { return Tensor::full(x.shape(), 0.25); };
    for (int nfe : {1, 2, 4, 8}) {
        const auto r = euler_sample(field, x0, nfe);
        for (std::size_t i = 0; i < x0.size(); ++i) {
            CHECK(r.x1_hat[i] == x0[i] + 0.25);
        }
        CHECK(r.record.states.size() == static_cast<std::size_t>(nfe) + 1);
        CHECK(r.record.times.front() == 0.0);
        CHECK(r.record.times.back() == 1.0);
    }
}

TEST_CASE("linear field matches the compound-interest oracle") {
    const Tensor x0 = Tensor::matrix(1, 2, {1.0, -3.0});
    const auto field = [](double, const Tensor& x) { return x; };
    const std::pair<int, double> cases[] = {{1, 2.0}, {2, 2.25}, {10, 2.5937424601000023}};
    for (const auto& [n, growth] : cases) {
        const auto r = euler_sample(field, x0, n);
        CHECK(r.x1_hat[0] == doctest::Approx(growth).epsilon(1e-12));
        CHECK(r.x1_hat[1] == doctest::Approx(-3.0 * growth).epsilon(1e-12));
    }
}

TEST_CASE("single step is the endpoint map from t = 0") {
    RngStream init(1);
    VectorFieldConfig cfg;
    cfg.hidden_width = 8;
    cfg.num_conditions = 2;
    const FlowModel model(cfg, init);
    const Tensor x0 = noise(2, 5);
    const std::vector<int> cond{0, 1, 1, 0, 1};
    const std::vector<double> zeros(5, 0.0);
    const Tensor v = model.velocity(zeros, Var(x0), cond, nullptr).value();
    const auto r = euler_sample(model, x0, cond, 1);
    for (std::size_t i = 0; i < x0.size(); ++i) {
        CHECK(r.x1_hat[i] == x0[i] + v[i]);
    }
    CHECK(euler_sample(model, x0, cond, 3).x1_hat == euler_sample(model, x0, cond, 3).x1_hat);
}

TEST_CASE("non-finite state reports the failing step") {
    const auto field = [](double t, const Tensor& x) {
        return Tensor::full(x.shape(), t > 0.4 ? std::numeric_limits<double>::infinity() : 1.0);
    };
    try {
        (void)euler_sample(field, Tensor({1, 2}), 4);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::numeric);
        CHECK(std::string(e.what()).find("step 2") != std::string::npos);
    }
    CHECK_THROWS_AS((void)euler_sample(field, Tensor({1, 2}), 0), Error);
}

TEST_CASE("straightness") {
    SUBCASE("constant field gives zero") {
        const auto r = euler_sample([](double, const Tensor& x) { return Tensor::full(x.shape(), -1.5); },
                                    noise(3, 4), 5);
        CHECK(straightness(r.record) == doctest::Approx(0.0).epsilon(1e-15));
    }
    SUBCASE("right-angle path in velocity units") {
        TrajectoryRecord rec;
        rec.nfe = 2;
        rec.times = {0.0, 0.5, 1.0};
        rec.states = {Tensor::matrix(1, 2, {0.0, 0.0}), Tensor::matrix(1, 2, {1.0, 0.0}),
                      Tensor::matrix(1, 2, {1.0, 1.0})};
        const double s = straightness(rec);
        CHECK(s == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));

        for (auto& st : rec.states) {
            for (double& v : st.values()) {
                v *= 2.0;
            }
        }
        CHECK(straightness(rec) == doctest::Approx(2.0 * s).epsilon(1e-15));
    }
    SUBCASE("needs two steps") {
        const auto r = euler_sample([](double, const Tensor& x) { return x; }, noise(4, 2), 1);
        CHECK_THROWS_AS((void)straightness(r.record), Error);
    }
}

TEST_CASE("time-constant field gives the same sample at one and two steps") {
    // v depends on x0 only through the straight line, so Euler is exact.
    const Tensor x0 = noise(5, 16);
    const Tensor target = Tensor::full({16, 2}, 0.75);
    const auto field = [&](double t, const Tensor& x) {
        Tensor v(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) {
            v[i] = (target[i] - x[i]) / (1.0 - t);
        }
        return v;
    };
    const auto one = euler_sample(field, x0, 1);
    const auto two = euler_sample(field, x0, 2);
    for (std::size_t i = 0; i < x0.size(); ++i) {
        CHECK(two.x1_hat[i] == doctest::Approx(one.x1_hat[i]).epsilon(1e-9));
    }
}
