#include <doctest.h>

#include <cmath>

#include "cfm/errors.hpp"
#include "cfm/objectives.hpp"

using namespace cfm;

namespace {

VectorFieldConfig tiny_field() {
    VectorFieldConfig c;
    c.hidden_width = 8;
    c.hidden_layers = 2;
    c.time_features = 4;
    c.condition_dim = 2;
    c.num_conditions = 2;
    return c;
}

// Zero head weights with a fixed bias: v(t, x) = value everywhere.
FlowModel constant_model(double value) {
    auto cfg = tiny_field();
    cfg.zero_output_head = true;
    RngStream init(1);
    FlowModel model(cfg, init);
    for (double& b : model.field().parameters().back()->value.values()) {
        b = value;
    }
    return model;
}

FlowModel random_model(std::uint64_t seed) {
    RngStream init(seed);
    return FlowModel(tiny_field(), init);
}

TrajectoryBatch make_batch(Tensor x0, Tensor x1, std::vector<double> t, std::vector<int> segment, double dt) {
    TrajectoryBatch b;
    b.condition.assign(t.size(), 0);
    b.x0 = std::move(x0);
    b.x1 = std::move(x1);
    b.t = std::move(t);
    b.segment = std::move(segment);
    b.delta_t = dt;
    return b;
}

TrajectoryBatch random_batch(RngStream& rng, std::size_t n, int segments, double dt) {
    TrajectoryBatch b;
    b.x0 = sample_standard_normal(rng, {n, 2});
    b.x1 = sample_uniform(rng, {n, 2}, -2.0, 2.0);
    for (std::size_t r = 0; r < n; ++r) {
        const int i = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(segments)));
        const double lo = static_cast<double>(i) / segments;
        const double hi = static_cast<double>(i + 1) / segments - dt;
        b.segment.push_back(i);
        b.t.push_back(lo + (hi - lo) * rng.next_uniform());
        b.condition.push_back(static_cast<int>(rng.next_below(2)));
    }
    b.delta_t = dt;
    return b;
}

TrajectoryBatch duplicated(const TrajectoryBatch& b) {
    TrajectoryBatch out = b;
    const std::size_t n = b.size();
    std::vector<double> x0(b.x0.values().begin(), b.x0.values().end());
    std::vector<double> x1(b.x1.values().begin(), b.x1.values().end());
    x0.insert(x0.end(), b.x0.values().begin(), b.x0.values().end());
    x1.insert(x1.end(), b.x1.values().begin(), b.x1.values().end());
    out.x0 = Tensor({2 * n, 2}, x0);
    out.x1 = Tensor({2 * n, 2}, x1);
    out.t.insert(out.t.end(), b.t.begin(), b.t.end());
    out.segment.insert(out.segment.end(), b.segment.begin(), b.segment.end());
    out.condition.insert(out.condition.end(), b.condition.begin(), b.condition.end());
    return out;
}

TrajectoryBatch reversed(const TrajectoryBatch& b) {
    TrajectoryBatch out = b;
    const std::size_t n = b.size();
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t s = n - 1 - r;
        for (std::size_t c = 0; c < 2; ++c) {
            out.x0.at(r, c) = b.x0.at(s, c);
            out.x1.at(r, c) = b.x1.at(s, c);
        }
        out.t[r] = b.t[s];
        out.segment[r] = b.segment[s];
        out.condition[r] = b.condition[s];
    }
    return out;
}

ErrorKind kind_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    return ErrorKind::contract;
}

}  // namespace

TEST_CASE("interpolate") {
    const Tensor x0 = Tensor::row({0.0, 0.0});
    const Tensor x1 = Tensor::row({2.0, 4.0});
    CHECK(interpolate(x0, x1, 0.0) == x0);
    CHECK(interpolate(x0, x1, 1.0) == x1);
    CHECK(interpolate(x0, x1, 0.25) == Tensor::row({0.5, 1.0}));
    CHECK(kind_of([&] { (void)interpolate(x0, x1, 1.5); }) == ErrorKind::domain);
    CHECK(kind_of([&] { (void)interpolate(x0, Tensor::row({1.0}), 0.5); }) == ErrorKind::dimension);
}

TEST_CASE("segment endpoint") {
    RngStream rng(1);
    const Tensor x0 = sample_standard_normal(rng, {3, 2});
    const Tensor x1 = sample_standard_normal(rng, {3, 2});
    CHECK(segment_endpoint(2, 3, x0, x1) == x1);
    CHECK(segment_endpoint(0, 1, x0, x1) == x1);
    CHECK(segment_endpoint(0, 2, Tensor::row({0.0}), Tensor::row({1.0})) == Tensor::row({0.5}));
    CHECK(kind_of([&] { (void)segment_endpoint(2, 2, x0, x1); }) == ErrorKind::index);
    CHECK(kind_of([&] { (void)segment_endpoint(-1, 2, x0, x1); }) == ErrorKind::index);
}

TEST_CASE("endpoint map") {
    const Tensor x_t = Tensor::row({1.0, 1.0});
    CHECK(endpoint_map(0.3, x_t, Tensor::row({0.0, 0.0}), 0, 1) == x_t);
    CHECK(endpoint_map(0.5, x_t, Tensor::row({7.0, -3.0}), 0, 2) == x_t);
    CHECK(endpoint_map(0.5, x_t, Tensor::row({2.0, -2.0}), 0, 1) == Tensor::row({2.0, 0.0}));
    CHECK(kind_of([&] { (void)endpoint_map(0.75, x_t, x_t, 0, 2); }) == ErrorKind::domain);

    SUBCASE("true velocity from the segment start recovers the endpoint") {
        RngStream rng(2);
        for (int trial = 0; trial < 50; ++trial) {
            const int segments = 1 + static_cast<int>(rng.next_below(4));
            const int i = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(segments)));
            const Tensor x0 = sample_standard_normal(rng, {1, 2});
            const Tensor x1 = sample_standard_normal(rng, {1, 2});
            const double start = static_cast<double>(i) / segments;
            const Tensor xs = interpolate(x0, x1, start);
            const Tensor target = segment_endpoint(i, segments, x0, x1);
            Tensor v(xs.shape());
            for (std::size_t k = 0; k < v.size(); ++k) {
                v[k] = (target[k] - xs[k]) * segments;
            }
            const Tensor f = endpoint_map(start, xs, v, i, segments);
            for (std::size_t k = 0; k < f.size(); ++k) {
                CHECK(f[k] == doctest::Approx(target[k]).epsilon(1e-14));
            }
        }
    }
}

TEST_CASE("pseudo-Huber") {
    const double c = default_huber_c(2);
    CHECK(c == doctest::Approx(0.0007636753236814714).epsilon(1e-15));
    const Var x(Tensor::matrix(1, 2, {0.0, 0.0}));
    const Var y(Tensor::matrix(1, 2, {0.6, 0.8}));
    CHECK(pseudo_huber(x, y, c).value().item() == doctest::Approx(0.999236616276276).epsilon(1e-14));
    CHECK(pseudo_huber(y, y, c).value().item() == doctest::Approx(0.0).epsilon(1e-18));
    CHECK(kind_of([&] { (void)pseudo_huber(x, y, 0.0); }) == ErrorKind::config);

    SUBCASE("bounded by the Euclidean distance and increasing in it") {
        RngStream rng(3);
        double previous = -1.0;
        for (int i = 0; i < 2000; ++i) {
            const Tensor a = sample_uniform(rng, {1, 2}, -3.0, 3.0);
            const Tensor b = sample_uniform(rng, {1, 2}, -3.0, 3.0);
            const double dx = a[0] - b[0];
            const double dy = a[1] - b[1];
            const double norm = std::sqrt(dx * dx + dy * dy);
            const double d = pseudo_huber(Var(a), Var(b), c).value().item();
            CHECK(d >= 0.0);
            CHECK(d <= norm * (1.0 + 1e-15));
        }
        for (double r = 0.0; r <= 4.0; r += 0.25) {
            const double d = pseudo_huber(Var(Tensor::matrix(1, 1, {0.0})), Var(Tensor::matrix(1, 1, {r})), c)
                                 .value()
                                 .item();
            CHECK(d > previous);
            previous = d;
        }
    }
}

TEST_CASE("batch validation") {
    auto b = make_batch(Tensor({2, 2}), Tensor({2, 2}), {0.1, 0.45}, {0, 0}, 0.1);
    CHECK(kind_of([&] { b.validate(2); }) == ErrorKind::domain);
    b.t = {0.1, 0.4};
    CHECK_NOTHROW(b.validate(2));
    b.segment = {0, 2};
    CHECK(kind_of([&] { b.validate(2); }) == ErrorKind::index);
}

TEST_CASE("stage-1 loss") {
    SUBCASE("zero velocity, S = 1, x0 = 0, x1 = 2, t = 0.5") {
        const FlowModel zero = constant_model(0.0);
        const auto b = make_batch(Tensor::matrix(1, 2, {0.0, 0.0}), Tensor::matrix(1, 2, {2.0, 2.0}), {0.5}, {0}, 0.0);
        CfmLossConfig cfg;
        cfg.segments = 1;
        CHECK(loss_stage1(zero, b, cfg, nullptr).value().item() == 1.0);
    }
    SUBCASE("exact-fit velocity gives zero distance") {
        RngStream rng(4);
        const auto b = random_batch(rng, 6, 2, 0.0);
        const Tensor x_t = interpolate(b.x0, b.x1, b.t);
        const Tensor target = segment_endpoint(b.segment, 2, b.x0, b.x1);
        Tensor v(x_t.shape());
        for (std::size_t r = 0; r < b.size(); ++r) {
            const double remaining = (b.segment[r] + 1) / 2.0 - b.t[r];
            for (std::size_t c = 0; c < 2; ++c) {
                v.at(r, c) = (target.at(r, c) - x_t.at(r, c)) / remaining;
            }
        }
        const Var f = endpoint_map(b.t, Var(x_t), Var(v), b.segment, 2);
        CHECK(squared_l2_distance(f, Var(target)).value().item() == doctest::Approx(0.0).epsilon(1e-24));
    }
    SUBCASE("invariant under batch duplication and permutation") {
        RngStream rng(5);
        const auto model = random_model(6);
        const auto b = random_batch(rng, 5, 2, 0.0);
        CfmLossConfig cfg;
        const double base = loss_stage1(model, b, cfg, nullptr).value().item();
        CHECK(loss_stage1(model, duplicated(b), cfg, nullptr).value().item() == doctest::Approx(base).epsilon(1e-14));
        CHECK(loss_stage1(model, reversed(b), cfg, nullptr).value().item() == doctest::Approx(base).epsilon(1e-14));
    }
}

TEST_CASE("stage-2 loss") {
    RngStream rng(7);
    const auto model = random_model(8);
    CfmLossConfig cfg;

    SUBCASE("delta_t = 0 with shared masks gives zero") {
        cfg.delta_t = 0.0;
        const auto b = random_batch(rng, 6, 2, 0.0);
        const auto masks = model.field().draw_masks(rng, 6, 0.05);
        for (const Metric m : {Metric::squared_l2, Metric::pseudo_huber}) {
            cfg.metric = m;
            cfg.huber_c = default_huber_c(2);
            const auto terms = loss_stage2(model, b, cfg, nullptr, {.online_masks = &masks});
            CHECK(terms.straight_flow.value().item() == doctest::Approx(0.0).epsilon(1e-18));
            CHECK(terms.velocity_consistency.value().item() == doctest::Approx(0.0).epsilon(1e-18));
        }
    }
    SUBCASE("constant unit velocity on the x0 = 0, x1 = 1 path") {
        const FlowModel one = constant_model(1.0);
        cfg.delta_t = 0.1;
        const auto b = make_batch(Tensor::matrix(2, 2, {0.0, 0.0, 0.0, 0.0}), Tensor::matrix(2, 2, {1.0, 1.0, 1.0, 1.0}),
                                  {0.1, 0.6}, {0, 1}, 0.1);
        const auto terms = loss_stage2(one, b, cfg, nullptr);
        CHECK(terms.velocity_consistency.value().item() == 0.0);
        CHECK(terms.straight_flow.value().item() == doctest::Approx(0.0).epsilon(1e-28));
    }
    SUBCASE("alpha = 0 reduces to L_sf; components are nonnegative") {
        cfg.delta_t = 0.05;
        const auto b = random_batch(rng, 8, 2, 0.05);
        cfg.alpha = 0.0;
        const auto zero_alpha = loss_stage2(model, b, cfg, nullptr);
        CHECK(zero_alpha.total.value().item() == zero_alpha.straight_flow.value().item());
        cfg.alpha = 0.5;
        const auto terms = loss_stage2(model, b, cfg, nullptr);
        CHECK(terms.straight_flow.value().item() > 0.0);
        CHECK(terms.velocity_consistency.value().item() > 0.0);
        CHECK(terms.total.value().item() ==
              doctest::Approx(terms.straight_flow.value().item() + 0.5 * terms.velocity_consistency.value().item()));
    }
    SUBCASE("shrinks with delta_t for a fixed smooth net") {
        double previous = 1e9;
        for (double dt : {0.2, 0.05, 0.01, 0.001}) {
            RngStream local(9);
            cfg.delta_t = dt;
            const auto b = random_batch(local, 16, 2, dt);
            const double v = loss_stage2(model, b, cfg, nullptr).total.value().item();
            CHECK(v < previous);
            previous = v;
        }
        CHECK(previous < 1e-5);
    }
    SUBCASE("mismatched delta_t between batch and config is rejected") {
        cfg.delta_t = 0.05;
        const auto b = random_batch(rng, 4, 2, 0.1);
        CHECK(kind_of([&] { (void)loss_stage2(model, b, cfg, nullptr); }) == ErrorKind::contract);
    }
    SUBCASE("probes see the same masks in both passes") {
        cfg.delta_t = 0.05;
        const auto b = random_batch(rng, 4, 2, 0.05);
        const auto masks = model.field().draw_masks(rng, 4, 0.05);
        MaskProbe online;
        MaskProbe target;
        Tape tape;
        (void)loss_stage2(model, b, cfg, &tape, {.online_masks = &masks, .online_probe = &online, .target_probe = &target});
        CHECK(online.used.size() == 2);
        CHECK(online.used == target.used);
    }
}

TEST_CASE("baseline flow matching loss") {
    const FlowModel zero = constant_model(0.0);
    const auto b = make_batch(Tensor::matrix(1, 2, {0.0, 0.0}), Tensor::matrix(1, 2, {3.0, 4.0}), {0.4}, {0}, 0.0);
    CHECK(loss_fm_baseline(zero, b, nullptr).value().item() == 12.5);

    const FlowModel exact = constant_model(1.0);
    const auto unit = make_batch(Tensor::matrix(1, 2, {0.0, 0.0}), Tensor::matrix(1, 2, {1.0, 1.0}), {0.7}, {0}, 0.0);
    CHECK(loss_fm_baseline(exact, unit, nullptr).value().item() == 0.0);

    RngStream rng(10);
    const auto model = random_model(11);
    const auto rb = random_batch(rng, 7, 1, 0.0);
    const double base = loss_fm_baseline(model, rb, nullptr).value().item();
    CHECK(loss_fm_baseline(model, reversed(rb), nullptr).value().item() == doctest::Approx(base).epsilon(1e-14));
}

TEST_CASE("adversarial losses") {
    SUBCASE("perfect discriminator has zero loss") {
        // One hidden unit reading the first coordinate: D(x) = leaky(x_0).
        RngStream init(12);
        Discriminator disc({.hidden_width = 1, .hidden_layers = 1}, init);
        auto params = disc.parameters();
        params[0]->value = Tensor({2, 1}, {1.0, 0.0});
        params[1]->value = Tensor({1}, {0.0});
        params[2]->value = Tensor({1, 1}, {1.0});
        params[3]->value = Tensor({1}, {0.0});
        const Tensor fake = Tensor::matrix(2, 2, {0.0, 3.0, 0.0, -1.0});
        const Tensor real = Tensor::matrix(2, 2, {1.0, 5.0, 1.0, 2.0});
        const auto terms = loss_adversarial(disc, Var(fake), real, nullptr);
        CHECK(terms.discriminator.value().item() == 0.0);
        CHECK(terms.generator.value().item() == 1.0);
    }
    SUBCASE("identical batches: zero feature gap; D = 0.5 gives 0.5; D = 0 gives 1") {
        RngStream init(13);
        Discriminator disc({.hidden_width = 6, .hidden_layers = 2, .zero_output_head = true}, init);
        RngStream rng(14);
        const Tensor x = sample_standard_normal(rng, {5, 2});
        auto at_zero = loss_adversarial(disc, Var(x), x, nullptr);
        CHECK(at_zero.feature_matching.value().item() == 0.0);
        CHECK(at_zero.discriminator.value().item() == 1.0);
        disc.parameters().back()->value = Tensor({1}, {0.5});
        CHECK(loss_adversarial(disc, Var(x), x, nullptr).discriminator.value().item() == 0.5);
    }
    SUBCASE("generator terms reach only the vector field; discriminator term reaches only D") {
        const auto model = random_model(15);
        RngStream init(16);
        const Discriminator disc({.hidden_width = 6, .hidden_layers = 2}, init);
        RngStream rng(17);
        CfmLossConfig cfg;
        cfg.delta_t = 0.05;
        const auto b = random_batch(rng, 4, 2, 0.05);
        const Tensor real = segment_endpoint(b.segment, 2, b.x0, b.x1);
        Tape gen;
        Tape dtape;
        const auto terms = loss_stage2(model, b, cfg, &gen);
        const auto adv = loss_adversarial(disc, terms.endpoint_estimate, real, &dtape);
        const auto g = gen.backward(ops::add(adv.generator, adv.feature_matching));
        for (const auto& name : g.parameter_names()) {
            CHECK(name.rfind("disc.", 0) != 0);
        }
        CHECK_FALSE(g.parameter_names().empty());
        const auto d = dtape.backward(adv.discriminator);
        for (const auto& name : d.parameter_names()) {
            CHECK(name.rfind("disc.", 0) == 0);
        }
        CHECK(d.parameter_names().size() == disc.parameters().size());
    }
}
