#include <doctest.h>

#include "cfm/config.hpp"
#include "cfm/errors.hpp"

using namespace cfm;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    return ErrorKind::contract;
}

}  // namespace

TEST_CASE("defaults") {
    const RunConfig c;
    CHECK(c.learning_rate == 1e-4);
    CHECK(c.batch_size == 16);
    CHECK(c.alpha == 1e-5);
    CHECK(c.segments == 2);
    CHECK(c.dropout_rate == 0.05);
    CHECK(c.weight_cfm == 3.0);
    CHECK(c.weight_adv == 1.0);
    CHECK(c.weight_fm == 2.0);
    CHECK(c.stage1_epochs == 50);
    CHECK(c.stage2_epochs == 50);
    CHECK(c.adversarial_epochs == 10);
    CHECK_NOTHROW(c.validate());
    CHECK(c.huber_c == 0.0);
    RunConfig h = c;
    h.metric = "pseudo-huber";
    CHECK(h.loss_config().huber_c == doctest::Approx(0.0007636753236814714).epsilon(1e-15));
}

TEST_CASE("schema lists every key with its default") {
    const RunConfig c;
    for (const auto& info : config_schema()) {
        CHECK(get_value(c, info.key) == info.default_value);
        CHECK_FALSE(info.description.empty());
    }
    CHECK(config_schema().size() >= 40);
}

TEST_CASE("canonical text round-trips") {
    RunConfig c;
    c.seed = 77;
    c.alpha = 3.5e-7;
    c.problem = "checkerboard";
    c.delta_scheduling = true;
    const RunConfig back = parse_config(c.canonical_text());
    CHECK(back.canonical_text() == c.canonical_text());
    CHECK(back.alpha == 3.5e-7);
}

TEST_CASE("overrides are type-checked against the schema") {
    RunConfig c;
    apply_override(c, "objective.alpha=1e-3");
    CHECK(c.alpha == 1e-3);
    apply_override(c, " run.seed = 12 ");
    CHECK(c.seed == 12);
    CHECK(kind_of([&] { apply_override(c, "objective.nope=1"); }) == ErrorKind::config);
    CHECK(kind_of([&] { apply_override(c, "run.batch_size=abc"); }) == ErrorKind::config);
    CHECK(kind_of([&] { apply_override(c, "run.batch_size=1.5"); }) == ErrorKind::config);
    CHECK(kind_of([&] { apply_override(c, "objective.freeze_encoder=yes"); }) == ErrorKind::config);
    CHECK(kind_of([&] { apply_override(c, "objective.alpha"); }) == ErrorKind::config);
}

TEST_CASE("parse errors and schema violations are distinguished") {
    CHECK(kind_of([] { (void)parse_config("alpha = 1\n"); }) == ErrorKind::format);
    CHECK(kind_of([] { (void)parse_config("[objective\nalpha = 1\n"); }) == ErrorKind::format);
    CHECK(kind_of([] { (void)parse_config("[objective]\nalpha 1\n"); }) == ErrorKind::format);
    CHECK(kind_of([] { (void)parse_config("[objective]\nbeta = 1\n"); }) == ErrorKind::config);
    CHECK(kind_of([] { (void)parse_config("[objective]\nsegments = 0\n"); }) == ErrorKind::config);
    CHECK(kind_of([] { (void)parse_config("[schedule]\ndelta_t = 0.6\n"); }) == ErrorKind::config);
    CHECK(kind_of([] { (void)load_config("/nonexistent/dir/run.cfg"); }) == ErrorKind::io);

    const auto c = parse_config("# comment\n[run]\nseed = 5\n\n[objective]\nmetric = pseudo-huber\n");
    CHECK(c.seed == 5);
    CHECK(c.metric == "pseudo-huber");
}

TEST_CASE("stage-2 delta per epoch") {
    RunConfig c;
    CHECK(c.delta_for_epoch(10) == 0.01);
    c.delta_scheduling = true;
    CHECK(c.delta_for_epoch(0) == 0.1);
    CHECK(c.delta_for_epoch(49) == 0.001);
}
