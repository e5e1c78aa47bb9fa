#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cfm/errors.hpp"
#include "cfm/objectives.hpp"
#include "cfm/schedules.hpp"
#include "cfm/trainer.hpp"

using namespace cfm;

namespace {

RunConfig tiny_config() {
    RunConfig c;
    c.seed = 5;
    c.batch_size = 16;
    c.samples_per_epoch = 64;
    c.hidden_width = 12;
    c.hidden_layers = 2;
    c.time_features = 4;
    c.condition_dim = 3;
    c.disc_hidden_width = 8;
    c.disc_hidden_layers = 2;
    c.stage1_epochs = 3;
    c.stage2_epochs = 8;
    c.adversarial_epochs = 2;
    return c;
}

const Tensor& tensor(const Checkpoint& ck, const std::string& name) {
    const Tensor* t = ck.find(name);
    REQUIRE(t != nullptr);
    return *t;
}

bool same_generator(const Checkpoint& a, const Checkpoint& b) {
    for (const auto& [name, value] : a.tensors) {
        if (name.rfind("field.", 0) == 0 || name.rfind("embedder.", 0) == 0) {
            const Tensor* other = b.find(name);
            if (other == nullptr || !(*other == value)) {
                return false;
            }
        }
    }
    return true;
}

}  // namespace

TEST_CASE("zero epochs leave the initialization untouched") {
    auto c = tiny_config();
    c.stage1_epochs = 0;
    const Checkpoint fresh = Trainer(c).checkpoint();
    const Checkpoint trained = train_stage1(c, c.problem_spec());
    CHECK(same_generator(fresh, trained));
    CHECK(trained.provenance == "stage1:0");
}

TEST_CASE("same seed reproduces checkpoints and losses bitwise") {
    const auto c = tiny_config();
    Trainer a(c);
    Trainer b(c);
    a.run_stage1();
    b.run_stage1();
    a.run_stage2();
    b.run_stage2();
    CHECK(encode_checkpoint(a.checkpoint()) == encode_checkpoint(b.checkpoint()));
    REQUIRE(a.metrics().size() == b.metrics().size());
    for (std::size_t i = 0; i < a.metrics().size(); ++i) {
        CHECK(a.metrics()[i].loss_total == b.metrics()[i].loss_total);
    }

    auto other = c;
    other.seed = 6;
    Trainer d(other);
    d.run_stage1();
    CHECK_FALSE(same_generator(a.checkpoint(), d.checkpoint()));
}

TEST_CASE("stage 2 keeps the embedder frozen, logs the schedule and shares masks") {
    auto c = tiny_config();
    c.delta_scheduling = true;
    const Checkpoint s1 = train_stage1(c, c.problem_spec());

    Trainer t(s1);
    std::vector<double> logged;
    bool masks_shared = true;
    std::size_t probed = 0;
    t.set_step_observer([&](const StepInfo& info) {
        if (info.step == 0) {
            logged.push_back(info.delta_t);
        }
        REQUIRE(info.online_masks != nullptr);
        masks_shared = masks_shared && info.online_masks->used == info.target_masks->used &&
                       info.online_masks->fingerprints == info.target_masks->fingerprints;
        probed += info.online_masks->used.size();
    });
    t.run_stage2();
    const Checkpoint s2 = t.checkpoint();

    CHECK(tensor(s2, "embedder.table") == tensor(s1, "embedder.table"));
    CHECK_FALSE(tensor(s2, "field.head.weight") == tensor(s1, "field.head.weight"));
    const DeltaSchedule schedule = c.delta_schedule();
    REQUIRE(logged.size() == static_cast<std::size_t>(c.stage2_epochs));
    for (int e = 0; e < c.stage2_epochs; ++e) {
        CHECK(logged[static_cast<std::size_t>(e)] == delta_at(schedule, e));
        CHECK(t.metrics()[static_cast<std::size_t>(e)].delta_t == delta_at(schedule, e));
    }
    CHECK(masks_shared);
    CHECK(probed > 0);
    CHECK(s2.provenance == "stage1:3,stage2:8");
    CHECK(s2.epoch == 11);
    CHECK(s2.stage == "stage2");
}

TEST_CASE("independent masks when sharing is off") {
    auto c = tiny_config();
    c.shared_dropout = false;
    c.stage1_epochs = 0;
    c.stage2_epochs = 1;
    Trainer t(c);
    bool any_different = false;
    t.set_step_observer([&](const StepInfo& info) {
        any_different = any_different || info.online_masks->fingerprints != info.target_masks->fingerprints;
    });
    t.run_stage2();
    CHECK(any_different);
}

TEST_CASE("adversarial stage") {
    auto c = tiny_config();
    c.disc_zero_output_head = true;
    const Checkpoint s1 = train_stage1(c, c.problem_spec());

    SUBCASE("zero epochs is the identity on the generator") {
        auto zero = c;
        zero.adversarial_epochs = 0;
        CHECK(same_generator(train_adversarial(zero, zero.problem_spec(), s1), s1));
    }
    SUBCASE("first discriminator loss with a zero head is 1") {
        Trainer t(s1);
        double first = -1.0;
        t.set_step_observer([&](const StepInfo& info) {
            if (info.epoch == 0 && info.step == 0) {
                first = info.discriminator_loss;
            }
        });
        t.run_adversarial();
        CHECK(first == 1.0);
        CHECK(t.checkpoint().discriminator_steps == 2 * c.steps_per_epoch());
        CHECK(t.stage() == "adversarial");
    }
}

TEST_CASE("stage-1 loss descends on a fixed batch at a small learning rate") {
    auto c = tiny_config();
    RngStream init(1);
    auto vf = c.vector_field_config();
    vf.num_conditions = 2;
    FlowModel model(vf, init);
    RngStream rng(2);
    const auto spec = c.problem_spec();
    auto pairs = sample_pairs(spec, rng, 32);
    const auto times = TimeSampler(2, 0.0).sample(rng, 32);
    TrajectoryBatch batch{pairs.x0, pairs.x1, times.t, times.segment, 0.0, pairs.condition};
    Adam opt({.learning_rate = 1e-5});
    CfmLossConfig cfg;
    std::vector<double> losses;
    for (int step = 0; step < 11; ++step) {
        Tape tape;
        const Var loss = loss_stage1(model, batch, cfg, &tape);
        losses.push_back(loss.value().item());
        opt.step(model.parameters(), tape.backward(loss));
    }
    int violations = 0;
    for (std::size_t i = 1; i < losses.size(); ++i) {
        violations += losses[i] >= losses[i - 1] ? 1 : 0;
    }
    CHECK(violations <= 2);
    CHECK(losses.back() < losses.front());
}

TEST_CASE("single-point stage 1 fits within 2000 steps") {
    RunConfig c;
    c.problem = "single-point";
    c.segments = 1;
    c.hidden_width = 32;
    c.batch_size = 64;
    c.samples_per_epoch = 1024;
    c.stage1_epochs = 125;
    c.learning_rate = 1e-3;
    c.dropout_rate = 0.0;
    Trainer t(c);
    t.run_stage1();
    CHECK(c.steps_per_epoch() * c.stage1_epochs == 2000);
    CHECK(t.metrics().back().loss_total < 1e-2);
}

TEST_CASE("checkpoint restore resumes identically") {
    const auto c = tiny_config();
    Trainer straight(c);
    straight.run_stage1();
    straight.run_stage2();

    Trainer first(c);
    first.run_stage1();
    const auto bytes = encode_checkpoint(first.checkpoint());
    Trainer resumed(decode_checkpoint(bytes));
    resumed.run_stage2();
    CHECK(encode_checkpoint(resumed.checkpoint()) == encode_checkpoint(straight.checkpoint()));
    CHECK(resumed.checkpoint().provenance == "stage1:3,stage2:8");
}

TEST_CASE("metrics csv") {
    CHECK(metrics_csv_header() == "epoch,stage,loss_total,loss_sf,loss_vc,delta_t,wall_seconds");
    const MetricsRow row{3, "stage2", 0.5, 0.25, 0.125, 0.01, 1.5};
    CHECK(to_csv_line(row) == "3,stage2,0.5,0.25,0.125,0.01,1.5");
    const auto path = (std::filesystem::temp_directory_path() / "cfm_metrics_test.csv").string();
    write_metrics_csv({row, row}, path);
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    CHECK(ss.str() == metrics_csv_header() + "\n" + to_csv_line(row) + "\n" + to_csv_line(row) + "\n");
    std::filesystem::remove(path);
}

TEST_CASE("model rebuilt from a checkpoint matches the trainer's model") {
    auto c = tiny_config();
    c.problem = "eight-gaussians";
    Trainer t(c);
    t.run_stage1();
    const FlowModel rebuilt = model_from_checkpoint(t.checkpoint());
    const std::vector<double> times{0.2, 0.7};
    const std::vector<int> cond{1, 7};
    const Tensor x = Tensor::matrix(2, 2, {0.1, 0.2, -1.0, 0.5});
    CHECK(rebuilt.velocity(times, Var(x), cond, nullptr).value() ==
          t.model().velocity(times, Var(x), cond, nullptr).value());
}
