#include <doctest.h>

#include <cmath>

#include "espo/trainer.hpp"

using namespace espo;

namespace {

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.hidden = 6;
  cfg.batch_prompts = 3;
  cfg.group_size = 4;
  cfg.steps = 4;
  cfg.max_length = 6;
  cfg.seed = 5;
  return cfg;
}

}  // namespace

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  Rng rng(1);
  PolicyParams p = PolicyParams::random(4, 2, 3, 0.5, rng);
  const PolicyParams before = p;
  AdamState s = AdamState::zeros(p.parameter_count());
  CHECK(adam_update(p, Eigen::VectorXd::Zero(p.parameter_count()), s, AdamConfig{}));
  CHECK(p == before);
}

TEST_CASE("adam: constant gradient steps approach lr times the sign") {
  PolicyParams p = PolicyParams::zeros(4, 2, 3);
  AdamState s = AdamState::zeros(p.parameter_count());
  Eigen::VectorXd g = Eigen::VectorXd::LinSpaced(p.parameter_count(), -2.0, 3.0);
  g(0) = 0.5;
  AdamConfig cfg;
  cfg.lr = 1e-2;
  Eigen::VectorXd prev = p.flatten();
  for (int k = 0; k < 200; ++k) {
    adam_update(p, g, s, cfg);
    const Eigen::VectorXd now = p.flatten();
    const Eigen::VectorXd step = now - prev;
    prev = now;
    if (k == 199)
      for (Eigen::Index j = 0; j < g.size(); ++j)
        if (std::abs(g(j)) > 1e-3) CHECK(std::abs(step(j) + cfg.lr * (g(j) > 0 ? 1 : -1)) <= 1e-6);
  }
}

TEST_CASE("adam: non-finite gradients are rejected without side effects") {
  PolicyParams p = PolicyParams::zeros(4, 2, 3);
  AdamState s = AdamState::zeros(p.parameter_count());
  Eigen::VectorXd g = Eigen::VectorXd::Ones(p.parameter_count());
  g(3) = std::nan("");
  const AdamState before = s;
  CHECK_FALSE(adam_update(p, g, s, AdamConfig{}));
  CHECK(s == before);
  CHECK(p == PolicyParams::zeros(4, 2, 3));
  CHECK_THROWS_AS(adam_update(p, Eigen::VectorXd::Ones(3), s, AdamConfig{}), std::invalid_argument);
}

TEST_CASE("train config validation names the field") {
  TrainConfig cfg;
  cfg.adam.lr = 0.0;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("train.lr"), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.difficulty = 9;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("task.difficulty"), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.mini_epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.difficulty_schedule = {{10, 2}, {20, 3}};
  CHECK(cfg.difficulty_at(0) == 4);
  CHECK(cfg.difficulty_at(10) == 2);
  CHECK(cfg.difficulty_at(25) == 3);
}

TEST_CASE("single on-policy mini-epoch never clips") {
  TrainConfig cfg = small_config();
  cfg.mini_epochs = 1;
  for (Variant v : kAllVariants) {
    Trainer t(cfg, ObjectiveConfig::defaults(v));
    for (int k = 0; k < 3; ++k) {
      const StepOutcome out = t.step();
      for (const StepRecord& r : out.records) {
        CHECK(r.clip_low == 0.0);
        CHECK(r.clip_high == 0.0);
      }
    }
  }
}

TEST_CASE("records are well formed and one per mini-epoch") {
  TrainConfig cfg = small_config();
  cfg.mini_epochs = 3;
  Trainer t(cfg, ObjectiveConfig::defaults(Variant::Espo));
  for (int k = 0; k < 3; ++k) {
    const StepOutcome out = t.step();
    REQUIRE(out.records.size() == 3);
    CHECK(out.batch.size() == 3);
    for (int e = 0; e < 3; ++e) {
      const StepRecord& r = out.records[static_cast<std::size_t>(e)];
      CHECK(r.mini_epoch == e);
      CHECK(r.step == k);
      CHECK(r.accuracy >= 0.0);
      CHECK(r.accuracy <= 1.0);
      CHECK(r.mean_length >= 1.0);
      CHECK(r.clip_low + r.clip_high <= 1.0);
      REQUIRE(r.mean_epsilon.has_value());
      CHECK(*r.mean_epsilon >= 0.0);
      CHECK(*r.mean_epsilon <= 0.02);
    }
  }
}

TEST_CASE("training is deterministic") {
  const TrainConfig cfg = small_config();
  Trainer a(cfg, ObjectiveConfig::defaults(Variant::Espo));
  Trainer b(cfg, ObjectiveConfig::defaults(Variant::Espo));
  for (int k = 0; k < 4; ++k) {
    const StepOutcome x = a.step();
    const StepOutcome y = b.step();
    CHECK(x.records == y.records);
  }
  CHECK(a.params() == b.params());
  CHECK(a.adam() == b.adam());

  TrainConfig threaded = cfg;
  threaded.threads = 3;
  Trainer c(threaded, ObjectiveConfig::defaults(Variant::Espo));
  for (int k = 0; k < 4; ++k) c.step();
  CHECK(c.params() == a.params());
}

TEST_CASE("ratios are taken against the step snapshot") {
  TrainConfig cfg = small_config();
  cfg.mini_epochs = 2;
  PolicyParams p = Trainer(cfg, ObjectiveConfig::defaults(Variant::Grpo)).params();
  AdamState s = AdamState::zeros(p.parameter_count());
  const PolicyParams initial = p;
  const StepOutcome out = train_step(p, s, cfg, ObjectiveConfig::defaults(Variant::Grpo), 0);
  for (const PromptGroup& g : out.batch)
    for (const Rollout& r : g.rollouts) CHECK(r.old_logprobs == response_logprobs(initial, r.prompt, r.response, 1.0));
}

TEST_CASE("skipped steps leave parameters bit identical") {
  TrainConfig cfg = small_config();
  cfg.max_length = 1;  // single-token responses can never be parsed for parity
  Trainer t(cfg, ObjectiveConfig::defaults(Variant::Dapo));
  const PolicyParams before = t.params();
  const StepOutcome out = t.step();
  REQUIRE(out.records.size() == 1);
  CHECK(out.records[0].skipped);
  CHECK(t.params() == before);
  CHECK(t.next_step() == 1);
}

TEST_CASE("checkpoint restore continues the same trajectory") {
  const TrainConfig cfg = small_config();
  Trainer a(cfg, ObjectiveConfig::defaults(Variant::Gspo));
  a.step();
  a.step();
  const Checkpoint ck = a.checkpoint();
  Trainer b(cfg, ObjectiveConfig::defaults(Variant::Gspo));
  b.restore(ck);
  CHECK(b.next_step() == 2);
  CHECK(a.step().records == b.step().records);
  CHECK(a.params() == b.params());

  TrainConfig other = cfg;
  other.seed = 6;
  Trainer c(other, ObjectiveConfig::defaults(Variant::Gspo));
  CHECK_THROWS_AS(c.restore(ck), std::invalid_argument);
}
