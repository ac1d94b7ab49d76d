#include <doctest.h>

#include <cmath>
#include <sstream>

#include "espo/rollout.hpp"

using namespace espo;

namespace {

PromptGroup group_with(const std::vector<double>& rewards, const std::vector<Verdict>& verdicts) {
  PromptGroup g;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    Rollout r;
    r.response = {3, 1};
    r.old_logprobs = {-1.0, -1.0};
    r.entropies = {1.0, 1.0};
    r.reward = rewards[i];
    r.verdict = verdicts[i];
    g.rollouts.push_back(r);
  }
  return g;
}

Task parity_task() {
  Rng rng(2);
  return generate_task(TaskKind::Parity, 3, TaskSpace{}, rng);
}

}  // namespace

TEST_CASE("advantage examples") {
  using V = Verdict;
  PromptGroup g = group_with({1, 0, 1, 0}, {V::Correct, V::Incorrect, V::Correct, V::Incorrect});
  compute_advantages(g);
  CHECK(g.advantages == std::vector<double>{1, -1, 1, -1});
  CHECK(g.rollouts[1].token_advantages == std::vector<double>{-1, -1});

  g = group_with({1, 1, 1, 1}, {V::Correct, V::Correct, V::Correct, V::Correct});
  compute_advantages(g);
  CHECK(g.advantages == std::vector<double>{0, 0, 0, 0});
  CHECK_FALSE(has_signal(g));

  g = group_with({1, 0, 0}, {V::Correct, V::Incorrect, V::Invalid});
  compute_advantages(g);
  CHECK(g.advantages == std::vector<double>{1, -1, 0});

  g = group_with({1, 0, 0}, {V::Correct, V::Invalid, V::Invalid});
  compute_advantages(g);
  CHECK(g.advantages == std::vector<double>{0, 0, 0});
}

TEST_CASE("correct-only valid set is degenerate for binary rewards") {
  using V = Verdict;
  PromptGroup g = group_with({1, 0, 1, 0}, {V::Correct, V::Incorrect, V::Correct, V::Incorrect});
  compute_advantages(g, 1e-6, ValidSet::Correct);
  CHECK(g.advantages == std::vector<double>{0, 0, 0, 0});
}

TEST_CASE("advantage normalization over random groups") {
  Rng rng(99);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 2 + static_cast<int>(uniform01(rng) * 8);
    std::vector<double> rewards;
    std::vector<Verdict> verdicts;
    for (int i = 0; i < n; ++i) {
      const double u = uniform01(rng);
      verdicts.push_back(u < 0.2 ? Verdict::Invalid : (u < 0.6 ? Verdict::Correct : Verdict::Incorrect));
      rewards.push_back(verdicts.back() == Verdict::Correct ? 1.0 : 0.0);
    }
    PromptGroup g = group_with(rewards, verdicts);
    compute_advantages(g);
    double sum = 0, sq = 0;
    int valid = 0;
    for (int i = 0; i < n; ++i) {
      if (verdicts[static_cast<std::size_t>(i)] == Verdict::Invalid) {
        CHECK(g.advantages[static_cast<std::size_t>(i)] == 0.0);
        continue;
      }
      ++valid;
      sum += g.advantages[static_cast<std::size_t>(i)];
      sq += g.advantages[static_cast<std::size_t>(i)] * g.advantages[static_cast<std::size_t>(i)];
    }
    if (has_signal(g)) {
      CHECK(std::abs(sum) <= 1e-12);
      CHECK(std::abs(std::sqrt(sq / valid) - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("dynamic filter drops groups without signal") {
  using V = Verdict;
  std::vector<PromptGroup> batch;
  batch.push_back(group_with({1, 1, 1, 1}, {V::Correct, V::Correct, V::Correct, V::Correct}));
  batch.push_back(group_with({1, 0, 0, 0}, {V::Correct, V::Incorrect, V::Incorrect, V::Incorrect}));
  batch.push_back(group_with({0, 1}, {V::Incorrect, V::Correct}));
  for (std::size_t b = 0; b < batch.size(); ++b) {
    batch[b].prompt_id = static_cast<std::int64_t>(b);
    compute_advantages(batch[b]);
  }
  const auto kept = dynamic_filter(batch);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].prompt_id == 1);
  CHECK(kept[1].prompt_id == 2);
  batch.erase(batch.begin() + 1, batch.end());
  CHECK(dynamic_filter(batch).empty());
}

TEST_CASE("collect_group aligns arrays and is reproducible") {
  Rng rng(6);
  const PolicySnapshot snap = snapshot(PolicyParams::random(8, 6, 8, 0.5, rng));
  const Task task = parity_task();
  const SamplingConfig cfg{8, 16, 1.0, 42};
  const PromptGroup g = collect_group(snap, task, 3, cfg);
  REQUIRE(g.group_size() == 8);
  for (const Rollout& r : g.rollouts) {
    CHECK(r.length() >= 1);
    CHECK(r.old_logprobs.size() == r.length());
    CHECK(r.entropies.size() == r.length());
    for (double e : r.entropies) {
      CHECK(e >= 0.0);
      CHECK(e <= std::log(8.0));
    }
    CHECK(r.old_logprobs == response_logprobs(snap.params(), r.prompt, r.response, 1.0));
    CHECK(r.truncated == (r.response.back() != kEosToken));
    if (r.truncated) CHECK(r.verdict == Verdict::Invalid);
    CHECK(r.verdict == verify(task, r.response));
  }
  const PromptGroup again = collect_group(snap, task, 3, cfg);
  for (int i = 0; i < 8; ++i) {
    CHECK(again.rollouts[static_cast<std::size_t>(i)].response == g.rollouts[static_cast<std::size_t>(i)].response);
    CHECK(again.rollouts[static_cast<std::size_t>(i)].old_logprobs ==
          g.rollouts[static_cast<std::size_t>(i)].old_logprobs);
  }
  const PromptGroup other = collect_group(snap, task, 4, cfg);
  bool differs = false;
  for (int i = 0; i < 8; ++i)
    differs = differs || other.rollouts[static_cast<std::size_t>(i)].response != g.rollouts[static_cast<std::size_t>(i)].response;
  CHECK(differs);

  const SamplingConfig greedy{6, 16, 1e-9, 42};
  const PromptGroup gg = collect_group(snap, task, 0, greedy);
  for (const Rollout& r : gg.rollouts) CHECK(r.response == gg.rollouts[0].response);

  const SamplingConfig single{1, 16, 1.0, 42};
  CHECK_THROWS_AS(collect_group(snap, task, 0, single), std::invalid_argument);
}

TEST_CASE("rollout log round trip") {
  Rng rng(6);
  const PolicySnapshot snap = snapshot(PolicyParams::random(8, 6, 8, 0.5, rng));
  const SamplingConfig cfg{4, 10, 1.0, 7};
  std::vector<PromptGroup> batch{collect_group(snap, parity_task(), 0, cfg), collect_group(snap, parity_task(), 1, cfg)};
  std::stringstream ss;
  write_rollout_log(ss, 5, batch);
  const auto logged = read_rollout_log(ss);
  REQUIRE(logged.size() == 2);
  for (std::size_t b = 0; b < 2; ++b) {
    CHECK(logged[b].step == 5);
    CHECK(logged[b].group.prompt_id == batch[b].prompt_id);
    for (std::size_t i = 0; i < 4; ++i) {
      const Rollout& x = logged[b].group.rollouts[i];
      const Rollout& y = batch[b].rollouts[i];
      CHECK(x.response == y.response);
      CHECK(x.prompt == y.prompt);
      CHECK(x.old_logprobs == y.old_logprobs);
      CHECK(x.entropies == y.entropies);
      CHECK(x.verdict == y.verdict);
      CHECK(x.truncated == y.truncated);
    }
  }
}

TEST_CASE("derived seeds differ across streams") {
  CHECK(derive_seed(1, 2, 3) == derive_seed(1, 2, 3));
  CHECK(derive_seed(1, 2, 3) != derive_seed(1, 3, 2));
  CHECK(derive_seed(1, 2, 3) != derive_seed(2, 2, 3));
}
