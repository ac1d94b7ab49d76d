#include <doctest.h>

#include <sstream>

#include "espo/envs.hpp"
#include "espo/policy.hpp"

using namespace espo;

TEST_CASE("task examples") {
  const TaskSpace space{8, 6, 7};
  const std::vector<int> bits{1, 0, 1};
  const Task parity = make_task(TaskKind::Parity, bits, space);
  CHECK(parity.answer == std::vector<int>{symbol_token(0)});
  CHECK(parity.prompt == std::vector<int>{symbol_token(1), symbol_token(0), symbol_token(1), kSepToken});

  const TaskSpace wide{12, 6, 7};
  const std::vector<int> ops{5, 4};
  CHECK(make_task(TaskKind::ModularSum, ops, wide).answer == std::vector<int>{symbol_token(2)});

  const std::vector<int> s{0, 3, 4, 1};
  const Task copy = make_task(TaskKind::Copy, s, space);
  CHECK(copy.answer == std::vector<int>{3, 6, 7, 4});
}

TEST_CASE("task generation is reproducible and respects the context") {
  const TaskSpace space{8, 6, 7};
  Rng a(3), b(3);
  for (int i = 0; i < 20; ++i) CHECK(generate_task(TaskKind::Parity, 4, space, a) == generate_task(TaskKind::Parity, 4, space, b));
  Rng r(1);
  CHECK_THROWS_AS(generate_task(TaskKind::Parity, 6, space, r), std::invalid_argument);
  CHECK_THROWS_AS(generate_task(TaskKind::Parity, 0, space, r), std::invalid_argument);
  CHECK_THROWS_AS(generate_task(TaskKind::ModularSum, 2, space, r), std::invalid_argument);
  for (int d = 1; d <= 5; ++d)
    CHECK(static_cast<int>(generate_task(TaskKind::Copy, d, space, r).prompt.size()) <= space.context);
}

TEST_CASE("verifier verdicts") {
  const TaskSpace space{8, 6, 7};
  const std::vector<int> bits{1, 1, 0, 1};
  const Task t = make_task(TaskKind::Parity, bits, space);
  const int right = t.answer[0];
  const int wrong = right == 3 ? 4 : 3;
  CHECK(verify(t, std::vector<int>{right, kEosToken}) == Verdict::Correct);
  CHECK(verify(t, std::vector<int>{wrong, kEosToken}) == Verdict::Incorrect);
  CHECK(verify(t, std::vector<int>{right, right}) == Verdict::Invalid);
  CHECK(verify(t, std::vector<int>{kEosToken}) == Verdict::Invalid);
  CHECK(verify(t, std::vector<int>{right, 6, kEosToken}) == Verdict::Invalid);
  CHECK(verify(t, std::vector<int>{0, 6, right, kEosToken, wrong}) == Verdict::Correct);

  const std::vector<int> s{0, 1, 2};
  const Task c = make_task(TaskKind::Copy, s, space);
  CHECK(verify(c, std::vector<int>{3, 4, kEosToken}) == Verdict::Invalid);
  CHECK(verify(c, std::vector<int>{3, 4, 6, kEosToken}) == Verdict::Incorrect);
}

TEST_CASE("ground truth plus EOS is always correct") {
  Rng rng(10);
  const TaskSpace space{10, 8, 7};
  for (TaskKind kind : {TaskKind::Parity, TaskKind::ModularSum, TaskKind::Copy})
    for (int i = 0; i < 200; ++i) {
      const Task t = generate_task(kind, 1 + i % 6, space, rng);
      std::vector<int> r = t.answer;
      r.push_back(kEosToken);
      CHECK(verify(t, r) == Verdict::Correct);
      CHECK(verify(t, r) == verify(t, r));
    }
}

TEST_CASE("rewards") {
  CHECK(reward(Verdict::Correct).value == 1.0);
  CHECK(reward(Verdict::Incorrect).value == 0.0);
  CHECK(reward(Verdict::Invalid).value == 0.0);
  CHECK_FALSE(reward(Verdict::Invalid).valid);
  CHECK(reward(Verdict::Incorrect).valid);
}

TEST_CASE("task records round trip") {
  Rng rng(4);
  std::vector<Task> tasks;
  const TaskSpace space{10, 8, 7};
  for (int i = 0; i < 10; ++i) tasks.push_back(generate_task(static_cast<TaskKind>(i % 3), 1 + i % 4, space, rng));
  std::stringstream ss;
  write_tasks(ss, tasks);
  CHECK(read_tasks(ss) == tasks);
  std::stringstream bad("{\"kind\": \"parity\"}\n");
  CHECK_THROWS_AS(read_tasks(bad), std::runtime_error);
  CHECK(parse_task_kind(to_string(TaskKind::ModularSum)) == TaskKind::ModularSum);
  CHECK_THROWS(parse_task_kind("sorting"));
}
