#include "espo/envs.hpp"

#include <algorithm>
#include <istream>
#include <json.hpp>
#include <ostream>
#include <stdexcept>

#include "espo/policy.hpp"

namespace espo {

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::Parity: return "parity";
    case TaskKind::ModularSum: return "modular-sum";
    case TaskKind::Copy: return "copy";
  }
  return "?";
}

TaskKind parse_task_kind(const std::string& name) {
  if (name == "parity") return TaskKind::Parity;
  if (name == "modular-sum" || name == "modsum") return TaskKind::ModularSum;
  if (name == "copy") return TaskKind::Copy;
  throw std::invalid_argument("unknown task kind '" + name + "'");
}

std::string to_string(Verdict verdict) {
  switch (verdict) {
    case Verdict::Correct: return "correct";
    case Verdict::Incorrect: return "incorrect";
    case Verdict::Invalid: return "invalid";
  }
  return "?";
}

Verdict parse_verdict(const std::string& name) {
  if (name == "correct") return Verdict::Correct;
  if (name == "incorrect") return Verdict::Incorrect;
  if (name == "invalid") return Verdict::Invalid;
  throw std::invalid_argument("unknown verdict '" + name + "'");
}

int answer_arity(TaskKind kind, int difficulty) {
  return kind == TaskKind::Copy ? difficulty : 1;
}

int alphabet_size(TaskKind kind, const TaskSpace& space) {
  switch (kind) {
    case TaskKind::Parity: return 2;
    case TaskKind::ModularSum: return space.modulus;
    case TaskKind::Copy: return space.vocab - kFirstSymbol;
  }
  return 0;
}

Task make_task(TaskKind kind, std::span<const int> symbols, const TaskSpace& space) {
  const int difficulty = static_cast<int>(symbols.size());
  if (difficulty < 1) throw std::invalid_argument("task: difficulty must be >= 1");
  if (difficulty + 1 > space.context)
    throw std::invalid_argument("task: prompt of " + std::to_string(difficulty + 1) +
                                " tokens exceeds context " + std::to_string(space.context));
  if (kind == TaskKind::ModularSum && space.modulus < 2) throw std::invalid_argument("task: modulus must be >= 2");
  const int alphabet = alphabet_size(kind, space);
  if (alphabet < 1 || kFirstSymbol + alphabet > space.vocab)
    throw std::invalid_argument("task: vocabulary of " + std::to_string(space.vocab) + " cannot hold " +
                                to_string(kind) + " symbols");
  Task task;
  task.kind = kind;
  task.difficulty = difficulty;
  task.alphabet = alphabet;
  task.modulus = kind == TaskKind::ModularSum ? space.modulus : 0;
  int acc = 0;
  for (int s : symbols) {
    if (s < 0 || s >= alphabet) throw std::invalid_argument("task: symbol out of alphabet");
    task.prompt.push_back(symbol_token(s));
    acc += s;
  }
  task.prompt.push_back(kSepToken);
  switch (kind) {
    case TaskKind::Parity: task.answer = {symbol_token(acc % 2)}; break;
    case TaskKind::ModularSum: task.answer = {symbol_token(acc % space.modulus)}; break;
    case TaskKind::Copy: task.answer.assign(task.prompt.begin(), task.prompt.end() - 1); break;
  }
  return task;
}

Task generate_task(TaskKind kind, int difficulty, const TaskSpace& space, std::mt19937_64& rng) {
  if (difficulty < 1) throw std::invalid_argument("task: difficulty must be >= 1");
  const int alphabet = alphabet_size(kind, space);
  if (alphabet < 1) throw std::invalid_argument("task: empty alphabet");
  std::vector<int> symbols(static_cast<std::size_t>(difficulty));
  for (int& s : symbols) s = static_cast<int>(uniform01(rng) * alphabet);
  return make_task(kind, symbols, space);
}

Verdict verify(const Task& task, std::span<const int> response) {
  std::size_t eos = response.size();
  for (std::size_t t = 0; t < response.size(); ++t)
    if (response[t] == kEosToken) {
      eos = t;
      break;
    }
  if (eos == response.size()) return Verdict::Invalid;
  const std::size_t arity = task.answer.size();
  if (eos < arity) return Verdict::Invalid;
  const auto answer = response.subspan(eos - arity, arity);
  for (int tok : answer)
    if (tok < kFirstSymbol || tok >= kFirstSymbol + task.alphabet) return Verdict::Invalid;
  return std::equal(answer.begin(), answer.end(), task.answer.begin()) ? Verdict::Correct : Verdict::Incorrect;
}

Reward reward(Verdict verdict) {
  switch (verdict) {
    case Verdict::Correct: return {1.0, true};
    case Verdict::Incorrect: return {0.0, true};
    case Verdict::Invalid: return {0.0, false};
  }
  return {0.0, false};
}

void write_tasks(std::ostream& os, std::span<const Task> tasks) {
  for (const Task& t : tasks) {
    nlohmann::json j{{"kind", to_string(t.kind)}, {"difficulty", t.difficulty}, {"alphabet", t.alphabet},
                     {"modulus", t.modulus},      {"prompt", t.prompt},         {"answer", t.answer}};
    os << j.dump() << '\n';
  }
}

std::vector<Task> read_tasks(std::istream& is) {
  std::vector<Task> tasks;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Task t;
      t.kind = parse_task_kind(j.at("kind").get<std::string>());
      t.difficulty = j.at("difficulty").get<int>();
      t.alphabet = j.at("alphabet").get<int>();
      t.modulus = j.at("modulus").get<int>();
      t.prompt = j.at("prompt").get<std::vector<int>>();
      t.answer = j.at("answer").get<std::vector<int>>();
      tasks.push_back(std::move(t));
    } catch (const std::exception& e) {
      throw std::runtime_error("task record line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return tasks;
}

}  // namespace espo
