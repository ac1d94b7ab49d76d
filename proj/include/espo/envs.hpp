#pragma once

#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace espo {

/// Token layout shared by all tasks: 0 pad, 1 end-of-sequence, 2 separator,
/// task symbols from 3 upward.
inline constexpr int kSepToken = 2;
inline constexpr int kFirstSymbol = 3;

inline int symbol_token(int symbol) { return kFirstSymbol + symbol; }

enum class TaskKind { Parity, ModularSum, Copy };

std::string to_string(TaskKind kind);
TaskKind parse_task_kind(const std::string& name);

/// A prompt (payload symbols followed by the separator) and its unique answer.
struct Task {
  TaskKind kind = TaskKind::Parity;
  int difficulty = 1;
  int alphabet = 2;  // number of symbols a well-formed answer may use
  int modulus = 0;   // modular-sum only
  std::vector<int> prompt;
  std::vector<int> answer;

  bool operator==(const Task&) const = default;
};

/// Vocabulary and context limits a task must respect.
struct TaskSpace {
  int vocab = 8;
  int context = 6;
  int modulus = 7;
};

int answer_arity(TaskKind kind, int difficulty);
int alphabet_size(TaskKind kind, const TaskSpace& space);

/// Builds the task whose payload is `symbols` (bits, operands or the string).
Task make_task(TaskKind kind, std::span<const int> symbols, const TaskSpace& space);

/// Throws std::invalid_argument when difficulty < 1, the prompt would not fit
/// the context window, or the vocabulary cannot hold the alphabet.
Task generate_task(TaskKind kind, int difficulty, const TaskSpace& space, std::mt19937_64& rng);

enum class Verdict { Correct, Incorrect, Invalid };

std::string to_string(Verdict verdict);
Verdict parse_verdict(const std::string& name);

/// The answer is the `arity` tokens immediately before the first
/// end-of-sequence token. No end-of-sequence, too few tokens before it, or a
/// token outside the task alphabet makes the response Invalid.
Verdict verify(const Task& task, std::span<const int> response);

struct Reward {
  double value;
  bool valid;
};

Reward reward(Verdict verdict);

/// Line-delimited task records: kind, difficulty, alphabet, modulus, prompt, answer.
void write_tasks(std::ostream& os, std::span<const Task> tasks);
std::vector<Task> read_tasks(std::istream& is);

}  // namespace espo
