#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "espo/envs.hpp"
#include "espo/policy.hpp"

namespace espo {

/// One sampled response with everything the objectives read from the
/// behaviour policy. All per-token vectors have the response length.
struct Rollout {
  std::vector<int> prompt;
  std::vector<int> response;
  std::vector<double> old_logprobs;
  std::vector<double> entropies;
  std::vector<double> token_advantages;  // sequence advantage broadcast per token
  double reward = 0.0;
  Verdict verdict = Verdict::Invalid;
  bool truncated = false;

  std::size_t length() const { return response.size(); }
};

struct PromptGroup {
  Task task;
  std::int64_t prompt_id = 0;
  std::vector<Rollout> rollouts;
  std::vector<double> advantages;

  int group_size() const { return static_cast<int>(rollouts.size()); }
};

/// Which rollouts enter the normalization set.
enum class ValidSet {
  Parseable,  // verdict is Correct or Incorrect
  Correct,    // verdict is Correct
};

/// splitmix64-style mixing of (base seed, prompt id, rollout index).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

struct SamplingConfig {
  int group_size = 8;
  int max_length = 16;
  double temperature = 1.0;
  std::uint64_t base_seed = 0;
};

/// Samples G responses from the snapshot; rollout i draws from the generator
/// seeded with derive_seed(base_seed, prompt_id, i). Generation stops at
/// end-of-sequence or after max_length tokens (truncated, verdict Invalid).
PromptGroup collect_group(const PolicySnapshot& snap, const Task& task, std::int64_t prompt_id,
                          const SamplingConfig& cfg);

/// Z-scores rewards over the valid set with the population standard deviation.
/// Rollouts outside the set, and every rollout of a degenerate group
/// (fewer than two valid members or std <= delta), get advantage 0.
void compute_advantages(PromptGroup& group, double delta = 1e-6, ValidSet valid_set = ValidSet::Parseable);

bool has_signal(const PromptGroup& group);

/// Drops groups whose advantages are all zero; order is preserved.
std::vector<PromptGroup> dynamic_filter(std::vector<PromptGroup> batch);

/// Rollout log: one JSON object per line with fields step, prompt_id,
/// rollout_index, prompt, tokens, old_logprobs, entropies, reward, verdict,
/// truncated.
void write_rollout_log(std::ostream& os, std::int64_t step, std::span<const PromptGroup> batch);

struct LoggedGroup {
  std::int64_t step = 0;
  PromptGroup group;  // task is not stored; advantages are recomputed by callers
};

/// Regroups log lines by (step, prompt_id) in order of first appearance.
std::vector<LoggedGroup> read_rollout_log(std::istream& is);

}  // namespace espo
