#include "espo/rollout.hpp"

#include <cmath>
#include <istream>
#include <json.hpp>
#include <map>
#include <ostream>
#include <stdexcept>

namespace espo {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(splitmix64(base) ^ a) ^ (b * 0xd1b54a32d192ed03ULL));
}

PromptGroup collect_group(const PolicySnapshot& snap, const Task& task, std::int64_t prompt_id,
                          const SamplingConfig& cfg) {
  if (cfg.group_size < 2) throw std::invalid_argument("collect_group: group size must be >= 2");
  if (cfg.max_length < 1) throw std::invalid_argument("collect_group: max length must be >= 1");
  PromptGroup group;
  group.task = task;
  group.prompt_id = prompt_id;
  group.rollouts.resize(static_cast<std::size_t>(cfg.group_size));
  const int context = snap.params().context;
  for (int i = 0; i < cfg.group_size; ++i) {
    Rng rng(derive_seed(cfg.base_seed, static_cast<std::uint64_t>(prompt_id), static_cast<std::uint64_t>(i)));
    Rollout& r = group.rollouts[static_cast<std::size_t>(i)];
    r.prompt = task.prompt;
    bool ended = false;
    while (static_cast<int>(r.response.size()) < cfg.max_length) {
      const std::vector<int> window = context_window(r.prompt, r.response, context);
      const TokenDraw draw = sample_token(snap, window, cfg.temperature, rng);
      r.response.push_back(draw.token);
      r.old_logprobs.push_back(draw.logprob);
      r.entropies.push_back(draw.entropy);
      if (draw.token == kEosToken) {
        ended = true;
        break;
      }
    }
    r.truncated = !ended;
    r.verdict = r.truncated ? Verdict::Invalid : verify(task, r.response);
    r.reward = reward(r.verdict).value;
  }
  group.advantages.assign(group.rollouts.size(), 0.0);
  return group;
}

void compute_advantages(PromptGroup& group, double delta, ValidSet valid_set) {
  const std::size_t n = group.rollouts.size();
  std::vector<bool> member(n);
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Verdict v = group.rollouts[i].verdict;
    member[i] = valid_set == ValidSet::Parseable ? v != Verdict::Invalid : v == Verdict::Correct;
    count += member[i];
  }
  group.advantages.assign(n, 0.0);
  if (count >= 2) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (member[i]) mean += group.rollouts[i].reward;
    mean /= static_cast<double>(count);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (member[i]) var += (group.rollouts[i].reward - mean) * (group.rollouts[i].reward - mean);
    const double sd = std::sqrt(var / static_cast<double>(count));
    if (sd > delta)
      for (std::size_t i = 0; i < n; ++i)
        if (member[i]) group.advantages[i] = (group.rollouts[i].reward - mean) / sd;
  }
  for (std::size_t i = 0; i < n; ++i)
    group.rollouts[i].token_advantages.assign(group.rollouts[i].length(), group.advantages[i]);
}

bool has_signal(const PromptGroup& group) {
  for (double a : group.advantages)
    if (a != 0.0) return true;
  return false;
}

std::vector<PromptGroup> dynamic_filter(std::vector<PromptGroup> batch) {
  std::vector<PromptGroup> kept;
  for (PromptGroup& g : batch)
    if (has_signal(g)) kept.push_back(std::move(g));
  return kept;
}

void write_rollout_log(std::ostream& os, std::int64_t step, std::span<const PromptGroup> batch) {
  for (const PromptGroup& g : batch)
    for (std::size_t i = 0; i < g.rollouts.size(); ++i) {
      const Rollout& r = g.rollouts[i];
      nlohmann::json j{{"step", step},
                       {"prompt_id", g.prompt_id},
                       {"rollout_index", i},
                       {"prompt", r.prompt},
                       {"tokens", r.response},
                       {"old_logprobs", r.old_logprobs},
                       {"entropies", r.entropies},
                       {"reward", r.reward},
                       {"verdict", to_string(r.verdict)},
                       {"truncated", r.truncated}};
      os << j.dump() << '\n';
    }
}

std::vector<LoggedGroup> read_rollout_log(std::istream& is) {
  std::vector<LoggedGroup> groups;
  std::map<std::pair<std::int64_t, std::int64_t>, std::size_t> index;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Rollout r;
      r.prompt = j.at("prompt").get<std::vector<int>>();
      r.response = j.at("tokens").get<std::vector<int>>();
      r.old_logprobs = j.at("old_logprobs").get<std::vector<double>>();
      r.entropies = j.at("entropies").get<std::vector<double>>();
      r.reward = j.at("reward").get<double>();
      r.verdict = parse_verdict(j.at("verdict").get<std::string>());
      r.truncated = j.at("truncated").get<bool>();
      if (r.response.empty() || r.old_logprobs.size() != r.response.size() || r.entropies.size() != r.response.size())
        throw std::runtime_error("token, logprob and entropy lists must be non-empty and aligned");
      const auto key = std::make_pair(j.at("step").get<std::int64_t>(), j.at("prompt_id").get<std::int64_t>());
      auto [it, inserted] = index.try_emplace(key, groups.size());
      if (inserted) {
        LoggedGroup lg;
        lg.step = key.first;
        lg.group.prompt_id = key.second;
        groups.push_back(std::move(lg));
      }
      PromptGroup& g = groups[it->second].group;
      g.rollouts.push_back(std::move(r));
      g.advantages.push_back(0.0);
    } catch (const std::exception& e) {
      throw std::runtime_error("rollout log line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return groups;
}

}  // namespace espo
