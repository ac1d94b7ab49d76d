#include "espo/trainer.hpp"

#include <cmath>
#include <iostream>
#include <stdexcept>

#include "espo/parallel.hpp"

namespace espo {

namespace {

constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kTaskStream = 0x7a5c;

}  // namespace

AdamState AdamState::zeros(Eigen::Index n) {
  return {Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n), 0};
}

bool adam_update(PolicyParams& params, const Eigen::VectorXd& grad, AdamState& state, const AdamConfig& cfg) {
  const Eigen::Index n = params.parameter_count();
  if (grad.size() != n) throw std::invalid_argument("adam: gradient size mismatch");
  if (state.m.size() != n || state.v.size() != n) throw std::invalid_argument("adam: state size mismatch");
  if (!grad.allFinite()) return false;
  state.t += 1;
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad;
  state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  const Eigen::ArrayXd step =
      cfg.lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + cfg.eps);
  params.assign(params.flatten() - step.matrix());
  return true;
}

int TrainConfig::difficulty_at(std::int64_t step) const {
  int d = difficulty;
  for (const auto& [from, value] : difficulty_schedule)
    if (step >= from) d = value;
  return d;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument(what); };
  if (vocab < 4) fail("policy.vocab: must be >= 4");
  if (context < 2) fail("policy.context: must be >= 2");
  if (hidden < 1) fail("policy.hidden: must be >= 1");
  if (!(init_scale >= 0.0)) fail("policy.init_scale: must be >= 0");
  if (batch_prompts < 1) fail("train.batch_prompts: must be >= 1");
  if (group_size < 2) fail("train.group_size: must be >= 2");
  if (steps < 0) fail("train.steps: must be >= 0");
  if (mini_epochs < 1) fail("train.mini_epochs: must be >= 1");
  if (!(adam.lr > 0.0)) fail("train.lr: must be > 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0)) fail("train.beta1: must lie in [0, 1)");
  if (!(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) fail("train.beta2: must lie in [0, 1)");
  if (!(adam.eps > 0.0)) fail("train.adam_eps: must be > 0");
  if (max_length < 1) fail("train.max_length: must be >= 1");
  if (!(temperature > 0.0)) fail("train.temperature: must be > 0");
  std::vector<int> difficulties{difficulty};
  for (const auto& entry : difficulty_schedule) difficulties.push_back(entry.second);
  for (int d : difficulties) {
    Rng rng(0);
    try {
      (void)generate_task(task, d, task_space(), rng);
    } catch (const std::invalid_argument& e) {
      fail(std::string("task.difficulty: ") + e.what());
    }
  }
}

StepOutcome train_step(PolicyParams& params, AdamState& adam, const TrainConfig& cfg, const ObjectiveConfig& objective,
                       std::int64_t step) {
  StepOutcome out;
  const PolicySnapshot snap = snapshot(params);
  const TaskSpace space = cfg.task_space();
  const int difficulty = cfg.difficulty_at(step);

  Rng task_rng(derive_seed(cfg.seed, kTaskStream, static_cast<std::uint64_t>(step)));
  std::vector<Task> tasks;
  tasks.reserve(static_cast<std::size_t>(cfg.batch_prompts));
  for (int b = 0; b < cfg.batch_prompts; ++b) tasks.push_back(generate_task(cfg.task, difficulty, space, task_rng));

  SamplingConfig sampling{cfg.group_size, cfg.max_length, cfg.temperature, cfg.seed};
  out.batch.resize(tasks.size());
  parallel_for(tasks.size(), cfg.threads, [&](std::size_t b) {
    const std::int64_t prompt_id = step * cfg.batch_prompts + static_cast<std::int64_t>(b);
    out.batch[b] = collect_group(snap, tasks[b], prompt_id, sampling);
    compute_advantages(out.batch[b], objective.delta, objective.valid_set);
  });

  StepRecord base;
  base.step = step;
  base.algorithm = to_string(objective.variant);
  double rollouts = 0, correct = 0, tokens = 0, entropy = 0;
  for (const PromptGroup& g : out.batch)
    for (const Rollout& r : g.rollouts) {
      rollouts += 1;
      base.mean_reward += r.reward;
      correct += r.verdict == Verdict::Correct;
      tokens += static_cast<double>(r.length());
      for (double e : r.entropies) entropy += e;
    }
  base.mean_reward /= rollouts;
  base.accuracy = correct / rollouts;
  base.mean_length = tokens / rollouts;
  base.mean_entropy = entropy / tokens;

  const std::vector<PromptGroup> train_batch = objective.filters_batch() ? dynamic_filter(out.batch) : out.batch;
  if (train_batch.empty()) {
    StepRecord r = base;
    r.skipped = true;
    out.records.push_back(r);
    return out;
  }

  BatchPartitions partitions;
  LossOptions opts{cfg.temperature, cfg.threads, nullptr};
  if (objective.variant == Variant::Espo) {
    partitions = partition_batch(train_batch, objective, params.vocab);
    opts.partitions = &partitions;
  }

  for (int epoch = 0; epoch < cfg.mini_epochs; ++epoch) {
    const LossReport report = compute_loss(params, train_batch, objective, opts);
    StepRecord r = base;
    r.mini_epoch = epoch;
    r.loss = report.loss;
    r.clip_low = report.clip_low;
    r.clip_high = report.clip_high;
    r.mean_epsilon = report.mean_epsilon;
    const bool finite = std::isfinite(report.loss) && report.gradient.allFinite();
    if (!finite || !adam_update(params, report.gradient, adam, cfg.adam)) {
      r.rejected = true;
      ++out.incidents;
      std::cerr << "warning: step " << step << " mini-epoch " << epoch
                << ": non-finite loss or gradient, update rejected\n";
      out.records.push_back(r);
      break;
    }
    out.records.push_back(r);
  }
  return out;
}

Trainer::Trainer(TrainConfig cfg, ObjectiveConfig objective) : cfg_(std::move(cfg)), objective_(std::move(objective)) {
  cfg_.validate();
  objective_.validate();
  Rng init_rng(derive_seed(cfg_.seed, kInitStream));
  params_ = PolicyParams::random(cfg_.vocab, cfg_.context, cfg_.hidden, cfg_.init_scale, init_rng);
  adam_ = AdamState::zeros(params_.parameter_count());
}

StepOutcome Trainer::step() {
  StepOutcome out = train_step(params_, adam_, cfg_, objective_, next_step_);
  incidents_ += out.incidents;
  ++next_step_;
  return out;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ckpt;
  ckpt.params = params_;
  ckpt.meta["next_step"] = next_step_;
  ckpt.meta["seed"] = static_cast<std::int64_t>(cfg_.seed);
  ckpt.meta["adam_t"] = adam_.t;
  ckpt.meta["incidents"] = incidents_;
  ckpt.extra["adam_m"] = adam_.m;
  ckpt.extra["adam_v"] = adam_.v;
  return ckpt;
}

void Trainer::restore(const Checkpoint& ckpt) {
  const PolicyParams& p = ckpt.params;
  if (p.vocab != cfg_.vocab || p.context != cfg_.context || p.hidden != cfg_.hidden)
    throw std::invalid_argument("resume: checkpoint policy shape differs from the configuration");
  auto meta = [&](const char* key) {
    const auto it = ckpt.meta.find(key);
    if (it == ckpt.meta.end()) throw std::invalid_argument(std::string("resume: checkpoint lacks '") + key + "'");
    return it->second;
  };
  if (static_cast<std::uint64_t>(meta("seed")) != cfg_.seed)
    throw std::invalid_argument("resume: checkpoint seed differs from the configuration");
  const auto m = ckpt.extra.find("adam_m"), v = ckpt.extra.find("adam_v");
  if (m == ckpt.extra.end() || v == ckpt.extra.end() || m->second.size() != p.parameter_count() ||
      v->second.size() != p.parameter_count())
    throw std::invalid_argument("resume: checkpoint lacks optimizer state");
  params_ = p;
  adam_ = {m->second, v->second, meta("adam_t")};
  next_step_ = meta("next_step");
  incidents_ = static_cast<int>(meta("incidents"));
}

}  // namespace espo
