#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "espo/envs.hpp"
#include "espo/objectives.hpp"
#include "espo/policy.hpp"
#include "espo/rollout.hpp"
#include "espo/telemetry.hpp"

namespace espo {

struct AdamConfig {
  double lr = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  std::int64_t t = 0;

  static AdamState zeros(Eigen::Index n);
  bool operator==(const AdamState&) const = default;
};

/// Bias-corrected adaptive-moment step. A non-finite gradient leaves both the
/// parameters and the state untouched and returns false.
bool adam_update(PolicyParams& params, const Eigen::VectorXd& grad, AdamState& state, const AdamConfig& cfg);

struct TrainConfig {
  // policy shape
  int vocab = 8;
  int context = 6;
  int hidden = 32;
  double init_scale = 0.5;
  // task
  TaskKind task = TaskKind::Parity;
  int difficulty = 4;
  int modulus = 7;
  std::vector<std::pair<std::int64_t, int>> difficulty_schedule;  // (from step, difficulty)
  // loop
  int batch_prompts = 16;
  int group_size = 8;
  std::int64_t steps = 200;
  int mini_epochs = 2;
  AdamConfig adam;
  int max_length = 16;
  double temperature = 1.0;
  std::uint64_t seed = 1;
  unsigned threads = 1;

  int difficulty_at(std::int64_t step) const;
  TaskSpace task_space() const { return {vocab, context, modulus}; }
  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

struct StepOutcome {
  std::vector<StepRecord> records;  // one per mini-epoch, or one skipped row
  std::vector<PromptGroup> batch;   // all collected groups, before filtering
  int incidents = 0;                // rejected non-finite updates
};

/// Snapshot, collect B*G rollouts, normalize advantages, optionally filter,
/// then run the mini-epoch updates against the fixed snapshot.
StepOutcome train_step(PolicyParams& params, AdamState& adam, const TrainConfig& cfg, const ObjectiveConfig& objective,
                       std::int64_t step);

/// Owns the parameters and optimizer state of one run.
class Trainer {
 public:
  Trainer(TrainConfig cfg, ObjectiveConfig objective);

  StepOutcome step();

  std::int64_t next_step() const { return next_step_; }
  const PolicyParams& params() const { return params_; }
  const AdamState& adam() const { return adam_; }
  const TrainConfig& config() const { return cfg_; }
  const ObjectiveConfig& objective() const { return objective_; }
  int incidents() const { return incidents_; }

  Checkpoint checkpoint() const;
  /// Restores parameters, optimizer state and step counter. Throws when the
  /// checkpoint's shape or seed disagree with the configuration.
  void restore(const Checkpoint& ckpt);

 private:
  TrainConfig cfg_;
  ObjectiveConfig objective_;
  PolicyParams params_;
  AdamState adam_;
  std::int64_t next_step_ = 0;
  int incidents_ = 0;
};

}  // namespace espo
