#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "espo/objectives.hpp"
#include "espo/policy.hpp"
#include "espo/rollout.hpp"

namespace espo {

using LossEvaluator = std::function<double(const Eigen::VectorXd&)>;

/// Central differences (L(x + h e_j) - L(x - h e_j)) / 2h for every
/// coordinate. Throws std::invalid_argument for h <= 0 and std::runtime_error
/// when an evaluation is non-finite.
Eigen::VectorXd finite_diff_grad(const LossEvaluator& loss, const Eigen::VectorXd& x, double h = 1e-5);

/// Which side of each min/clip the plain evaluation took: 0 unclipped,
/// 1 clipped low, 2 clipped high. One entry per clipped term in evaluation order.
using BranchSignature = std::vector<std::int8_t>;

struct ReferenceEvaluation {
  double loss = 0.0;
  BranchSignature branches;
  std::vector<double> ratios;
  std::vector<double> bound_distance;  // min |ratio - bound| per clipped term
};

/// The loss of `cfg.variant` evaluated with plain arithmetic: ratios from exp
/// of log-prob differences, min and clip by direct comparison. Shares only the
/// policy forward pass with the tape implementation.
///
/// With `anchor`, every stop-gradient quantity (sequence and group ratios in
/// their detached roles, the current-policy denominator, the CISPO weight) is
/// evaluated at the anchor instead, so differentiating the result in `params`
/// at params == *anchor gives the gradient of the detached objective.
ReferenceEvaluation reference_evaluation(const PolicyParams& params, std::span<const PromptGroup> batch,
                                         const BatchPartitions& partitions, const ObjectiveConfig& cfg,
                                         double temperature = 1.0, const PolicyParams* anchor = nullptr);

double reference_loss(const PolicyParams& params, std::span<const PromptGroup> batch,
                      const BatchPartitions& partitions, const ObjectiveConfig& cfg, double temperature = 1.0);

/// Gradient of sum_{b,i,t} weight[b][i][t] * log pi(y_{b,i,t}), built without
/// any ratio, min or clip nodes.
Eigen::VectorXd weighted_logprob_gradient(const PolicyParams& params, std::span<const PromptGroup> batch,
                                          const std::vector<std::vector<std::vector<double>>>& weights,
                                          double temperature = 1.0);

/// On-policy gradient of the entropy-grouped objective written out explicitly:
/// -(1/B) sum_b (1/G) sum_i A_i (1/K_i) sum_tau (1/|tau|) sum_{t in tau} grad log pi(y_t).
Eigen::VectorXd espo_on_policy_gradient(const PolicyParams& params, std::span<const PromptGroup> batch,
                                        const BatchPartitions& partitions, double temperature = 1.0);

struct GradCheckEntry {
  std::string name;
  double analytic = 0.0;
  double numeric = 0.0;
  double abs_error = 0.0;
  double rel_error = 0.0;
  bool flagged = false;  // the difference stencil crosses a min/clip branch
};

struct GradCheckReport {
  std::string variant;
  double h = 1e-5;
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;  // over unflagged entries
  std::size_t flagged = 0;
  std::size_t near_boundary_ratios = 0;  // ratios within the boundary band of a bound
  double value_gap = 0.0;  // |tape loss - reference loss|

  bool passed(double tolerance) const { return max_rel_error <= tolerance; }
};

struct GradCheckOptions {
  double h = 1e-5;
  double boundary_band = 1e-3;
  double scale_floor = 1e-6;  // relative error = |a - n| / max(|a|, |n|, floor)
  double temperature = 1.0;
  bool corrupt_gradient = false;  // negative-control hook
};

GradCheckReport gradcheck(const PolicyParams& params, std::span<const PromptGroup> batch, const ObjectiveConfig& cfg,
                          const GradCheckOptions& opts = {});

/// Seeded tiny off-policy instance: rollouts sampled from random parameters,
/// alternating Correct/Incorrect verdicts so every group carries signal, then
/// the current parameters perturbed by N(0, perturbation^2).
struct GradCheckInstance {
  PolicyParams params;
  PolicyParams behaviour;
  std::vector<PromptGroup> batch;
};

struct InstanceShape {
  int vocab = 5;
  int context = 3;
  int hidden = 4;
  int prompts = 2;
  int group_size = 4;
  int max_length = 4;
  double init_scale = 0.5;
  double perturbation = 0.05;
};

GradCheckInstance make_gradcheck_instance(std::uint64_t seed, const InstanceShape& shape = {});

void print_gradcheck_table(std::ostream& os, std::span<const GradCheckReport> reports, double tolerance);
void write_gradcheck_rows(std::ostream& os, std::span<const GradCheckReport> reports);

}  // namespace espo
