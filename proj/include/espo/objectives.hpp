#pragma once

#include <Eigen/Core>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "espo/autodiff.hpp"
#include "espo/policy.hpp"
#include "espo/rollout.hpp"

namespace espo {

enum class Variant { Grpo, Dapo, Gmpo, Cispo, Gspo, GspoToken, Espo };

inline constexpr Variant kAllVariants[] = {Variant::Grpo, Variant::Dapo,      Variant::Gmpo, Variant::Cispo,
                                           Variant::Gspo, Variant::GspoToken, Variant::Espo};

std::string to_string(Variant variant);
Variant parse_variant(const std::string& name);

enum class Grouping {
  TopFraction,  // the ceil(rho * T) highest-entropy tokens form the high group
  Quantile,     // buckets between empirical quantiles of the rollout's entropies
};

/// Denominator of the per-token factor in the entropy-group ratio.
enum class Denominator {
  OldPolicy,      // sg[pi_old(y_t)]: value s_tau * r_t
  CurrentPolicy,  // sg[pi_theta(y_t)]: value s_tau
};

enum class EpsilonMode {
  GroupMean,  // eps_tau = alpha * mean entropy of the group / ln V
  PerToken,   // eps_t = alpha * e_t / ln V
};

struct ObjectiveConfig {
  Variant variant = Variant::Espo;
  double eps_low = 3e-4;
  double eps_high = 4e-4;
  double alpha = 0.02;
  Grouping grouping = Grouping::TopFraction;
  double rho = 0.2;
  std::vector<double> quantiles;  // interior boundaries for Grouping::Quantile
  Denominator denominator = Denominator::OldPolicy;
  EpsilonMode epsilon_mode = EpsilonMode::GroupMean;
  bool fixed_clip = false;  // espo: use (eps_low, eps_high) for every group
  double delta = 1e-6;
  bool dynamic_filter = false;
  ValidSet valid_set = ValidSet::Parseable;

  /// Variant defaults: clip ranges per method, dynamic filtering for dapo.
  static ObjectiveConfig defaults(Variant variant);

  int group_count() const;
  bool filters_batch() const { return dynamic_filter || variant == Variant::Dapo; }

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

struct EntropyGroup {
  int id = 0;  // bucket index, ascending in entropy
  std::vector<int> members;  // ascending token positions
  double mean_entropy = 0.0;
  double epsilon = 0.0;
};

/// Assignment of a rollout's token positions to non-empty entropy groups.
struct EntropyPartition {
  std::vector<int> assignment;  // position -> index into `groups`
  std::vector<EntropyGroup> groups;
  std::vector<double> token_epsilon;  // clip half-width used for each position

  std::size_t length() const { return assignment.size(); }
};

/// Throws std::invalid_argument on an empty or non-finite entropy list.
EntropyPartition partition_by_entropy(std::span<const double> entropies, const ObjectiveConfig& cfg);

/// Fills group and per-token clip bounds: eps = alpha * mean_entropy / ln V,
/// with the normalized entropy clamped to [0, 1].
void adaptive_epsilon(EntropyPartition& partition, std::span<const double> entropies, int vocab, double alpha,
                      EpsilonMode mode = EpsilonMode::GroupMean);

double adaptive_epsilon(double mean_entropy, int vocab, double alpha);

/// Partitions for every rollout of every group, bounds filled.
using BatchPartitions = std::vector<std::vector<EntropyPartition>>;
BatchPartitions partition_batch(std::span<const PromptGroup> batch, const ObjectiveConfig& cfg, int vocab);

// Importance ratios on the tape.

/// exp(new - old)
Var token_ratio(Var new_logprob, double old_logprob);
/// exp(mean_t(new_t - old_t))
Var sequence_ratio(std::span<const Var> new_logprobs, std::span<const double> old_logprobs);
/// sequence_ratio restricted to `members`; throws on an empty group.
Var group_ratio(std::span<const Var> new_logprobs, std::span<const double> old_logprobs,
                std::span<const int> members);
/// sg[s] * pi(y_t) / sg[pi(y_t)]
Var gspo_token_ratio(Var sequence_ratio, Var new_logprob);
/// sg[s_tau] * pi(y_t) / sg[pi_old(y_t)] or sg[s_tau] * pi(y_t) / sg[pi(y_t)]
Var espo_token_ratio(Var group_ratio, Var new_logprob, double old_logprob, Denominator mode);

struct ClipTally {
  double tokens = 0;
  double clipped_low = 0;
  double clipped_high = 0;
  double ratio_sum = 0;
  double max_ratio_deviation = 0;
  double epsilon_sum = 0;

  void merge(const ClipTally& other);
};

/// min(ratio * adv, clip(ratio, lo, hi) * adv). The term is tallied as clipped
/// when the min selects the clamped branch, which is exactly when the ratio's
/// adjoint is zero. `tokens` is how many tokens the term stands for.
Var clipped_surrogate(Var ratio, double advantage, double lo, double hi, ClipTally& tally, double tokens = 1.0);

struct GroupDiagnostics {
  int group_id = 0;
  double tokens = 0;
  double mean_entropy = 0;
  double mean_epsilon = 0;
  double clip_fraction = 0;
};

struct LossReport {
  double loss = 0.0;  // -J averaged over prompts
  Eigen::VectorXd gradient;  // d loss / d params, PolicyParams::flatten order
  double clip_low = 0.0;
  double clip_high = 0.0;
  double mean_ratio = 1.0;
  double max_ratio_deviation = 0.0;  // max |ratio - 1| over all ratios clipped against
  std::optional<double> mean_epsilon;  // espo only, token weighted
  double tokens = 0;
  std::vector<GroupDiagnostics> groups;  // espo only, by bucket id
};

struct LossOptions {
  double temperature = 1.0;
  unsigned threads = 1;
  const BatchPartitions* partitions = nullptr;  // computed on demand when null
};

/// Builds each prompt's objective on its own tape, differentiates, and merges
/// values and gradients in prompt order. Throws std::invalid_argument on an
/// empty batch.
LossReport compute_loss(const PolicyParams& params, std::span<const PromptGroup> batch,
                        const ObjectiveConfig& cfg, const LossOptions& opts = {});

LossReport loss_grpo(const PolicyParams& params, std::span<const PromptGroup> batch, const ObjectiveConfig& cfg,
                     const LossOptions& opts = {});
LossReport loss_gspo(const PolicyParams& params, std::span<const PromptGroup> batch, const ObjectiveConfig& cfg,
                     const LossOptions& opts = {});
LossReport loss_gspo_token(const PolicyParams& params, std::span<const PromptGroup> batch,
                           const ObjectiveConfig& cfg, const LossOptions& opts = {});
LossReport loss_cispo(const PolicyParams& params, std::span<const PromptGroup> batch, const ObjectiveConfig& cfg,
                      const LossOptions& opts = {});
LossReport loss_gmpo(const PolicyParams& params, std::span<const PromptGroup> batch, const ObjectiveConfig& cfg,
                     const LossOptions& opts = {});
LossReport loss_espo(const PolicyParams& params, std::span<const PromptGroup> batch,
                     const BatchPartitions& partitions, const ObjectiveConfig& cfg, const LossOptions& opts = {});

/// Objective of one prompt (before sign flip and batch averaging) recorded on
/// `tape`. Exposed for tests that inspect intermediate nodes.
Var prompt_objective(const TapeParams& params, const PromptGroup& group, std::span<const EntropyPartition> partitions,
                     const ObjectiveConfig& cfg, double temperature, ClipTally& tally,
                     std::vector<GroupDiagnostics>* diagnostics = nullptr);

/// Running per-algorithm means of per-step clip fractions.
class ClipFractionStats {
 public:
  struct Summary {
    std::size_t reports = 0;
    double mean_low = 0.0;
    double mean_high = 0.0;
  };

  void add(const std::string& algorithm, const LossReport& report);
  void add(const std::string& algorithm, double clip_low, double clip_high);
  /// Throws std::out_of_range when no report was added for `algorithm`.
  Summary summary(const std::string& algorithm) const;
  std::vector<std::string> algorithms() const;

 private:
  std::map<std::string, Summary> sums_;
};

}  // namespace espo
