#include "espo/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "espo/parallel.hpp"

namespace espo {

std::string to_string(Variant variant) {
  switch (variant) {
    case Variant::Grpo: return "grpo";
    case Variant::Dapo: return "dapo";
    case Variant::Gmpo: return "gmpo";
    case Variant::Cispo: return "cispo";
    case Variant::Gspo: return "gspo";
    case Variant::GspoToken: return "gspo-token";
    case Variant::Espo: return "espo";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  for (Variant v : kAllVariants)
    if (to_string(v) == name) return v;
  if (name == "gspo_token") return Variant::GspoToken;
  throw std::invalid_argument("unknown algorithm '" + name + "'");
}

ObjectiveConfig ObjectiveConfig::defaults(Variant variant) {
  ObjectiveConfig cfg;
  cfg.variant = variant;
  switch (variant) {
    case Variant::Grpo:
      cfg.eps_low = 0.2, cfg.eps_high = 0.2;
      break;
    case Variant::Dapo:
      cfg.eps_low = 0.2, cfg.eps_high = 0.28;
      cfg.dynamic_filter = true;
      break;
    case Variant::Cispo:
      cfg.eps_low = 0.2, cfg.eps_high = 0.28;
      break;
    case Variant::Gmpo:
      // (e^-0.4, e^0.4) expressed as half-widths around 1.
      cfg.eps_low = 1.0 - std::exp(-0.4), cfg.eps_high = std::exp(0.4) - 1.0;
      break;
    case Variant::Gspo:
    case Variant::GspoToken:
    case Variant::Espo:
      cfg.eps_low = 3e-4, cfg.eps_high = 4e-4;
      break;
  }
  return cfg;
}

int ObjectiveConfig::group_count() const {
  return grouping == Grouping::TopFraction ? 2 : static_cast<int>(quantiles.size()) + 1;
}

void ObjectiveConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("objective." + what); };
  if (!(eps_low >= 0.0) || !std::isfinite(eps_low)) fail("eps_low: must be finite and >= 0");
  if (!(eps_high >= 0.0) || !std::isfinite(eps_high)) fail("eps_high: must be finite and >= 0");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) fail("alpha: must be finite and > 0");
  if (grouping == Grouping::TopFraction && !(rho > 0.0 && rho < 1.0)) fail("rho: must lie in (0, 1)");
  for (std::size_t k = 0; k < quantiles.size(); ++k) {
    if (!(quantiles[k] > 0.0 && quantiles[k] < 1.0)) fail("quantiles: boundaries must lie in (0, 1)");
    if (k > 0 && !(quantiles[k] > quantiles[k - 1])) fail("quantiles: boundaries must be strictly increasing");
  }
  if (!(delta >= 0.0)) fail("delta: must be >= 0");
}

EntropyPartition partition_by_entropy(std::span<const double> entropies, const ObjectiveConfig& cfg) {
  const std::size_t n = entropies.size();
  if (n == 0) throw std::invalid_argument("partition_by_entropy: empty sequence");
  for (double e : entropies)
    if (!std::isfinite(e)) throw std::invalid_argument("partition_by_entropy: non-finite entropy");

  std::vector<int> bucket(n, 0);
  int buckets = 1;
  if (cfg.grouping == Grouping::TopFraction) {
    buckets = 2;
    // Guard against rho * T landing a rounding error above an integer.
    const double target = std::ceil(cfg.rho * static_cast<double>(n) - 1e-9);
    const auto n_high = static_cast<std::size_t>(std::clamp(target, 1.0, static_cast<double>(n)));
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return entropies[static_cast<std::size_t>(a)] > entropies[static_cast<std::size_t>(b)];
    });
    for (std::size_t k = 0; k < n_high; ++k) bucket[static_cast<std::size_t>(order[k])] = 1;
  } else {
    buckets = static_cast<int>(cfg.quantiles.size()) + 1;
    std::vector<double> sorted(entropies.begin(), entropies.end());
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> thresholds;
    for (double q : cfg.quantiles) {
      const double pos = q * static_cast<double>(n - 1);
      const auto lo = static_cast<std::size_t>(std::floor(pos));
      const std::size_t hi = std::min(lo + 1, n - 1);
      thresholds.push_back(sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]));
    }
    for (std::size_t t = 0; t < n; ++t)
      bucket[t] = static_cast<int>(std::upper_bound(thresholds.begin(), thresholds.end(), entropies[t]) -
                                   thresholds.begin());
  }

  EntropyPartition part;
  part.assignment.assign(n, -1);
  for (int k = 0; k < buckets; ++k) {
    EntropyGroup g;
    g.id = k;
    for (std::size_t t = 0; t < n; ++t)
      if (bucket[t] == k) g.members.push_back(static_cast<int>(t));
    if (g.members.empty()) continue;
    double total = 0.0;
    for (int t : g.members) total += entropies[static_cast<std::size_t>(t)];
    g.mean_entropy = total / static_cast<double>(g.members.size());
    for (int t : g.members) part.assignment[static_cast<std::size_t>(t)] = static_cast<int>(part.groups.size());
    part.groups.push_back(std::move(g));
  }
  part.token_epsilon.assign(n, 0.0);
  return part;
}

double adaptive_epsilon(double mean_entropy, int vocab, double alpha) {
  if (vocab < 2) throw std::invalid_argument("adaptive_epsilon: vocab must be >= 2");
  if (!(alpha > 0.0)) throw std::invalid_argument("adaptive_epsilon: alpha must be > 0");
  const double normalized = std::clamp(mean_entropy / std::log(static_cast<double>(vocab)), 0.0, 1.0);
  return alpha * normalized;
}

void adaptive_epsilon(EntropyPartition& partition, std::span<const double> entropies, int vocab, double alpha,
                      EpsilonMode mode) {
  if (entropies.size() != partition.length())
    throw std::invalid_argument("adaptive_epsilon: entropy list does not match partition");
  partition.token_epsilon.assign(partition.length(), 0.0);
  for (EntropyGroup& g : partition.groups) {
    g.epsilon = adaptive_epsilon(g.mean_entropy, vocab, alpha);
    for (int t : g.members) {
      const auto ut = static_cast<std::size_t>(t);
      partition.token_epsilon[ut] =
          mode == EpsilonMode::GroupMean ? g.epsilon : adaptive_epsilon(entropies[ut], vocab, alpha);
    }
  }
}

BatchPartitions partition_batch(std::span<const PromptGroup> batch, const ObjectiveConfig& cfg, int vocab) {
  BatchPartitions out;
  out.reserve(batch.size());
  for (const PromptGroup& g : batch) {
    std::vector<EntropyPartition> parts;
    parts.reserve(g.rollouts.size());
    for (const Rollout& r : g.rollouts) {
      EntropyPartition p = partition_by_entropy(r.entropies, cfg);
      adaptive_epsilon(p, r.entropies, vocab, cfg.alpha, cfg.epsilon_mode);
      parts.push_back(std::move(p));
    }
    out.push_back(std::move(parts));
  }
  return out;
}

Var token_ratio(Var new_logprob, double old_logprob) {
  return exp(new_logprob - old_logprob);
}

Var sequence_ratio(std::span<const Var> new_logprobs, std::span<const double> old_logprobs) {
  std::vector<int> all(new_logprobs.size());
  std::iota(all.begin(), all.end(), 0);
  return group_ratio(new_logprobs, old_logprobs, all);
}

Var group_ratio(std::span<const Var> new_logprobs, std::span<const double> old_logprobs,
                std::span<const int> members) {
  if (members.empty()) throw std::invalid_argument("group_ratio: empty group");
  if (new_logprobs.size() != old_logprobs.size())
    throw std::invalid_argument("group_ratio: new and old log-prob lists differ in length");
  std::vector<Var> diffs;
  diffs.reserve(members.size());
  for (int t : members) {
    const auto ut = static_cast<std::size_t>(t);
    diffs.push_back(new_logprobs[ut] - old_logprobs[ut]);
  }
  return exp(sum(diffs) / static_cast<double>(members.size()));
}

Var gspo_token_ratio(Var sequence_ratio, Var new_logprob) {
  const Var prob = exp(new_logprob);
  return stop_gradient(sequence_ratio) * (prob / stop_gradient(prob));
}

Var espo_token_ratio(Var group_ratio, Var new_logprob, double old_logprob, Denominator mode) {
  if (mode == Denominator::CurrentPolicy) return gspo_token_ratio(group_ratio, new_logprob);
  const Var prob = exp(new_logprob);
  return stop_gradient(group_ratio) * (prob / stop_gradient(constant(*prob.tape, std::exp(old_logprob))));
}

void ClipTally::merge(const ClipTally& o) {
  tokens += o.tokens;
  clipped_low += o.clipped_low;
  clipped_high += o.clipped_high;
  ratio_sum += o.ratio_sum;
  max_ratio_deviation = std::max(max_ratio_deviation, o.max_ratio_deviation);
  epsilon_sum += o.epsilon_sum;
}

Var clipped_surrogate(Var ratio, double advantage, double lo, double hi, ClipTally& tally, double tokens) {
  const Var unclipped = ratio * advantage;
  const Var clamped = clip(ratio, lo, hi) * advantage;
  const Var term = min2(unclipped, clamped);
  const double r = ratio.value();
  tally.tokens += tokens;
  tally.ratio_sum += tokens * r;
  tally.max_ratio_deviation = std::max(tally.max_ratio_deviation, std::abs(r - 1.0));
  if (clamped.value() < unclipped.value()) (r < lo ? tally.clipped_low : tally.clipped_high) += tokens;
  return term;
}

namespace {

double token_advantage(const PromptGroup& g, std::size_t i, std::size_t t) {
  const Rollout& r = g.rollouts[i];
  return t < r.token_advantages.size() ? r.token_advantages[t] : g.advantages[i];
}

Var mean_of(std::span<const Var> terms) { return sum(terms) / static_cast<double>(terms.size()); }

struct GroupAccumulator {
  double tokens = 0, entropy = 0, epsilon = 0, clipped = 0;
};

}  // namespace

Var prompt_objective(const TapeParams& params, const PromptGroup& group, std::span<const EntropyPartition> partitions,
                     const ObjectiveConfig& cfg, double temperature, ClipTally& tally,
                     std::vector<GroupDiagnostics>* diagnostics) {
  if (group.rollouts.empty()) throw std::invalid_argument("prompt_objective: empty group");
  if (group.advantages.size() != group.rollouts.size())
    throw std::invalid_argument("prompt_objective: advantages not computed");
  const double lo = 1.0 - cfg.eps_low, hi = 1.0 + cfg.eps_high;
  std::vector<GroupAccumulator> acc;
  std::vector<Var> rollout_terms;
  rollout_terms.reserve(group.rollouts.size());

  for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
    const Rollout& r = group.rollouts[i];
    if (r.length() == 0) throw std::invalid_argument("prompt_objective: empty response");
    const std::vector<Var> lp = response_logprobs(params, r.prompt, r.response, temperature);
    const std::span<const double> old(r.old_logprobs);
    const double adv = group.advantages[i];
    std::vector<Var> terms;
    terms.reserve(r.length());

    switch (cfg.variant) {
      case Variant::Grpo:
      case Variant::Dapo:
        for (std::size_t t = 0; t < r.length(); ++t)
          terms.push_back(clipped_surrogate(token_ratio(lp[t], old[t]), adv, lo, hi, tally));
        rollout_terms.push_back(mean_of(terms));
        break;

      case Variant::Gspo:
      case Variant::GspoToken: {
        const Var s = sequence_ratio(lp, old);
        for (std::size_t t = 0; t < r.length(); ++t) {
          const double a = cfg.variant == Variant::GspoToken ? token_advantage(group, i, t) : adv;
          terms.push_back(clipped_surrogate(gspo_token_ratio(s, lp[t]), a, lo, hi, tally));
        }
        rollout_terms.push_back(mean_of(terms));
        break;
      }

      case Variant::Gmpo:
        rollout_terms.push_back(
            clipped_surrogate(sequence_ratio(lp, old), adv, lo, hi, tally, static_cast<double>(r.length())));
        break;

      case Variant::Cispo:
        for (std::size_t t = 0; t < r.length(); ++t) {
          const Var ratio = token_ratio(lp[t], old[t]);
          const double rv = ratio.value();
          tally.tokens += 1;
          tally.ratio_sum += rv;
          tally.max_ratio_deviation = std::max(tally.max_ratio_deviation, std::abs(rv - 1.0));
          if (rv < lo) tally.clipped_low += 1;
          if (rv > hi) tally.clipped_high += 1;
          // Value sg[w] * A; gradient sg[w] * A * grad log pi.
          const Var weight = stop_gradient(clip(ratio, lo, hi));
          terms.push_back(weight * adv * exp(lp[t] - stop_gradient(lp[t])));
        }
        rollout_terms.push_back(mean_of(terms));
        break;

      case Variant::Espo: {
        if (i >= partitions.size() || partitions[i].length() != r.length())
          throw std::invalid_argument("prompt_objective: missing or mismatched entropy partition");
        const EntropyPartition& part = partitions[i];
        std::vector<Var> group_terms;
        for (const EntropyGroup& g : part.groups) {
          const Var s_tau = group_ratio(lp, old, g.members);
          std::vector<Var> member_terms;
          member_terms.reserve(g.members.size());
          if (acc.size() <= static_cast<std::size_t>(g.id)) acc.resize(static_cast<std::size_t>(g.id) + 1);
          GroupAccumulator& ga = acc[static_cast<std::size_t>(g.id)];
          for (int t : g.members) {
            const auto ut = static_cast<std::size_t>(t);
            const double eps = part.token_epsilon[ut];
            const double glo = cfg.fixed_clip ? lo : 1.0 - eps;
            const double ghi = cfg.fixed_clip ? hi : 1.0 + eps;
            const double clipped_before = tally.clipped_low + tally.clipped_high;
            const Var ratio = espo_token_ratio(s_tau, lp[ut], old[ut], cfg.denominator);
            member_terms.push_back(clipped_surrogate(ratio, token_advantage(group, i, ut), glo, ghi, tally));
            const double used_eps = cfg.fixed_clip ? 0.5 * (cfg.eps_low + cfg.eps_high) : eps;
            tally.epsilon_sum += used_eps;
            ga.tokens += 1;
            ga.entropy += r.entropies[ut];
            ga.epsilon += used_eps;
            ga.clipped += tally.clipped_low + tally.clipped_high - clipped_before;
          }
          group_terms.push_back(mean_of(member_terms));
        }
        rollout_terms.push_back(mean_of(group_terms));
        break;
      }
    }
  }

  if (diagnostics) {
    diagnostics->clear();
    for (std::size_t k = 0; k < acc.size(); ++k)
      diagnostics->push_back({static_cast<int>(k), acc[k].tokens, acc[k].entropy, acc[k].epsilon, acc[k].clipped});
  }
  return mean_of(rollout_terms);
}

LossReport compute_loss(const PolicyParams& params, std::span<const PromptGroup> batch, const ObjectiveConfig& cfg,
                        const LossOptions& opts) {
  if (batch.empty()) throw std::invalid_argument("loss: empty batch");
  cfg.validate();
  BatchPartitions owned;
  const BatchPartitions* partitions = opts.partitions;
  if (cfg.variant == Variant::Espo && partitions == nullptr) {
    owned = partition_batch(batch, cfg, params.vocab);
    partitions = &owned;
  }
  if (partitions && partitions->size() != batch.size())
    throw std::invalid_argument("loss: partitions do not match the batch");

  struct PromptResult {
    double value = 0.0;
    std::vector<double> grad;
    ClipTally tally;
    std::vector<GroupDiagnostics> groups;
  };
  std::vector<PromptResult> results(batch.size());
  const double scale = -1.0 / static_cast<double>(batch.size());

  parallel_for(batch.size(), opts.threads, [&](std::size_t b) {
    Tape tape;
    tape.reserve(1 << 16, 1 << 18);
    const TapeParams tp(tape, params);
    std::span<const EntropyPartition> parts;
    if (partitions) parts = (*partitions)[b];
    PromptResult& res = results[b];
    const Var objective = prompt_objective(tp, batch[b], parts, cfg, opts.temperature, res.tally, &res.groups);
    const Var root = objective * scale;
    res.value = root.value();
    res.grad = tape.backward(root.id);
  });

  LossReport report;
  report.gradient = Eigen::VectorXd::Zero(params.parameter_count());
  ClipTally tally;
  std::vector<GroupDiagnostics> groups;
  for (const PromptResult& res : results) {
    report.loss += res.value;
    report.gradient += Eigen::Map<const Eigen::VectorXd>(res.grad.data(), static_cast<Eigen::Index>(res.grad.size()));
    tally.merge(res.tally);
    if (groups.size() < res.groups.size()) groups.resize(res.groups.size());
    for (std::size_t k = 0; k < res.groups.size(); ++k) {
      groups[k].group_id = static_cast<int>(k);
      groups[k].tokens += res.groups[k].tokens;
      groups[k].mean_entropy += res.groups[k].mean_entropy;
      groups[k].mean_epsilon += res.groups[k].mean_epsilon;
      groups[k].clip_fraction += res.groups[k].clip_fraction;
    }
  }
  report.tokens = tally.tokens;
  if (tally.tokens > 0) {
    report.clip_low = tally.clipped_low / tally.tokens;
    report.clip_high = tally.clipped_high / tally.tokens;
    report.mean_ratio = tally.ratio_sum / tally.tokens;
  }
  report.max_ratio_deviation = tally.max_ratio_deviation;
  if (cfg.variant == Variant::Espo) {
    report.mean_epsilon = tally.tokens > 0 ? tally.epsilon_sum / tally.tokens : 0.0;
    for (GroupDiagnostics& g : groups)
      if (g.tokens > 0) {
        g.mean_entropy /= g.tokens;
        g.mean_epsilon /= g.tokens;
        g.clip_fraction /= g.tokens;
      }
    report.groups = std::move(groups);
  }
  return report;
}

namespace {

LossReport with_variant(const PolicyParams& params, std::span<const PromptGroup> batch, ObjectiveConfig cfg,
                        Variant expected, const LossOptions& opts) {
  // dapo shares the grpo objective
  if (!(expected == Variant::Grpo && cfg.variant == Variant::Dapo)) cfg.variant = expected;
  return compute_loss(params, batch, cfg, opts);
}

}  // namespace

LossReport loss_grpo(const PolicyParams& params, std::span<const PromptGroup> batch, const ObjectiveConfig& cfg,
                     const LossOptions& opts) {
  return with_variant(params, batch, cfg, Variant::Grpo, opts);
}

LossReport loss_gspo(const PolicyParams& params, std::span<const PromptGroup> batch, const ObjectiveConfig& cfg,
                     const LossOptions& opts) {
  return with_variant(params, batch, cfg, Variant::Gspo, opts);
}

LossReport loss_gspo_token(const PolicyParams& params, std::span<const PromptGroup> batch,
                           const ObjectiveConfig& cfg, const LossOptions& opts) {
  return with_variant(params, batch, cfg, Variant::GspoToken, opts);
}

LossReport loss_cispo(const PolicyParams& params, std::span<const PromptGroup> batch, const ObjectiveConfig& cfg,
                      const LossOptions& opts) {
  return with_variant(params, batch, cfg, Variant::Cispo, opts);
}

LossReport loss_gmpo(const PolicyParams& params, std::span<const PromptGroup> batch, const ObjectiveConfig& cfg,
                     const LossOptions& opts) {
  return with_variant(params, batch, cfg, Variant::Gmpo, opts);
}

LossReport loss_espo(const PolicyParams& params, std::span<const PromptGroup> batch,
                     const BatchPartitions& partitions, const ObjectiveConfig& cfg, const LossOptions& opts) {
  LossOptions o = opts;
  o.partitions = &partitions;
  return with_variant(params, batch, cfg, Variant::Espo, o);
}

void ClipFractionStats::add(const std::string& algorithm, const LossReport& report) {
  add(algorithm, report.clip_low, report.clip_high);
}

void ClipFractionStats::add(const std::string& algorithm, double clip_low, double clip_high) {
  Summary& s = sums_[algorithm];
  ++s.reports;
  s.mean_low += (clip_low - s.mean_low) / static_cast<double>(s.reports);
  s.mean_high += (clip_high - s.mean_high) / static_cast<double>(s.reports);
}

ClipFractionStats::Summary ClipFractionStats::summary(const std::string& algorithm) const {
  const auto it = sums_.find(algorithm);
  if (it == sums_.end()) throw std::out_of_range("clip stats: no reports for '" + algorithm + "'");
  return it->second;
}

std::vector<std::string> ClipFractionStats::algorithms() const {
  std::vector<std::string> out;
  for (const auto& [name, s] : sums_) out.push_back(name);
  return out;
}

}  // namespace espo
