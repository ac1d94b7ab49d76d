#include "espo/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

namespace espo {

Eigen::VectorXd finite_diff_grad(const LossEvaluator& loss, const Eigen::VectorXd& x, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_grad: h must be > 0");
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd probe = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    probe(j) = x(j) + h;
    const double up = loss(probe);
    probe(j) = x(j) - h;
    const double down = loss(probe);
    probe(j) = x(j);
    if (!std::isfinite(up) || !std::isfinite(down))
      throw std::runtime_error("finite_diff_grad: non-finite loss at coordinate " + std::to_string(j));
    g(j) = (up - down) / (2.0 * h);
  }
  return g;
}

namespace {

struct Recorder {
  ReferenceEvaluation* out;

  double clipped(double ratio, double adv, double lo, double hi) {
    const double clamped = ratio < lo ? lo : (ratio > hi ? hi : ratio);
    const double a = ratio * adv, b = clamped * adv;
    std::int8_t branch = 0;
    if (b < a) branch = ratio < lo ? 1 : 2;
    record(ratio, lo, hi, branch);
    return branch == 0 ? a : b;
  }

  void record(double ratio, double lo, double hi, std::int8_t branch) {
    out->branches.push_back(branch);
    out->ratios.push_back(ratio);
    out->bound_distance.push_back(std::min(std::abs(ratio - lo), std::abs(ratio - hi)));
  }
};

double mean(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

}  // namespace

ReferenceEvaluation reference_evaluation(const PolicyParams& params, std::span<const PromptGroup> batch,
                                         const BatchPartitions& partitions, const ObjectiveConfig& cfg,
                                         double temperature, const PolicyParams* anchor) {
  if (batch.empty()) throw std::invalid_argument("reference: empty batch");
  ReferenceEvaluation out;
  Recorder rec{&out};
  const double lo = 1.0 - cfg.eps_low, hi = 1.0 + cfg.eps_high;
  double total = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const PromptGroup& g = batch[b];
    std::vector<double> per_rollout;
    for (std::size_t i = 0; i < g.rollouts.size(); ++i) {
      const Rollout& r = g.rollouts[i];
      const std::vector<double> lp = response_logprobs(params, r.prompt, r.response, temperature);
      const std::vector<double> lp0 =
          anchor ? response_logprobs(*anchor, r.prompt, r.response, temperature) : lp;
      const std::size_t n = lp.size();
      const double adv = g.advantages[i];
      auto tok_adv = [&](std::size_t t) { return t < r.token_advantages.size() ? r.token_advantages[t] : adv; };
      std::vector<double> log_ratio(n), log_ratio0(n);
      for (std::size_t t = 0; t < n; ++t) {
        log_ratio[t] = lp[t] - r.old_logprobs[t];
        log_ratio0[t] = lp0[t] - r.old_logprobs[t];
      }
      auto detached = [&](std::size_t t) { return anchor ? std::exp(lp[t] - lp0[t]) : 1.0; };
      std::vector<double> terms;

      switch (cfg.variant) {
        case Variant::Grpo:
        case Variant::Dapo:
          for (std::size_t t = 0; t < n; ++t) terms.push_back(rec.clipped(std::exp(log_ratio[t]), adv, lo, hi));
          per_rollout.push_back(mean(terms));
          break;
        case Variant::Gspo:
        case Variant::GspoToken: {
          const double s = std::exp(mean(log_ratio0));
          for (std::size_t t = 0; t < n; ++t)
            terms.push_back(
                rec.clipped(s * detached(t), cfg.variant == Variant::GspoToken ? tok_adv(t) : adv, lo, hi));
          per_rollout.push_back(mean(terms));
          break;
        }
        case Variant::Gmpo:
          per_rollout.push_back(rec.clipped(std::exp(mean(log_ratio)), adv, lo, hi));
          break;
        case Variant::Cispo:
          for (std::size_t t = 0; t < n; ++t) {
            const double ratio = std::exp(log_ratio0[t]);
            const double w = std::clamp(ratio, lo, hi);
            rec.record(ratio, lo, hi, ratio < lo ? 1 : (ratio > hi ? 2 : 0));
            terms.push_back(w * adv * detached(t));
          }
          per_rollout.push_back(mean(terms));
          break;
        case Variant::Espo: {
          const EntropyPartition& part = partitions.at(b).at(i);
          std::vector<double> group_terms;
          for (const EntropyGroup& eg : part.groups) {
            double acc = 0.0;
            for (int t : eg.members) acc += log_ratio0[static_cast<std::size_t>(t)];
            const double s_tau = std::exp(acc / static_cast<double>(eg.members.size()));
            std::vector<double> member_terms;
            for (int t : eg.members) {
              const auto ut = static_cast<std::size_t>(t);
              const double ratio = cfg.denominator == Denominator::OldPolicy
                                       ? s_tau * std::exp(lp[ut]) / std::exp(r.old_logprobs[ut])
                                       : s_tau * detached(ut);
              const double eps = part.token_epsilon[ut];
              member_terms.push_back(rec.clipped(ratio, tok_adv(ut), cfg.fixed_clip ? lo : 1.0 - eps,
                                                 cfg.fixed_clip ? hi : 1.0 + eps));
            }
            group_terms.push_back(mean(member_terms));
          }
          per_rollout.push_back(mean(group_terms));
          break;
        }
      }
    }
    total += mean(per_rollout);
  }
  out.loss = -total / static_cast<double>(batch.size());
  return out;
}

double reference_loss(const PolicyParams& params, std::span<const PromptGroup> batch,
                      const BatchPartitions& partitions, const ObjectiveConfig& cfg, double temperature) {
  return reference_evaluation(params, batch, partitions, cfg, temperature).loss;
}

Eigen::VectorXd weighted_logprob_gradient(const PolicyParams& params, std::span<const PromptGroup> batch,
                                          const std::vector<std::vector<std::vector<double>>>& weights,
                                          double temperature) {
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(params.parameter_count());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    Tape tape;
    const TapeParams tp(tape, params);
    std::vector<Var> weighted;
    for (std::size_t i = 0; i < batch[b].rollouts.size(); ++i) {
      const Rollout& r = batch[b].rollouts[i];
      const std::vector<Var> lp = response_logprobs(tp, r.prompt, r.response, temperature);
      for (std::size_t t = 0; t < lp.size(); ++t) weighted.push_back(lp[t] * weights.at(b).at(i).at(t));
    }
    if (weighted.empty()) continue;
    const std::vector<double> g = tape.backward(sum(weighted).id);
    grad += Eigen::Map<const Eigen::VectorXd>(g.data(), static_cast<Eigen::Index>(g.size()));
  }
  return grad;
}

Eigen::VectorXd espo_on_policy_gradient(const PolicyParams& params, std::span<const PromptGroup> batch,
                                        const BatchPartitions& partitions, double temperature) {
  std::vector<std::vector<std::vector<double>>> weights(batch.size());
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const PromptGroup& g = batch[b];
    const double inv_g = 1.0 / static_cast<double>(g.rollouts.size());
    weights[b].resize(g.rollouts.size());
    for (std::size_t i = 0; i < g.rollouts.size(); ++i) {
      const EntropyPartition& part = partitions.at(b).at(i);
      std::vector<double>& w = weights[b][i];
      w.assign(g.rollouts[i].length(), 0.0);
      const double inv_k = 1.0 / static_cast<double>(part.groups.size());
      for (const EntropyGroup& eg : part.groups)
        for (int t : eg.members)
          w[static_cast<std::size_t>(t)] =
              -inv_b * inv_g * g.advantages[i] * inv_k / static_cast<double>(eg.members.size());
    }
  }
  return weighted_logprob_gradient(params, batch, weights, temperature);
}

GradCheckReport gradcheck(const PolicyParams& params, std::span<const PromptGroup> batch, const ObjectiveConfig& cfg,
                          const GradCheckOptions& opts) {
  BatchPartitions partitions;
  if (cfg.variant == Variant::Espo) partitions = partition_batch(batch, cfg, params.vocab);
  LossOptions lopts{opts.temperature, 1, cfg.variant == Variant::Espo ? &partitions : nullptr};
  const LossReport tape = compute_loss(params, batch, cfg, lopts);
  const ReferenceEvaluation base = reference_evaluation(params, batch, partitions, cfg, opts.temperature);

  GradCheckReport report;
  report.variant = to_string(cfg.variant);
  report.h = opts.h;
  report.value_gap = std::abs(tape.loss - base.loss);
  for (double d : base.bound_distance) report.near_boundary_ratios += d <= opts.boundary_band;

  const Eigen::VectorXd x = params.flatten();
  const std::vector<std::string> names = params.parameter_names();
  PolicyParams probe = params;
  Eigen::VectorXd analytic = tape.gradient;
  bool corrupted = false;

  for (Eigen::Index j = 0; j < x.size(); ++j) {
    Eigen::VectorXd xs = x;
    xs(j) = x(j) + opts.h;
    probe.assign(xs);
    const ReferenceEvaluation up = reference_evaluation(probe, batch, partitions, cfg, opts.temperature, &params);
    xs(j) = x(j) - opts.h;
    probe.assign(xs);
    const ReferenceEvaluation down =
        reference_evaluation(probe, batch, partitions, cfg, opts.temperature, &params);
    if (!std::isfinite(up.loss) || !std::isfinite(down.loss))
      throw std::runtime_error("gradcheck: non-finite loss at " + names[static_cast<std::size_t>(j)]);

    GradCheckEntry e;
    e.name = names[static_cast<std::size_t>(j)];
    e.numeric = (up.loss - down.loss) / (2.0 * opts.h);
    e.flagged = up.branches != base.branches || down.branches != base.branches;
    if (opts.corrupt_gradient && !corrupted && !e.flagged) {
      analytic(j) += 1e-2 * (std::abs(analytic(j)) + 1.0);
      corrupted = true;
    }
    e.analytic = analytic(j);
    e.abs_error = std::abs(e.analytic - e.numeric);
    e.rel_error = e.abs_error / std::max({std::abs(e.analytic), std::abs(e.numeric), opts.scale_floor});
    if (e.flagged)
      ++report.flagged;
    else
      report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
    report.entries.push_back(std::move(e));
  }
  return report;
}

GradCheckInstance make_gradcheck_instance(std::uint64_t seed, const InstanceShape& shape) {
  Rng rng(derive_seed(seed, 0x6c));
  GradCheckInstance inst;
  inst.behaviour = PolicyParams::random(shape.vocab, shape.context, shape.hidden, shape.init_scale, rng);
  const PolicySnapshot snap = snapshot(inst.behaviour);
  const TaskSpace space{shape.vocab, shape.context, 7};
  SamplingConfig sampling{shape.group_size, shape.max_length, 1.0, derive_seed(seed, 0x5a)};
  for (int b = 0; b < shape.prompts; ++b) {
    const Task task = generate_task(TaskKind::Parity, 1, space, rng);
    PromptGroup g = collect_group(snap, task, b, sampling);
    for (std::size_t i = 0; i < g.rollouts.size(); ++i) {
      g.rollouts[i].verdict = i % 2 == 0 ? Verdict::Correct : Verdict::Incorrect;
      g.rollouts[i].reward = reward(g.rollouts[i].verdict).value;
    }
    compute_advantages(g);
    inst.batch.push_back(std::move(g));
  }
  Eigen::VectorXd x = inst.behaviour.flatten();
  std::normal_distribution<double> normal(0.0, shape.perturbation);
  for (Eigen::Index j = 0; j < x.size(); ++j) x(j) += normal(rng);
  inst.params = inst.behaviour;
  inst.params.assign(x);
  return inst;
}

void print_gradcheck_table(std::ostream& os, std::span<const GradCheckReport> reports, double tolerance) {
  char line[160];
  std::snprintf(line, sizeof line, "%-11s %7s %8s %8s %14s %12s  %s\n", "variant", "params", "flagged", "near-bd",
                "max-rel-err", "value-gap", "result");
  os << line;
  for (const GradCheckReport& r : reports) {
    std::snprintf(line, sizeof line, "%-11s %7zu %8zu %8zu %14.3e %12.3e  %s\n", r.variant.c_str(), r.entries.size(),
                  r.flagged, r.near_boundary_ratios, r.max_rel_error, r.value_gap,
                  r.passed(tolerance) ? "PASS" : "FAIL");
    os << line;
  }
  for (const GradCheckReport& r : reports) {
    if (r.flagged == 0) continue;
    os << "flagged in " << r.variant << ":";
    for (const GradCheckEntry& e : r.entries)
      if (e.flagged) os << ' ' << e.name;
    os << '\n';
  }
}

void write_gradcheck_rows(std::ostream& os, std::span<const GradCheckReport> reports) {
  os << "variant,parameter,analytic,numeric,abs_error,rel_error,flagged\n";
  char buf[256];
  for (const GradCheckReport& r : reports)
    for (const GradCheckEntry& e : r.entries) {
      std::snprintf(buf, sizeof buf, "%s,%s,%.17g,%.17g,%.17g,%.17g,%d\n", r.variant.c_str(), e.name.c_str(),
                    e.analytic, e.numeric, e.abs_error, e.rel_error, e.flagged ? 1 : 0);
      os << buf;
    }
}

}  // namespace espo
