#include "espo/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "espo/config.hpp"
#include "espo/objectives.hpp"
#include "espo/oracle.hpp"
#include "espo/rollout.hpp"
#include "espo/telemetry.hpp"
#include "espo/trainer.hpp"

namespace espo {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v, const char* pattern = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

std::string checkpoint_name(std::int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%06lld.ckpt", static_cast<long long>(step));
  return buf;
}

void save_checkpoint(const Trainer& trainer, const fs::path& dir) {
  fs::create_directories(dir);
  const Checkpoint ckpt = trainer.checkpoint();
  write_checkpoint((dir / checkpoint_name(trainer.next_step())).string(), ckpt);
  write_checkpoint((dir / "latest.ckpt").string(), ckpt);
}

// Keeps the header and rows for steps before `next_step`.
void truncate_metrics(const fs::path& path, std::int64_t next_step) {
  std::vector<StepRecord> keep;
  for (const StepRecord& r : read_metrics(path.string()))
    if (r.step < next_step) keep.push_back(r);
  MetricsWriter writer(path.string());
  for (const StepRecord& r : keep) writer.append(r);
  writer.flush();
}

void truncate_rollout_log(const fs::path& path, std::int64_t next_step) {
  if (!fs::exists(path)) return;
  std::vector<std::string> keep;
  {
    std::ifstream is(path);
    for (std::string line; std::getline(is, line);) {
      if (line.empty()) continue;
      if (nlohmann::json::parse(line).at("step").get<std::int64_t>() < next_step) keep.push_back(line);
    }
  }
  std::ofstream os(path, std::ios::trunc);
  for (const std::string& line : keep) os << line << '\n';
}

double mean_of(const std::vector<double>& xs) {
  if (xs.empty()) return std::nan("");
  double s = 0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double quantile(std::vector<double> xs, double q) {
  if (xs.empty()) return std::nan("");
  std::sort(xs.begin(), xs.end());
  const double pos = q * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (pos - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

}  // namespace

std::string run_label(const std::string& path) {
  const fs::path p(path);
  if (p.stem() == "metrics") {
    const fs::path parent = fs::absolute(p).parent_path();
    if (!parent.filename().empty()) return parent.filename().string();
  }
  return p.stem().string();
}

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  try {
    cfg = load_run_config(args.config, args.overrides);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  try {
    const fs::path dir(cfg.output_dir);
    const fs::path metrics_path = dir / "metrics.csv";
    const fs::path ckpt_dir = dir / "checkpoints";
    const fs::path log_path = dir / "rollouts.jsonl";
    fs::create_directories(dir);

    Trainer trainer(cfg.train, cfg.objective);
    bool append = false;
    if (args.resume) {
      const fs::path latest = ckpt_dir / "latest.ckpt";
      if (!fs::exists(latest)) {
        err << "error: --resume given but " << latest.string() << " does not exist\n";
        return kExitFailure;
      }
      trainer.restore(read_checkpoint(latest.string()));
      if (fs::exists(metrics_path)) {
        truncate_metrics(metrics_path, trainer.next_step());
        append = true;
      }
      if (cfg.rollout_log) truncate_rollout_log(log_path, trainer.next_step());
      if (!args.quiet) out << "resuming " << cfg.label << " at step " << trainer.next_step() << '\n';
    } else if (cfg.rollout_log) {
      std::ofstream(log_path, std::ios::trunc);
    }

    {
      std::ofstream os(dir / "config.resolved.json");
      os << resolved_tree(cfg).dump(2) << '\n';
      if (!os) throw std::runtime_error("cannot write " + (dir / "config.resolved.json").string());
    }

    MetricsWriter metrics(metrics_path.string(), append);
    std::ofstream rollout_log;
    if (cfg.rollout_log) rollout_log.open(log_path, std::ios::app);

    while (trainer.next_step() < cfg.train.steps) {
      const std::int64_t step = trainer.next_step();
      const StepOutcome outcome = trainer.step();
      for (const StepRecord& r : outcome.records) metrics.append(r);
      metrics.flush();
      if (rollout_log.is_open()) {
        write_rollout_log(rollout_log, step, outcome.batch);
        rollout_log.flush();
      }
      if (cfg.checkpoint_every > 0 && trainer.next_step() % cfg.checkpoint_every == 0)
        save_checkpoint(trainer, ckpt_dir);
      if (!args.quiet && !outcome.records.empty() && (step % 10 == 0 || step + 1 == cfg.train.steps)) {
        const StepRecord& r = outcome.records.back();
        out << cfg.label << " step " << step << "  acc " << fmt(r.accuracy, "%.3f") << "  reward "
            << fmt(r.mean_reward, "%.3f") << "  len " << fmt(r.mean_length, "%.2f") << "  entropy "
            << fmt(r.mean_entropy, "%.3f") << "  clip " << fmt(r.clip_low + r.clip_high, "%.4f")
            << (r.skipped ? "  (skipped)" : "") << '\n';
      }
    }
    if (cfg.checkpoint_every > 0 && cfg.train.steps % cfg.checkpoint_every != 0) save_checkpoint(trainer, ckpt_dir);
    if (!args.quiet)
      out << cfg.label << " finished " << cfg.train.steps << " steps, " << trainer.incidents()
          << " rejected updates; metrics in " << metrics_path.string() << '\n';
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

int cmd_gradcheck(const GradCheckArgs& args, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  try {
    cfg = load_run_config(args.config, args.overrides);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  if (!(args.tolerance > 0.0)) {
    err << "config error: --tolerance must be > 0\n";
    return kExitConfig;
  }
  try {
    const std::uint64_t seed = args.seed.value_or(cfg.train.seed);
    const GradCheckInstance inst = make_gradcheck_instance(seed);
    GradCheckOptions opts;
    opts.corrupt_gradient = args.corrupt_gradient;

    std::vector<GradCheckReport> reports;
    for (Variant v : kAllVariants) {
      ObjectiveConfig obj = ObjectiveConfig::defaults(v);
      obj.alpha = cfg.objective.alpha;
      obj.grouping = cfg.objective.grouping;
      obj.rho = cfg.objective.rho;
      obj.quantiles = cfg.objective.quantiles;
      obj.denominator = cfg.objective.denominator;
      obj.epsilon_mode = cfg.objective.epsilon_mode;
      obj.delta = cfg.objective.delta;
      obj.valid_set = cfg.objective.valid_set;
      reports.push_back(gradcheck(inst.params, inst.batch, obj, opts));
    }

    out << "gradcheck seed " << seed << ", h " << fmt(opts.h) << ", tolerance " << fmt(args.tolerance) << '\n';
    print_gradcheck_table(out, reports, args.tolerance);
    for (const GradCheckReport& r : reports) {
      if (r.flagged == 0 && !args.verbose) continue;
      out << r.variant << (args.verbose ? " entries:\n" : " boundary-flagged parameters (excluded):\n");
      for (const GradCheckEntry& e : r.entries)
        if (e.flagged || args.verbose)
          out << "  " << e.name << "  analytic " << fmt(e.analytic, "%.10g") << "  numeric "
              << fmt(e.numeric, "%.10g") << "  rel " << fmt(e.rel_error, "%.3e") << (e.flagged ? "  flagged" : "")
              << '\n';
    }
    if (!args.rows.empty()) {
      std::ofstream os(args.rows);
      if (!os) throw std::runtime_error("cannot write " + args.rows);
      write_gradcheck_rows(os, reports);
    }
    const bool ok = std::all_of(reports.begin(), reports.end(),
                                [&](const GradCheckReport& r) { return r.passed(args.tolerance); });
    out << (ok ? "PASS" : "FAIL") << '\n';
    return ok ? kExitOk : kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

int cmd_compare(const CompareArgs& args, std::ostream& out, std::ostream& err) {
  if (args.files.empty()) {
    err << "config error: compare needs at least one metrics file\n";
    return kExitConfig;
  }
  if (!args.labels.empty() && args.labels.size() != args.files.size()) {
    err << "config error: --label given " << args.labels.size() << " times for " << args.files.size() << " files\n";
    return kExitConfig;
  }
  try {
    (void)metric_value(StepRecord{}, args.metric);
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  try {
    std::vector<std::string> labels;
    std::vector<std::map<std::int64_t, std::optional<double>>> columns;
    std::set<std::int64_t> steps;
    for (std::size_t f = 0; f < args.files.size(); ++f) {
      const std::string& path = args.files[f];
      if (!fs::exists(path)) throw std::runtime_error("no such metrics file: " + path);
      std::string label = args.labels.empty() ? run_label(path) : args.labels[f];
      int dup = 1;
      const std::string base = label;
      while (std::find(labels.begin(), labels.end(), label) != labels.end()) label = base + "#" + std::to_string(++dup);
      labels.push_back(label);

      std::map<std::int64_t, int> last_epoch;
      const std::vector<StepRecord> records = read_metrics(path);
      for (const StepRecord& r : records) last_epoch[r.step] = std::max(last_epoch[r.step], r.mini_epoch);
      std::map<std::int64_t, std::optional<double>> column;
      for (const StepRecord& r : records) {
        const int wanted = args.mini_epoch < 0 ? last_epoch[r.step] : args.mini_epoch;
        if (r.mini_epoch != wanted) continue;
        column[r.step] = metric_value(r, args.metric);
        steps.insert(r.step);
      }
      columns.push_back(std::move(column));
    }

    std::ofstream file;
    if (!args.output.empty()) {
      file.open(args.output);
      if (!file) throw std::runtime_error("cannot write " + args.output);
    }
    std::ostream& os = args.output.empty() ? out : file;
    os << "step";
    for (const std::string& l : labels) os << ',' << l;
    os << '\n';
    for (std::int64_t s : steps) {
      os << s;
      for (const auto& column : columns) {
        os << ',';
        const auto it = column.find(s);
        if (it != column.end() && it->second) os << fmt(*it->second, "%.17g");
      }
      os << '\n';
    }
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

int cmd_analyze(const AnalyzeArgs& args, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  try {
    cfg = load_run_config(args.config, args.overrides);
    for (double rho : args.rho_sweep)
      if (!(rho > 0.0 && rho < 1.0)) throw ConfigError("--rho", "sweep values must lie in (0, 1)");
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  try {
    std::ifstream is(args.log);
    if (!is) throw std::runtime_error("cannot read rollout log " + args.log);
    std::vector<LoggedGroup> logged = read_rollout_log(is);
    if (logged.empty()) throw std::runtime_error("rollout log " + args.log + " has no records");

    const ObjectiveConfig& obj = cfg.objective;
    std::vector<PromptGroup> batch;
    for (LoggedGroup& lg : logged) {
      compute_advantages(lg.group, obj.delta, obj.valid_set);
      batch.push_back(lg.group);
    }
    int vocab = cfg.train.vocab;
    std::optional<PolicyParams> current;
    if (!args.checkpoint.empty()) {
      current = read_checkpoint(args.checkpoint).params;
      vocab = current->vocab;
    }

    std::set<std::int64_t> step_set;
    std::size_t rollouts = 0, tokens = 0;
    std::vector<double> entropies;
    for (const LoggedGroup& lg : logged) step_set.insert(lg.step);
    for (const PromptGroup& g : batch)
      for (const Rollout& r : g.rollouts) {
        ++rollouts;
        tokens += r.length();
        entropies.insert(entropies.end(), r.entropies.begin(), r.entropies.end());
      }
    out << "rollout log " << args.log << '\n';
    out << "  steps " << step_set.size() << ", groups " << batch.size() << ", rollouts " << rollouts << ", tokens "
        << tokens << ", vocab " << vocab << '\n';
    out << "  token entropy: mean " << fmt(mean_of(entropies)) << "  min " << fmt(quantile(entropies, 0.0))
        << "  median " << fmt(quantile(entropies, 0.5)) << "  max " << fmt(quantile(entropies, 1.0)) << '\n';

    ObjectiveConfig espo_cfg = obj;
    espo_cfg.variant = Variant::Espo;
    const BatchPartitions parts = partition_batch(batch, espo_cfg, vocab);
    std::map<int, std::vector<double>> eps_by_bucket, ent_by_bucket;
    std::map<int, std::size_t> tokens_by_bucket;
    std::map<std::size_t, std::size_t> group_counts;
    for (const auto& per_group : parts)
      for (const EntropyPartition& p : per_group) {
        ++group_counts[p.groups.size()];
        for (const EntropyGroup& g : p.groups) {
          eps_by_bucket[g.id].push_back(g.epsilon);
          ent_by_bucket[g.id].push_back(g.mean_entropy);
          tokens_by_bucket[g.id] += g.members.size();
        }
      }
    out << "\nentropy groups (" << (obj.grouping == Grouping::TopFraction ? "top fraction rho " + fmt(obj.rho)
                                                                            : "quantile boundaries")
        << ", alpha " << fmt(obj.alpha) << ")\n";
    out << "  groups per rollout:";
    for (const auto& [k, n] : group_counts) out << "  " << k << " x" << n;
    out << '\n';
    out << "  bucket   groups   tokens   mean_entropy   eps_min      eps_p25      eps_median   eps_p75      eps_max\n";
    for (const auto& [id, eps] : eps_by_bucket) {
      char line[256];
      std::snprintf(line, sizeof line, "  %-8d %-8zu %-8zu %-14.6g %-12.6g %-12.6g %-12.6g %-12.6g %-12.6g\n", id,
                    eps.size(), tokens_by_bucket[id], mean_of(ent_by_bucket[id]), quantile(eps, 0.0),
                    quantile(eps, 0.25), quantile(eps, 0.5), quantile(eps, 0.75), quantile(eps, 1.0));
      out << line;
    }

    out << "\nrho sweep (top-fraction grouping)\n";
    out << "  rho      mean_high_size   mean_ceil(rho*T)   rollouts_matching   mean_eps_high   mean_eps_low\n";
    for (double rho : args.rho_sweep) {
      ObjectiveConfig sweep = espo_cfg;
      sweep.grouping = Grouping::TopFraction;
      sweep.rho = rho;
      const BatchPartitions sp = partition_batch(batch, sweep, vocab);
      std::vector<double> high_sizes, expected, eps_high, eps_low;
      std::size_t matching = 0;
      for (std::size_t b = 0; b < batch.size(); ++b)
        for (std::size_t i = 0; i < batch[b].rollouts.size(); ++i) {
          const EntropyPartition& p = sp[b][i];
          const double T = static_cast<double>(p.length());
          const double want = std::clamp(std::ceil(rho * T - 1e-9), 1.0, T);
          double high = 0;
          for (const EntropyGroup& g : p.groups)
            if (g.id == 1) {
              high = static_cast<double>(g.members.size());
              eps_high.push_back(g.epsilon);
            } else {
              eps_low.push_back(g.epsilon);
            }
          high_sizes.push_back(high);
          expected.push_back(want);
          if (high == want) ++matching;
        }
      char line[256];
      std::snprintf(line, sizeof line, "  %-8.3g %-16.6g %-18.6g %zu/%-17zu %-15.6g %-12.6g\n", rho,
                    mean_of(high_sizes), mean_of(expected), matching, high_sizes.size(), mean_of(eps_high),
                    mean_of(eps_low));
      out << line;
    }

    const PolicyParams* policy = current ? &*current : nullptr;
    out << "\nwould-be clip fractions ("
        << (policy ? "current policy from " + args.checkpoint : std::string("no checkpoint: current = behaviour policy"))
        << ")\n";
    if (policy == nullptr) {
      out << "  all ratios are 1 without a checkpoint; every algorithm clips 0 tokens\n";
    } else {
      bool any_signal = false;
      for (const PromptGroup& g : batch) any_signal = any_signal || has_signal(g);
      out << "  algorithm    clip_low     clip_high    clip_total   mean_ratio   mean_eps\n";
      for (Variant v : kAllVariants) {
        ObjectiveConfig vc = v == Variant::Espo ? espo_cfg : ObjectiveConfig::defaults(v);
        std::vector<PromptGroup> sub = vc.filters_batch() ? dynamic_filter(batch) : batch;
        if (sub.empty()) {
          out << "  " << to_string(v) << "  (no group with signal)\n";
          continue;
        }
        LossOptions lo;
        lo.temperature = cfg.train.temperature;
        lo.threads = cfg.train.threads;
        const LossReport rep = compute_loss(*policy, sub, vc, lo);
        char line[256];
        std::snprintf(line, sizeof line, "  %-12s %-12.6g %-12.6g %-12.6g %-12.6g %s\n", to_string(v).c_str(),
                      rep.clip_low, rep.clip_high, rep.clip_low + rep.clip_high, rep.mean_ratio,
                      rep.mean_epsilon ? fmt(*rep.mean_epsilon).c_str() : "-");
        out << line;
      }
      if (!any_signal) out << "  note: no group carries advantage signal\n";
    }
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace espo
