#include "espo/config.hpp"

#include <fstream>
#include <sstream>

namespace espo {

using nlohmann::json;

json default_config_tree() {
  return json::parse(R"({
  "run": {"label": "", "output_dir": "runs/run", "checkpoint_every": 50, "rollout_log": false, "threads": 1},
  "policy": {"vocab": 8, "context": 6, "hidden": 32, "init_scale": 0.5},
  "task": {"kind": "parity", "difficulty": 4, "modulus": 7, "schedule": []},
  "train": {"batch_prompts": 16, "group_size": 8, "steps": 200, "mini_epochs": 2, "lr": 0.003,
            "beta1": 0.9, "beta2": 0.999, "adam_eps": 1e-8, "max_length": 16, "temperature": 1.0, "seed": 1},
  "objective": {"algo": "espo", "eps_low": null, "eps_high": null, "alpha": 0.02,
                "grouping": "top_fraction", "rho": 0.2, "quantiles": [], "denominator": "old_policy",
                "epsilon_mode": "group_mean", "fixed_clip": false, "delta": 1e-6,
                "dynamic_filter": null, "valid_set": "parseable"}
})");
}

std::string describe_config_keys() {
  return R"(Configuration keys (JSON file, override with --set key=value):
  run.label             run label written to the resolved config ("" = <algo>-s<seed>)
  run.output_dir        directory for metrics.csv, config.resolved.json, checkpoints/   [runs/run]
  run.checkpoint_every  steps between checkpoints, 0 disables                              [50]
  run.rollout_log       write rollouts.jsonl for `analyze`                                 [false]
  run.threads           worker threads for rollout and loss evaluation (0 = all cores)   [1]
  policy.vocab          vocabulary size V (0 pad, 1 end-of-sequence, 2 separator)        [8]
  policy.context        context window C                                                   [6]
  policy.hidden         hidden width H                                                     [32]
  policy.init_scale     std of the Gaussian weight initialisation                          [0.5]
  task.kind             parity | modular-sum | copy                                        [parity]
  task.difficulty       operand count / string length                                      [4]
  task.modulus          modulus for modular-sum                                            [7]
  task.schedule         [[from_step, difficulty], ...]                                     [[]]
  train.batch_prompts   prompts per step B                                                 [16]
  train.group_size      responses per prompt G                                             [8]
  train.steps           training steps                                                     [200]
  train.mini_epochs     gradient passes per collected batch                                [2]
  train.lr              Adam learning rate                                                 [0.003]
  train.beta1 / beta2 / adam_eps   Adam moment decays and stabilizer              [0.9 / 0.999 / 1e-8]
  train.max_length      generation limit in tokens                                         [16]
  train.temperature     sampling temperature                                               [1.0]
  train.seed            master seed                                                        [1]
  objective.algo        grpo | dapo | gmpo | cispo | gspo | gspo-token | espo              [espo]
  objective.eps_low / eps_high  fixed clip half-widths (null = algorithm default)
                        grpo 0.2/0.2, dapo 0.2/0.28, cispo 0.2/0.28, gmpo 1-e^-0.4/e^0.4-1,
                        gspo, gspo-token, espo (fixed_clip) 3e-4/4e-4
  objective.alpha       espo clip scale                                                    [0.02]
  objective.grouping    top_fraction | quantile                                            [top_fraction]
  objective.rho         top-fraction share of highest-entropy tokens                       [0.2]
  objective.quantiles   interior quantile boundaries for grouping=quantile                 [[]]
  objective.denominator old_policy | current_policy                                        [old_policy]
  objective.epsilon_mode group_mean | per_token                                            [group_mean]
  objective.fixed_clip  espo with (eps_low, eps_high) in every group                       [false]
  objective.delta       std threshold below which a group is degenerate                    [1e-6]
  objective.dynamic_filter drop groups without signal (null = on for dapo only)
  objective.valid_set   parseable | correct: rollouts that enter advantage normalization  [parseable]
)";
}

namespace {

void merge_into(json& base, const json& user, const std::string& prefix) {
  if (!user.is_object()) throw ConfigError(prefix, "expected an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError(path, "unknown key");
    json& slot = base[it.key()];
    if (slot.is_object())
      merge_into(slot, it.value(), path);
    else
      slot = it.value();
  }
}

template <class T>
T get(const json& tree, const std::string& section, const std::string& key) {
  const json& v = tree.at(section).at(key);
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError(section + "." + key, "has the wrong type (" + std::string(v.type_name()) + ")");
  }
}

template <class T, class Parse>
T parse_enum(const json& tree, const std::string& section, const std::string& key, Parse parse) {
  const std::string name = get<std::string>(tree, section, key);
  try {
    return parse(name);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(section + "." + key, e.what());
  }
}

std::string enum_name(Grouping g) { return g == Grouping::TopFraction ? "top_fraction" : "quantile"; }
std::string enum_name(Denominator d) { return d == Denominator::OldPolicy ? "old_policy" : "current_policy"; }
std::string enum_name(EpsilonMode m) { return m == EpsilonMode::GroupMean ? "group_mean" : "per_token"; }
std::string enum_name(ValidSet s) { return s == ValidSet::Parseable ? "parseable" : "correct"; }

}  // namespace

json merge_config(const json& user) {
  json tree = default_config_tree();
  if (user.is_null()) return tree;
  json body = user;
  if (body.is_object()) body.erase("code_version");
  merge_into(tree, body, "");
  return tree;
}

void apply_override(json& tree, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError(assignment, "override must look like key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }

  std::vector<std::string> path;
  if (key.find('.') != std::string::npos) {
    std::istringstream is(key);
    for (std::string part; std::getline(is, part, '.');) path.push_back(part);
  } else {
    for (auto it = tree.begin(); it != tree.end(); ++it)
      if (it.value().is_object() && it.value().contains(key)) {
        if (!path.empty()) throw ConfigError(key, "ambiguous key; use section.key");
        path = {it.key(), key};
      }
    if (path.empty()) throw ConfigError(key, "unknown key");
  }
  json* slot = &tree;
  std::string walked;
  for (const std::string& part : path) {
    walked += walked.empty() ? part : "." + part;
    if (!slot->is_object() || !slot->contains(part)) throw ConfigError(walked, "unknown key");
    slot = &(*slot)[part];
  }
  if (slot->is_object()) throw ConfigError(walked, "is a section, not a value");
  *slot = value;
}

RunConfig resolve_config(const json& tree) {
  RunConfig cfg;
  TrainConfig& t = cfg.train;
  t.vocab = get<int>(tree, "policy", "vocab");
  t.context = get<int>(tree, "policy", "context");
  t.hidden = get<int>(tree, "policy", "hidden");
  t.init_scale = get<double>(tree, "policy", "init_scale");
  t.task = parse_enum<TaskKind>(tree, "task", "kind", parse_task_kind);
  t.difficulty = get<int>(tree, "task", "difficulty");
  t.modulus = get<int>(tree, "task", "modulus");
  t.difficulty_schedule = get<std::vector<std::pair<std::int64_t, int>>>(tree, "task", "schedule");
  t.batch_prompts = get<int>(tree, "train", "batch_prompts");
  t.group_size = get<int>(tree, "train", "group_size");
  t.steps = get<std::int64_t>(tree, "train", "steps");
  t.mini_epochs = get<int>(tree, "train", "mini_epochs");
  t.adam.lr = get<double>(tree, "train", "lr");
  t.adam.beta1 = get<double>(tree, "train", "beta1");
  t.adam.beta2 = get<double>(tree, "train", "beta2");
  t.adam.eps = get<double>(tree, "train", "adam_eps");
  t.max_length = get<int>(tree, "train", "max_length");
  t.temperature = get<double>(tree, "train", "temperature");
  t.seed = get<std::uint64_t>(tree, "train", "seed");
  const int threads = get<int>(tree, "run", "threads");
  if (threads < 0) throw ConfigError("run.threads", "must be >= 0");
  t.threads = static_cast<unsigned>(threads);

  const Variant variant = parse_enum<Variant>(tree, "objective", "algo", parse_variant);
  ObjectiveConfig& o = cfg.objective;
  o = ObjectiveConfig::defaults(variant);
  const json& obj = tree.at("objective");
  if (!obj.at("eps_low").is_null()) o.eps_low = get<double>(tree, "objective", "eps_low");
  if (!obj.at("eps_high").is_null()) o.eps_high = get<double>(tree, "objective", "eps_high");
  if (!obj.at("dynamic_filter").is_null()) o.dynamic_filter = get<bool>(tree, "objective", "dynamic_filter");
  o.alpha = get<double>(tree, "objective", "alpha");
  o.grouping = parse_enum<Grouping>(tree, "objective", "grouping", [](const std::string& s) {
    if (s == "top_fraction") return Grouping::TopFraction;
    if (s == "quantile") return Grouping::Quantile;
    throw std::invalid_argument("expected top_fraction or quantile, got '" + s + "'");
  });
  o.rho = get<double>(tree, "objective", "rho");
  o.quantiles = get<std::vector<double>>(tree, "objective", "quantiles");
  o.denominator = parse_enum<Denominator>(tree, "objective", "denominator", [](const std::string& s) {
    if (s == "old_policy") return Denominator::OldPolicy;
    if (s == "current_policy") return Denominator::CurrentPolicy;
    throw std::invalid_argument("expected old_policy or current_policy, got '" + s + "'");
  });
  o.epsilon_mode = parse_enum<EpsilonMode>(tree, "objective", "epsilon_mode", [](const std::string& s) {
    if (s == "group_mean") return EpsilonMode::GroupMean;
    if (s == "per_token") return EpsilonMode::PerToken;
    throw std::invalid_argument("expected group_mean or per_token, got '" + s + "'");
  });
  o.fixed_clip = get<bool>(tree, "objective", "fixed_clip");
  o.delta = get<double>(tree, "objective", "delta");
  o.valid_set = parse_enum<ValidSet>(tree, "objective", "valid_set", [](const std::string& s) {
    if (s == "parseable") return ValidSet::Parseable;
    if (s == "correct") return ValidSet::Correct;
    throw std::invalid_argument("expected parseable or correct, got '" + s + "'");
  });

  cfg.output_dir = get<std::string>(tree, "run", "output_dir");
  cfg.checkpoint_every = get<std::int64_t>(tree, "run", "checkpoint_every");
  cfg.rollout_log = get<bool>(tree, "run", "rollout_log");
  cfg.label = get<std::string>(tree, "run", "label");
  if (cfg.label.empty()) cfg.label = to_string(variant) + "-s" + std::to_string(t.seed);
  if (cfg.checkpoint_every < 0) throw ConfigError("run.checkpoint_every", "must be >= 0");

  // Map validation failures ("section.key: message") onto key paths.
  auto rethrow = [](const std::invalid_argument& e) {
    const std::string msg = e.what();
    const auto colon = msg.find(':');
    throw ConfigError(colon == std::string::npos ? "" : msg.substr(0, colon),
                      colon == std::string::npos ? msg : msg.substr(colon + 2));
  };
  try {
    t.validate();
    o.validate();
  } catch (const std::invalid_argument& e) {
    rethrow(e);
  }
  return cfg;
}

json resolved_tree(const RunConfig& cfg) {
  const TrainConfig& t = cfg.train;
  const ObjectiveConfig& o = cfg.objective;
  json tree = default_config_tree();
  tree["run"] = {{"label", cfg.label},
                 {"output_dir", cfg.output_dir},
                 {"checkpoint_every", cfg.checkpoint_every},
                 {"rollout_log", cfg.rollout_log},
                 {"threads", t.threads}};
  tree["policy"] = {{"vocab", t.vocab}, {"context", t.context}, {"hidden", t.hidden}, {"init_scale", t.init_scale}};
  tree["task"] = {{"kind", to_string(t.task)},
                  {"difficulty", t.difficulty},
                  {"modulus", t.modulus},
                  {"schedule", t.difficulty_schedule}};
  tree["train"] = {{"batch_prompts", t.batch_prompts}, {"group_size", t.group_size}, {"steps", t.steps},
                   {"mini_epochs", t.mini_epochs},     {"lr", t.adam.lr},             {"beta1", t.adam.beta1},
                   {"beta2", t.adam.beta2},            {"adam_eps", t.adam.eps},      {"max_length", t.max_length},
                   {"temperature", t.temperature},     {"seed", t.seed}};
  tree["objective"] = {{"algo", to_string(o.variant)},
                       {"eps_low", o.eps_low},
                       {"eps_high", o.eps_high},
                       {"alpha", o.alpha},
                       {"grouping", enum_name(o.grouping)},
                       {"rho", o.rho},
                       {"quantiles", o.quantiles},
                       {"denominator", enum_name(o.denominator)},
                       {"epsilon_mode", enum_name(o.epsilon_mode)},
                       {"fixed_clip", o.fixed_clip},
                       {"delta", o.delta},
                       {"dynamic_filter", o.filters_batch()},
                       {"valid_set", enum_name(o.valid_set)}};
  tree["code_version"] = kCodeVersion;
  return tree;
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  json user;
  if (!path.empty()) {
    std::ifstream is(path);
    if (!is) throw ConfigError("", "cannot read config file '" + path + "'");
    try {
      user = json::parse(is);
    } catch (const json::exception& e) {
      throw ConfigError("", "config file '" + path + "' is not valid JSON: " + e.what());
    }
  }
  json tree = merge_config(user);
  for (const std::string& o : overrides) apply_override(tree, o);
  return resolve_config(tree);
}

}  // namespace espo
