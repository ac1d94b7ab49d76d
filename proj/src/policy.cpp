#include "espo/policy.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace espo {

PolicyParams PolicyParams::zeros(int vocab, int context, int hidden) {
  if (vocab < 2 || context < 1 || hidden < 1)
    throw std::invalid_argument("policy: need vocab >= 2, context >= 1, hidden >= 1");
  PolicyParams p;
  p.vocab = vocab;
  p.context = context;
  p.hidden = hidden;
  p.w_in = Eigen::MatrixXd::Zero(hidden, vocab * context);
  p.b_hidden = Eigen::VectorXd::Zero(hidden);
  p.w_out = Eigen::MatrixXd::Zero(vocab, hidden);
  p.b_out = Eigen::VectorXd::Zero(vocab);
  return p;
}

PolicyParams PolicyParams::random(int vocab, int context, int hidden, double scale, Rng& rng) {
  PolicyParams p = zeros(vocab, context, hidden);
  std::normal_distribution<double> normal(0.0, scale);
  Eigen::VectorXd flat(p.parameter_count());
  for (Eigen::Index k = 0; k < flat.size(); ++k) flat(k) = normal(rng);
  p.assign(flat);
  return p;
}

Eigen::Index PolicyParams::parameter_count() const {
  return w_in.size() + b_hidden.size() + w_out.size() + b_out.size();
}

// Row-major blocks in the order w_in, b_hidden, w_out, b_out.
Eigen::VectorXd PolicyParams::flatten() const {
  Eigen::VectorXd flat(parameter_count());
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < w_in.rows(); ++j)
    for (Eigen::Index c = 0; c < w_in.cols(); ++c) flat(k++) = w_in(j, c);
  for (Eigen::Index j = 0; j < b_hidden.size(); ++j) flat(k++) = b_hidden(j);
  for (Eigen::Index v = 0; v < w_out.rows(); ++v)
    for (Eigen::Index j = 0; j < w_out.cols(); ++j) flat(k++) = w_out(v, j);
  for (Eigen::Index v = 0; v < b_out.size(); ++v) flat(k++) = b_out(v);
  return flat;
}

void PolicyParams::assign(const Eigen::VectorXd& flat) {
  if (flat.size() != parameter_count()) throw std::invalid_argument("policy: flat parameter size mismatch");
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < w_in.rows(); ++j)
    for (Eigen::Index c = 0; c < w_in.cols(); ++c) w_in(j, c) = flat(k++);
  for (Eigen::Index j = 0; j < b_hidden.size(); ++j) b_hidden(j) = flat(k++);
  for (Eigen::Index v = 0; v < w_out.rows(); ++v)
    for (Eigen::Index j = 0; j < w_out.cols(); ++j) w_out(v, j) = flat(k++);
  for (Eigen::Index v = 0; v < b_out.size(); ++v) b_out(v) = flat(k++);
}

std::vector<std::string> PolicyParams::parameter_names() const {
  std::vector<std::string> names;
  names.reserve(static_cast<std::size_t>(parameter_count()));
  for (Eigen::Index j = 0; j < w_in.rows(); ++j)
    for (Eigen::Index c = 0; c < w_in.cols(); ++c)
      names.push_back("w_in[" + std::to_string(j) + "][" + std::to_string(c) + "]");
  for (Eigen::Index j = 0; j < b_hidden.size(); ++j) names.push_back("b_hidden[" + std::to_string(j) + "]");
  for (Eigen::Index v = 0; v < w_out.rows(); ++v)
    for (Eigen::Index j = 0; j < w_out.cols(); ++j)
      names.push_back("w_out[" + std::to_string(v) + "][" + std::to_string(j) + "]");
  for (Eigen::Index v = 0; v < b_out.size(); ++v) names.push_back("b_out[" + std::to_string(v) + "]");
  return names;
}

bool PolicyParams::all_finite() const {
  return w_in.allFinite() && b_hidden.allFinite() && w_out.allFinite() && b_out.allFinite();
}

bool operator==(const PolicyParams& a, const PolicyParams& b) {
  return a.vocab == b.vocab && a.context == b.context && a.hidden == b.hidden && a.w_in == b.w_in &&
         a.b_hidden == b.b_hidden && a.w_out == b.w_out && a.b_out == b.b_out;
}

PolicySnapshot snapshot(const PolicyParams& params) { return PolicySnapshot(params); }
PolicySnapshot snapshot(const PolicySnapshot& snap) { return PolicySnapshot(snap.params()); }

TapeParams::TapeParams(Tape& tape, const PolicyParams& params)
    : vocab(params.vocab), context(params.context), hidden(params.hidden) {
  const Eigen::VectorXd values = params.flatten();
  const std::vector<std::string> names = params.parameter_names();
  flat.reserve(static_cast<std::size_t>(values.size()));
  for (Eigen::Index k = 0; k < values.size(); ++k)
    flat.push_back(Var{&tape, tape.parameter(names[static_cast<std::size_t>(k)], values(k))});
}

std::vector<int> context_window(std::span<const int> prompt, std::span<const int> prefix, int context) {
  std::vector<int> window(static_cast<std::size_t>(context), kPadToken);
  const std::size_t total = prompt.size() + prefix.size();
  for (int c = 0; c < context; ++c) {
    const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(total) - context + c;
    if (pos < 0) continue;
    const auto upos = static_cast<std::size_t>(pos);
    window[static_cast<std::size_t>(c)] = upos < prompt.size() ? prompt[upos] : prefix[upos - prompt.size()];
  }
  return window;
}

void check_window(std::span<const int> window, int vocab, int context) {
  if (static_cast<int>(window.size()) != context)
    throw std::invalid_argument("policy: context window has length " + std::to_string(window.size()) +
                                ", expected " + std::to_string(context));
  for (int t : window)
    if (t < 0 || t >= vocab) throw std::out_of_range("policy: token id " + std::to_string(t) + " out of range");
}

double token_entropy(std::span<const double> logprobs) {
  double h = 0.0;
  for (double lp : logprobs) {
    const double p = std::exp(lp);
    if (p > 0.0) h -= p * lp;
  }
  const double upper = std::log(static_cast<double>(logprobs.size()));
  return std::min(std::max(h, 0.0), upper);
}

TokenDraw sample_token(const PolicySnapshot& snap, std::span<const int> window, double temperature, Rng& rng) {
  if (!(temperature > 0.0)) throw std::invalid_argument("sample_token: temperature must be positive");
  const std::vector<double> z = logits(snap.params(), window);
  if (temperature < kGreedyTemperature) {
    int best = 0;
    for (int v = 1; v < static_cast<int>(z.size()); ++v)
      if (z[static_cast<std::size_t>(v)] > z[static_cast<std::size_t>(best)]) best = v;
    return {best, 0.0, 0.0};
  }
  const std::vector<double> lp = log_softmax(z, temperature);
  const double u = uniform01(rng);
  double cumulative = 0.0;
  int token = static_cast<int>(lp.size()) - 1;
  for (std::size_t v = 0; v < lp.size(); ++v) {
    cumulative += std::exp(lp[v]);
    if (u < cumulative) {
      token = static_cast<int>(v);
      break;
    }
  }
  return {token, lp[static_cast<std::size_t>(token)], token_entropy(lp)};
}

std::vector<double> response_logprobs(const PolicyParams& params, std::span<const int> prompt,
                                      std::span<const int> response, double temperature) {
  std::vector<double> out;
  out.reserve(response.size());
  for (std::size_t t = 0; t < response.size(); ++t) {
    const std::vector<int> window = context_window(prompt, response.first(t), params.context);
    const std::vector<double> lp = log_softmax(logits(params, window), temperature);
    out.push_back(lp.at(static_cast<std::size_t>(response[t])));
  }
  return out;
}

std::vector<Var> response_logprobs(const TapeParams& params, std::span<const int> prompt,
                                   std::span<const int> response, double temperature) {
  std::vector<Var> out;
  out.reserve(response.size());
  if (params.flat.empty()) return out;
  Tape& tape = *params.flat.front().tape;
  std::vector<NodeId> ids(static_cast<std::size_t>(params.vocab));
  for (std::size_t t = 0; t < response.size(); ++t) {
    const std::vector<int> window = context_window(prompt, response.first(t), params.context);
    const std::vector<Var> z = logits(params, window);
    for (std::size_t v = 0; v < z.size(); ++v) ids[v] = z[v].id;
    out.push_back(Var{&tape, tape.log_softmax(ids, response[t], temperature)});
  }
  return out;
}

namespace {

void write_array(std::ostream& os, const std::string& name, const Eigen::VectorXd& values) {
  os << "array " << name << ' ' << values.size() << '\n';
  char buf[32];
  for (Eigen::Index k = 0; k < values.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%.17g", values(k));
    os << buf << (k + 1 == values.size() || (k + 1) % 8 == 0 ? '\n' : ' ');
  }
}

}  // namespace

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  const PolicyParams& p = ckpt.params;
  os << "espo-checkpoint " << kCheckpointVersion << '\n';
  os << "vocab " << p.vocab << "\ncontext " << p.context << "\nhidden " << p.hidden << '\n';
  for (const auto& [key, value] : ckpt.meta) os << "meta " << key << ' ' << value << '\n';
  const Eigen::VectorXd flat = p.flatten();
  const Eigen::Index n_in = p.w_in.size(), n_h = p.b_hidden.size(), n_out = p.w_out.size();
  write_array(os, "w_in", flat.segment(0, n_in));
  write_array(os, "b_hidden", flat.segment(n_in, n_h));
  write_array(os, "w_out", flat.segment(n_in + n_h, n_out));
  write_array(os, "b_out", flat.segment(n_in + n_h + n_out, p.b_out.size()));
  for (const auto& [name, values] : ckpt.extra) write_array(os, name, values);
  os << "end\n";
  if (!os) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  auto fail = [&](const std::string& what) { return std::runtime_error("checkpoint '" + path + "': " + what); };
  std::string magic;
  int version = 0;
  if (!(is >> magic >> version) || magic != "espo-checkpoint") throw fail("bad header");
  if (version != kCheckpointVersion) throw fail("unsupported format-version " + std::to_string(version));
  int dims[3] = {0, 0, 0};
  const char* dim_names[3] = {"vocab", "context", "hidden"};
  for (int d = 0; d < 3; ++d) {
    std::string key;
    if (!(is >> key >> dims[d]) || key != dim_names[d]) throw fail(std::string("expected ") + dim_names[d]);
  }
  Checkpoint ckpt;
  ckpt.params = PolicyParams::zeros(dims[0], dims[1], dims[2]);
  std::map<std::string, Eigen::VectorXd> arrays;
  std::string word;
  while (is >> word) {
    if (word == "end") break;
    if (word == "meta") {
      std::string key;
      std::int64_t value = 0;
      if (!(is >> key >> value)) throw fail("malformed meta line");
      ckpt.meta[key] = value;
    } else if (word == "array") {
      std::string name;
      Eigen::Index n = 0;
      if (!(is >> name >> n) || n < 0) throw fail("malformed array header");
      Eigen::VectorXd values(n);
      for (Eigen::Index k = 0; k < n; ++k) {
        std::string tok;
        if (!(is >> tok)) throw fail("truncated array '" + name + "'");
        values(k) = std::stod(tok);
      }
      arrays[name] = std::move(values);
    } else {
      throw fail("unexpected token '" + word + "'");
    }
  }
  if (word != "end") throw fail("missing end marker");
  const PolicyParams& p = ckpt.params;
  const std::pair<const char*, Eigen::Index> blocks[] = {
      {"w_in", p.w_in.size()}, {"b_hidden", p.b_hidden.size()}, {"w_out", p.w_out.size()}, {"b_out", p.b_out.size()}};
  Eigen::VectorXd flat(p.parameter_count());
  Eigen::Index offset = 0;
  for (const auto& [name, n] : blocks) {
    auto it = arrays.find(name);
    if (it == arrays.end() || it->second.size() != n) throw fail(std::string("array '") + name + "' missing or mis-sized");
    flat.segment(offset, n) = it->second;
    offset += n;
    arrays.erase(it);
  }
  ckpt.params.assign(flat);
  ckpt.extra = std::move(arrays);
  return ckpt;
}

}  // namespace espo
