#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "espo/autodiff.hpp"
#include "espo/softmax.hpp"

namespace espo {

using Rng = std::mt19937_64;

inline constexpr int kPadToken = 0;
inline constexpr int kEosToken = 1;

/// Uniform draw in [0, 1) using the top 53 bits of the generator.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// One-hot context window -> tanh hidden layer -> vocabulary logits.
///
/// Input weights are H x (V*C); column c*V + token selects the embedding of
/// `token` at window slot c (slot 0 is the oldest position).
struct PolicyParams {
  int vocab = 0;
  int context = 0;
  int hidden = 0;
  Eigen::MatrixXd w_in;      // H x V*C
  Eigen::VectorXd b_hidden;  // H
  Eigen::MatrixXd w_out;     // V x H
  Eigen::VectorXd b_out;     // V

  static PolicyParams zeros(int vocab, int context, int hidden);
  static PolicyParams random(int vocab, int context, int hidden, double scale, Rng& rng);

  Eigen::Index parameter_count() const;
  Eigen::VectorXd flatten() const;
  void assign(const Eigen::VectorXd& flat);
  std::vector<std::string> parameter_names() const;
  bool all_finite() const;

  using scalar = double;
  double in(int j, int k) const { return w_in(j, k); }
  double hb(int j) const { return b_hidden(j); }
  double out(int v, int j) const { return w_out(v, j); }
  double ob(int v) const { return b_out(v); }
};

bool operator==(const PolicyParams& a, const PolicyParams& b);

/// Immutable deep copy of the parameters used as the behaviour policy.
class PolicySnapshot {
 public:
  explicit PolicySnapshot(const PolicyParams& params)
      : params_(std::make_shared<const PolicyParams>(params)) {}

  const PolicyParams& params() const { return *params_; }

 private:
  std::shared_ptr<const PolicyParams> params_;
};

PolicySnapshot snapshot(const PolicyParams& params);
PolicySnapshot snapshot(const PolicySnapshot& snap);

/// Parameters registered on a tape in `PolicyParams::flatten` order.
struct TapeParams {
  int vocab = 0;
  int context = 0;
  int hidden = 0;
  std::vector<Var> flat;

  TapeParams(Tape& tape, const PolicyParams& params);

  using scalar = Var;
  Var in(int j, int k) const { return flat[static_cast<std::size_t>(j * vocab * context + k)]; }
  Var hb(int j) const { return flat[static_cast<std::size_t>(hidden * vocab * context + j)]; }
  Var out(int v, int j) const {
    return flat[static_cast<std::size_t>(hidden * vocab * context + hidden + v * hidden + j)];
  }
  Var ob(int v) const {
    return flat[static_cast<std::size_t>(hidden * vocab * context + hidden + vocab * hidden + v)];
  }
};

/// The `context` tokens preceding position `prefix.size()` of prompt ++ prefix,
/// left-padded with the pad token.
std::vector<int> context_window(std::span<const int> prompt, std::span<const int> prefix, int context);

void check_window(std::span<const int> window, int vocab, int context);

/// Forward pass shared by the plain and tape evaluations. Accumulation order is
/// bias first, then terms in index order, for both scalar types.
template <class Source>
std::vector<typename Source::scalar> logits(const Source& src, std::span<const int> window) {
  using S = typename Source::scalar;
  using std::tanh;
  check_window(window, src.vocab, src.context);
  std::vector<S> hidden;
  hidden.reserve(static_cast<std::size_t>(src.hidden));
  std::vector<S> terms;
  for (int j = 0; j < src.hidden; ++j) {
    terms.clear();
    terms.push_back(src.hb(j));
    for (int c = 0; c < src.context; ++c)
      terms.push_back(src.in(j, c * src.vocab + window[static_cast<std::size_t>(c)]));
    hidden.push_back(tanh(sum(std::span<const S>(terms))));
  }
  std::vector<S> z;
  z.reserve(static_cast<std::size_t>(src.vocab));
  for (int v = 0; v < src.vocab; ++v) {
    terms.clear();
    terms.push_back(src.ob(v));
    for (int j = 0; j < src.hidden; ++j) terms.push_back(src.out(v, j) * hidden[static_cast<std::size_t>(j)]);
    z.push_back(sum(std::span<const S>(terms)));
  }
  return z;
}

/// Shannon entropy in nats of a log-distribution, clamped to [0, ln V].
double token_entropy(std::span<const double> logprobs);

struct TokenDraw {
  int token;
  double logprob;
  double entropy;
};

inline constexpr double kGreedyTemperature = 1e-6;

/// Draws from softmax(logits / temperature). Below kGreedyTemperature the
/// argmax is returned with logprob 0 and entropy 0.
TokenDraw sample_token(const PolicySnapshot& snap, std::span<const int> window, double temperature, Rng& rng);

/// Per-token log-probabilities of `response` given `prompt`, plain arithmetic.
std::vector<double> response_logprobs(const PolicyParams& params, std::span<const int> prompt,
                                      std::span<const int> response, double temperature);

/// Same quantity recorded on a tape.
std::vector<Var> response_logprobs(const TapeParams& params, std::span<const int> prompt,
                                   std::span<const int> response, double temperature);

/// Versioned text checkpoint: header (vocab, context, hidden, format-version),
/// optional integer metadata, then named real arrays at 17 significant digits.
struct Checkpoint {
  PolicyParams params;
  std::map<std::string, std::int64_t> meta;
  std::map<std::string, Eigen::VectorXd> extra;
};

inline constexpr int kCheckpointVersion = 1;

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

}  // namespace espo
