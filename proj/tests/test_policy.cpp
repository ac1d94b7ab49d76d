#include <doctest.h>

#include <array>
#include <cmath>
#include <filesystem>

#include "espo/oracle.hpp"
#include "espo/policy.hpp"

using namespace espo;

namespace {

Eigen::VectorXd naive_logits(const PolicyParams& p, const std::vector<int>& window) {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(p.vocab * p.context);
  for (int c = 0; c < p.context; ++c) x(c * p.vocab + window[static_cast<std::size_t>(c)]) = 1.0;
  const Eigen::VectorXd h = (p.w_in * x + p.b_hidden).array().tanh().matrix();
  return p.w_out * h + p.b_out;
}

}  // namespace

TEST_CASE("zero parameters give zero logits") {
  const PolicyParams p = PolicyParams::zeros(6, 3, 4);
  const std::vector<int> w{0, 3, 5};
  for (double z : logits(p, w)) CHECK(z == 0.0);
  CHECK(p.parameter_count() == 6 * 3 * 4 + 4 + 4 * 6 + 6);
}

TEST_CASE("logits match matrix arithmetic and are deterministic") {
  Rng rng(5);
  const PolicyParams p = PolicyParams::random(7, 4, 9, 0.8, rng);
  const std::vector<int> w{0, 2, 6, 1};
  const auto a = logits(p, w);
  const auto b = logits(p, w);
  CHECK(a == b);
  const Eigen::VectorXd ref = naive_logits(p, w);
  for (int v = 0; v < 7; ++v) CHECK(std::abs(a[static_cast<std::size_t>(v)] - ref(v)) <= 1e-12);
  CHECK_THROWS(logits(p, std::vector<int>{0, 2, 7, 1}));
  CHECK_THROWS(logits(p, std::vector<int>{0, 2, 1}));
}

TEST_CASE("tape and plain forward passes agree bit for bit") {
  Rng rng(9);
  const PolicyParams p = PolicyParams::random(5, 3, 4, 0.5, rng);
  Tape tape;
  const TapeParams tp(tape, p);
  const std::vector<int> prompt{3, 4, 2};
  const std::vector<int> response{4, 3, 1};
  const auto plain = response_logprobs(p, prompt, response, 0.9);
  const auto taped = response_logprobs(tp, prompt, response, 0.9);
  for (std::size_t t = 0; t < plain.size(); ++t) CHECK(plain[t] == taped[t].value());
}

TEST_CASE("log_softmax examples") {
  const std::array<double, 4> flat{0, 0, 0, 0};
  for (double v : log_softmax(flat)) CHECK(v == doctest::Approx(-std::log(4.0)).epsilon(1e-15));
  const std::array<double, 2> big{1000.0, 0.0};
  const auto lb = log_softmax(big);
  CHECK(std::abs(lb[0]) <= 1e-12);
  CHECK(lb[1] == doctest::Approx(-1000.0));
  const std::array<double, 2> bad{1.0, std::nan("")};
  CHECK_THROWS(log_softmax(bad));

  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    std::array<double, 6> z{};
    for (double& x : z) x = 10.0 * (uniform01(rng) - 0.5);
    const auto l = log_softmax(z);
    double norm = 0, total = 0;
    for (double x : z) norm += std::exp(x);
    for (std::size_t i = 0; i < z.size(); ++i) {
      CHECK(std::abs(l[i] - std::log(std::exp(z[i]) / norm)) <= 1e-12);
      total += std::exp(l[i]);
    }
    CHECK(std::abs(total - 1.0) <= 1e-12);
  }
}

TEST_CASE("token entropy examples and bounds") {
  const std::array<double, 4> uniform{std::log(0.25), std::log(0.25), std::log(0.25), std::log(0.25)};
  CHECK(token_entropy(uniform) == doctest::Approx(1.3862944).epsilon(1e-7));
  const double ninf = -std::numeric_limits<double>::infinity();
  const std::array<double, 4> onehot{0.0, ninf, ninf, ninf};
  CHECK(token_entropy(onehot) == 0.0);
  const std::array<double, 4> skewed{std::log(0.5), std::log(0.25), std::log(0.125), std::log(0.125)};
  CHECK(token_entropy(skewed) == doctest::Approx(1.2130076).epsilon(1e-7));

  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    std::array<double, 8> z{};
    for (double& x : z) x = 20.0 * (uniform01(rng) - 0.5);
    const double e = token_entropy(log_softmax(z));
    CHECK(e >= 0.0);
    CHECK(e <= std::log(8.0));
  }
}

TEST_CASE("sampling frequencies, determinism and greedy limit") {
  const PolicySnapshot snap = snapshot(PolicyParams::zeros(4, 2, 3));
  const std::vector<int> w{0, 2};
  Rng rng(123);
  std::array<int, 4> counts{};
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const TokenDraw d = sample_token(snap, w, 1.0, rng);
    ++counts[static_cast<std::size_t>(d.token)];
    if (i == 0) {
      CHECK(d.logprob == doctest::Approx(std::log(0.25)));
      CHECK(d.entropy == doctest::Approx(std::log(4.0)));
    }
  }
  for (int c : counts) CHECK(std::abs(c / static_cast<double>(n) - 0.25) <= 0.01);

  Rng r1(7), r2(7);
  Rng prng(1);
  const PolicySnapshot s2 = snapshot(PolicyParams::random(4, 2, 3, 1.0, prng));
  for (int i = 0; i < 50; ++i) CHECK(sample_token(s2, w, 1.0, r1).token == sample_token(s2, w, 1.0, r2).token);

  const auto z = logits(s2.params(), w);
  const int argmax = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
  const TokenDraw g = sample_token(s2, w, 1e-9, r1);
  CHECK(g.token == argmax);
  CHECK(g.logprob == 0.0);
  CHECK(g.entropy == 0.0);
  CHECK_THROWS_AS(sample_token(s2, w, 0.0, r1), std::invalid_argument);
}

TEST_CASE("snapshots are deep copies") {
  Rng rng(8);
  PolicyParams p = PolicyParams::random(5, 3, 4, 0.5, rng);
  const PolicySnapshot snap = snapshot(p);
  const std::vector<int> prompt{3, 2}, response{4, 1};
  const auto before = response_logprobs(snap.params(), prompt, response, 1.0);
  p.w_out(1, 0) += 0.3;
  p.b_out(3) -= 0.2;
  CHECK(response_logprobs(snap.params(), prompt, response, 1.0) == before);
  CHECK(response_logprobs(p, prompt, response, 1.0) != before);
  const PolicySnapshot again = snapshot(snap);
  CHECK(again.params() == snap.params());
}

TEST_CASE("sequence log-prob gradient matches finite differences") {
  Rng rng(12);
  const PolicyParams p = PolicyParams::random(5, 3, 4, 0.7, rng);
  const std::vector<int> prompt{3, 4, 2}, response{4, 0, 3, 1};
  Tape tape;
  const TapeParams tp(tape, p);
  const auto lp = response_logprobs(tp, prompt, response, 1.0);
  const std::vector<double> g = tape.backward(sum(std::span<const Var>(lp)).id);
  PolicyParams probe = p;
  const Eigen::VectorXd fd = finite_diff_grad(
      [&](const Eigen::VectorXd& x) {
        probe.assign(x);
        const auto l = response_logprobs(probe, prompt, response, 1.0);
        return sum(std::span<const double>(l));
      },
      p.flatten());
  for (Eigen::Index j = 0; j < fd.size(); ++j) {
    const double a = g[static_cast<std::size_t>(j)];
    CHECK(std::abs(a - fd(j)) / std::max({std::abs(a), std::abs(fd(j)), 1e-6}) <= 1e-4);
  }
}

TEST_CASE("flatten and assign round trip with named parameters") {
  Rng rng(1);
  const PolicyParams p = PolicyParams::random(4, 2, 3, 1.0, rng);
  PolicyParams q = PolicyParams::zeros(4, 2, 3);
  q.assign(p.flatten());
  CHECK(q == p);
  const auto names = p.parameter_names();
  CHECK(names.size() == static_cast<std::size_t>(p.parameter_count()));
  CHECK(names.front() == "w_in[0][0]");
  CHECK(names.back() == "b_out[3]");
}

TEST_CASE("checkpoint round trip is exact") {
  Rng rng(21);
  Checkpoint ck;
  ck.params = PolicyParams::random(6, 3, 5, 0.9, rng);
  ck.meta["next_step"] = 17;
  ck.extra["adam_m"] = Eigen::VectorXd::Random(ck.params.parameter_count()) * 1e-7;
  const auto path = (std::filesystem::temp_directory_path() / "espo_policy_ckpt_test.ckpt").string();
  write_checkpoint(path, ck);
  const Checkpoint back = read_checkpoint(path);
  CHECK(back.params == ck.params);
  CHECK(back.meta == ck.meta);
  CHECK(back.extra.at("adam_m") == ck.extra.at("adam_m"));
  std::filesystem::remove(path);
  CHECK_THROWS(read_checkpoint(path));
}
