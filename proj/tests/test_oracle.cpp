#include <doctest.h>

#include <sstream>

#include "espo/oracle.hpp"

using namespace espo;

TEST_CASE("finite differences on closed forms") {
  const Eigen::VectorXd x = Eigen::VectorXd::Constant(1, 3.0);
  const Eigen::VectorXd g = finite_diff_grad([](const Eigen::VectorXd& v) { return v(0) * v(0); }, x);
  CHECK(std::abs(g(0) - 6.0) <= 1e-9);
  const Eigen::VectorXd z = finite_diff_grad([](const Eigen::VectorXd&) { return 4.0; }, Eigen::VectorXd::Ones(3));
  CHECK(z.isZero(0.0));
  CHECK_THROWS_AS(finite_diff_grad([](const Eigen::VectorXd&) { return 0.0; }, x, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(finite_diff_grad([](const Eigen::VectorXd& v) { return std::log(v(0) - 3.0); }, x),
                  std::runtime_error);
}

TEST_CASE("reference loss equals minus the mean advantage on-policy") {
  const GradCheckInstance inst = make_gradcheck_instance(9);
  double expect = 0;
  for (const PromptGroup& g : inst.batch) {
    double s = 0;
    for (double a : g.advantages) s += a;
    expect += s / g.group_size();
  }
  expect /= static_cast<double>(inst.batch.size());
  for (Variant v : kAllVariants) {
    const ObjectiveConfig cfg = ObjectiveConfig::defaults(v);
    const BatchPartitions parts = partition_batch(inst.batch, cfg, inst.behaviour.vocab);
    CHECK(std::abs(reference_loss(inst.behaviour, inst.batch, parts, cfg) + expect) <= 1e-12);
  }
}

TEST_CASE("gradcheck passes for every variant and catches a corrupted gradient") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const GradCheckInstance inst = make_gradcheck_instance(seed);
    for (Variant v : kAllVariants) {
      const GradCheckReport rep = gradcheck(inst.params, inst.batch, ObjectiveConfig::defaults(v));
      CHECK(rep.passed(1e-4));
      CHECK(rep.value_gap <= 1e-10);
      CHECK(rep.entries.size() == static_cast<std::size_t>(inst.params.parameter_count()));
    }
  }
  const GradCheckInstance inst = make_gradcheck_instance(1);
  GradCheckOptions opts;
  opts.corrupt_gradient = true;
  CHECK_FALSE(gradcheck(inst.params, inst.batch, ObjectiveConfig::defaults(Variant::Espo), opts).passed(1e-4));
}

TEST_CASE("boundary crossings are flagged and excluded") {
  GradCheckInstance inst = make_gradcheck_instance(2);
  ObjectiveConfig cfg = ObjectiveConfig::defaults(Variant::Grpo);
  // Put one token ratio exactly on the upper bound so the stencil straddles it.
  Rollout& r = inst.batch[0].rollouts[0];
  const auto lp = response_logprobs(inst.params, r.prompt, r.response, 1.0);
  r.old_logprobs[0] = lp[0] - std::log(1.0 + cfg.eps_high);
  const GradCheckReport rep = gradcheck(inst.params, inst.batch, cfg);
  CHECK(rep.flagged > 0);
  CHECK(rep.near_boundary_ratios > 0);
  std::size_t flagged = 0;
  for (const auto& e : rep.entries) flagged += e.flagged;
  CHECK(flagged == rep.flagged);
}

TEST_CASE("report table and rows") {
  const GradCheckInstance inst = make_gradcheck_instance(1);
  std::vector<GradCheckReport> reports{gradcheck(inst.params, inst.batch, ObjectiveConfig::defaults(Variant::Gmpo))};
  std::ostringstream table, rows;
  print_gradcheck_table(table, reports, 1e-4);
  write_gradcheck_rows(rows, reports);
  CHECK(table.str().find("gmpo") != std::string::npos);
  CHECK(table.str().find("PASS") != std::string::npos);
  std::istringstream is(rows.str());
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) ++n;
  CHECK(n == reports[0].entries.size() + 1);
}
