#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "altermoma/oracle.hpp"
#include "support.hpp"

using namespace altermoma;

namespace {

// L(w) = w^2 through a 1x1 linear layer on a single unit sample. The zoo of
// closed forms below all live on this graph.
struct Quadratic {
  Graph g;
  Parameter w;
  Inputs in;
  Quadratic(double w0)
      : w("w", Partition::Fusion, Tensor::from({1, 1}, {w0})),
        in{{"x", Tensor::from({1, 1}, {1.0})}, {"t", Tensor::from({1, 1}, {0.0})}} {
    g.set_loss(g.mse(g.matmul(g.input("x"), g.param(&w)), g.input("t")));
  }
};

}  // namespace

TEST_CASE("brute-force mask deltas match hand-computed losses") {
  Quadratic q(1.0);
  const std::vector<Inputs> eval{q.in};

  // Masking the only weight drops the loss from 1 to 0.
  CHECK(exact_mask_delta(q.g, q.w, 0, eval) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(q.w.mask[0] == 1.0);       // restored
  CHECK(q.w.values.data[0] == 1.0);  // untouched

  // The first-order indicator |theta * g| = 2 overestimates the true delta by
  // exactly the curvature term on this quadratic.
  const GradMap grads = averaged_gradients(q.g, eval);
  const double first_order = std::fabs(q.w.values.data[0] * grads.at("w")[0]);
  CHECK(first_order == doctest::Approx(2.0).epsilon(1e-15));

  // A zero entry has zero exact effect.
  Quadratic z(0.0);
  CHECK(exact_mask_delta(z.g, z.w, 0, {z.in}) == 0.0);

  CHECK_THROWS_AS(exact_mask_delta(q.g, q.w, 1, eval), std::invalid_argument);
  CHECK_THROWS_AS(exact_mask_delta(q.g, q.w, 0, {}), std::invalid_argument);
}

TEST_CASE("model-level mask deltas require a fully unmasked model") {
  support::ReferenceSetup rs = support::make_reference_setup();
  const std::vector<Batch> eval{rs.batch};

  const double d = exact_mask_delta(rs.model, "fusion/l2/weight", 0, eval);
  CHECK(d >= 0.0);

  // Cross-check against a manual toggle.
  const double base = rs.model.loss_on(rs.batch);
  Parameter& p = rs.model.param("fusion/l2/weight");
  p.mask[0] = 0.0;
  const double masked = rs.model.loss_on(rs.batch);
  p.mask[0] = 1.0;
  CHECK(d == doctest::Approx(std::fabs(base - masked)).epsilon(1e-14));

  rs.model.modality().camera = 0.0;
  CHECK_THROWS_AS(exact_mask_delta(rs.model, "fusion/l2/weight", 0, eval),
                  std::invalid_argument);
}

TEST_CASE("finite differences are exact on quadratics and tight on the MLP") {
  Quadratic q(0.8);
  CHECK(fd_gradient_check(q.g, q.in, 1e-5) <= 1e-10);

  support::ReferenceSetup rs = support::make_reference_setup();
  CHECK(fd_gradient_check(rs.model, rs.batch, 1e-5) < 1e-5);

  CHECK_THROWS_AS(fd_gradient_check(q.g, q.in, 0.0), std::invalid_argument);
}

TEST_CASE("trajectory replay error has its closed form on the quadratic") {
  // L = w^2, so the gradient is 2w and one step at rate eps sends w0 to
  // w0 (1 - 2 eps). Total derivative 2 w0 (1-2eps)^2 vs endpoint gradient
  // 2 w0 (1-2eps) leaves a gap of 4 eps (1-2eps) w0^2.
  const double w0 = 0.7;
  for (double eps : {1e-2, 1e-3, 1e-4}) {
    CAPTURE(eps);
    Quadratic q(w0);
    std::vector<Parameter*> trainable{&q.w};
    const double got = prop1_error(q.g, trainable, {q.in}, {q.in}, eps);
    const double expect = 4.0 * eps * (1.0 - 2.0 * eps) * w0 * w0;
    CHECK(std::fabs(got - expect) <= 1e-10);
    CHECK(q.w.values.data[0] == w0);  // replay restores the initial value
  }

  // Two steps: the same algebra gives 8 eps (1-eps) (1-2eps)^2 w0^2.
  {
    const double eps = 1e-2;
    Quadratic q(w0);
    std::vector<Parameter*> trainable{&q.w};
    const double got = prop1_error(q.g, trainable, {q.in, q.in}, {q.in}, eps);
    const double u = 1.0 - 2.0 * eps;
    const double expect = 8.0 * eps * (1.0 - eps) * u * u * w0 * w0;
    CHECK(std::fabs(got - expect) <= 1e-10);
  }

  // The error shrinks as the rate does: first-order agreement in eps.
  Quadratic q1(w0), q2(w0), q3(w0);
  const double e1 = prop1_error(q1.g, {&q1.w}, {q1.in}, {q1.in}, 1e-2);
  const double e2 = prop1_error(q2.g, {&q2.w}, {q2.in}, {q2.in}, 1e-3);
  const double e3 = prop1_error(q3.g, {&q3.w}, {q3.in}, {q3.in}, 1e-4);
  CHECK(e1 > e2);
  CHECK(e2 > e3);
}

TEST_CASE("trajectory replay guards its budget and short-circuits zero steps") {
  Quadratic q(0.5);
  std::vector<Parameter*> trainable{&q.w};
  CHECK(prop1_error(q.g, trainable, {}, {q.in}, 1e-2) == 0.0);
  CHECK_THROWS_AS(prop1_error(q.g, {}, {q.in}, {q.in}, 1e-2), std::invalid_argument);
  CHECK_THROWS_AS(prop1_error(q.g, trainable, {q.in}, {q.in}, 0.0), std::invalid_argument);

  Graph g;
  Parameter big("big", Partition::Fusion, Tensor::zeros({6, 10}));
  g.set_loss(g.mse(g.matmul(g.input("x"), g.param(&big)), g.input("t")));
  const Inputs in{{"x", Tensor::from({1, 6}, std::vector<double>(6, 1.0))},
                  {"t", Tensor::zeros({1, 10})}};
  CHECK_THROWS_WITH_AS(prop1_error(g, {&big}, {in}, {in}, 1e-2), doctest::Contains("50"),
                       std::invalid_argument);
}

TEST_CASE("rank correlation handles ties, reversals, and degenerate inputs") {
  CHECK(spearman({1, 2, 3}, {10, 20, 30}) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(spearman({1, 2, 3}, {30, 20, 10}) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(spearman({1, 2, 3, 4}, {1, 3, 2, 4}) == doctest::Approx(0.8).epsilon(1e-12));

  // Tied pair gets the averaged rank 1.5: r = 1.5 / sqrt(3).
  CHECK(spearman({1, 1, 2}, {1, 2, 3}) ==
        doctest::Approx(1.5 / std::sqrt(3.0)).epsilon(1e-12));

  CHECK(spearman({5, 5, 5}, {1, 2, 3}) == 0.0);
  CHECK_THROWS_AS(spearman({1, 2}, {1, 2, 3}), std::invalid_argument);
  CHECK_THROWS_AS(spearman({1}, {1}), std::invalid_argument);
}

TEST_CASE("check reports list one row per probe") {
  auto dir = std::filesystem::temp_directory_path() / "altermoma_oracle_tests";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "checks.csv").string();

  std::vector<CheckRow> rows;
  rows.push_back(CheckRow{"fd_worst", 3, 0.5, 0.25, false});
  rows.push_back(CheckRow{"rank_corr", 4, 0.875, 0.8, true});
  write_check_report(rows, path, "# config_hash=1234567890abcdef");

  std::ifstream in(path);
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "check,seed,value,threshold,pass");
  REQUIRE(std::getline(in, line));
  CHECK(line == "fd_worst,3,0.5,0.25,fail");
  REQUIRE(std::getline(in, line));
  CHECK(line == "rank_corr,4,0.875,0.80000000000000004,pass");
  REQUIRE(std::getline(in, line));
  CHECK(line == "# config_hash=1234567890abcdef");
}
