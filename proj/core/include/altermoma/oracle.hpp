#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "altermoma/scoring.hpp"

namespace altermoma {

// Brute-force ground truth for the first-order indicators. Never touches the
// backward pass: two forward evaluations per query.
double exact_mask_delta(Graph& g, Parameter& p, std::size_t index,
                        const std::vector<Inputs>& eval_inputs);
double exact_mask_delta(FusionModel& m, const std::string& param_id, std::size_t index,
                        const std::vector<Batch>& eval_batches);

// Central differences vs autodiff over every parameter entry. Returns the
// worst per-component relative error; components whose absolute difference is
// under abs_floor count as exact.
double fd_gradient_check(Graph& g, const Inputs& batch, double step, double abs_floor = 1e-8);
double fd_gradient_check(FusionModel& m, const Batch& batch, double step,
                         double abs_floor = 1e-8);

// || theta_0 * dL_B/dtheta_0  -  theta_0 * dL_B/dtheta_B ||_2 where the left
// factor is the total derivative through B SGD steps at rate eps, measured by
// replaying the whole trajectory under a two-sided perturbation of each
// initial entry. Quadratic cost in parameter count, hence the <= 50 guard.
// B == 0 short-circuits to exactly 0: with no steps the two sides coincide.
double prop1_error(Graph& g, const std::vector<Parameter*>& trainable,
                   const std::vector<Inputs>& train_seq, const std::vector<Inputs>& eval_inputs,
                   double eps, double fd_step = 1e-6);
double prop1_error(FusionModel& m, const MultiModalDataset& ds, std::size_t steps, double eps,
                   const PruneConfig& cfg);

// Rank correlation with averaged tie ranks; 0 when either side has no rank
// variation at all.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

struct CheckRow {
  std::string name;
  std::uint64_t seed = 0;
  double value = 0.0;
  double threshold = 0.0;
  bool pass = false;
};

void write_check_report(const std::vector<CheckRow>& rows, const std::string& path,
                        const std::string& trailing_comment = "");

}  // namespace altermoma
