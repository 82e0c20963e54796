#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "altermoma/tensor.hpp"

namespace altermoma {

using Rng = std::mt19937_64;

void fill_normal(Rng& rng, std::vector<double>& out, double mean = 0.0, double stddev = 1.0);
void fill_uniform(Rng& rng, std::vector<double>& out, double lo, double hi);

// Random matrix (rows x cols, rows >= cols) with orthonormal columns, built by
// modified Gram-Schmidt on a Gaussian draw.
Tensor orthonormal_columns(Rng& rng, std::size_t rows, std::size_t cols);

// Least-squares fit of targets Z (n x q) from features X (n x p) with an
// intercept column; returns the mean squared residual over all entries.
double least_squares_mse(const Tensor& X, const Tensor& Z);

}  // namespace altermoma
