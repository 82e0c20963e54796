#include "altermoma/linalg.hpp"

#include <cmath>
#include <stdexcept>

namespace altermoma {

void fill_normal(Rng& rng, std::vector<double>& out, double mean, double stddev) {
  std::normal_distribution<double> dist(mean, stddev);
  for (double& v : out) v = dist(rng);
}

void fill_uniform(Rng& rng, std::vector<double>& out, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : out) v = dist(rng);
}

Tensor orthonormal_columns(Rng& rng, std::size_t rows, std::size_t cols) {
  if (cols > rows) throw std::invalid_argument("orthonormal_columns: cols > rows");
  Tensor m = Tensor::zeros({rows, cols});
  fill_normal(rng, m.data);
  for (std::size_t c = 0; c < cols; ++c) {
    for (std::size_t prev = 0; prev < c; ++prev) {
      double dot = 0.0;
      for (std::size_t r = 0; r < rows; ++r) dot += m.at(r, c) * m.at(r, prev);
      for (std::size_t r = 0; r < rows; ++r) m.at(r, c) -= dot * m.at(r, prev);
    }
    double norm = 0.0;
    for (std::size_t r = 0; r < rows; ++r) norm += m.at(r, c) * m.at(r, c);
    norm = std::sqrt(norm);
    if (norm < 1e-12) throw std::runtime_error("orthonormal_columns: degenerate draw");
    for (std::size_t r = 0; r < rows; ++r) m.at(r, c) /= norm;
  }
  return m;
}

// Cholesky solve of (A + jitter*I) W = B for symmetric positive definite A.
static std::vector<double> spd_solve(std::vector<double> a, std::vector<double> b,
                                     std::size_t n, std::size_t q) {
  for (std::size_t i = 0; i < n; ++i) a[i * n + i] += 1e-10;
  // Lower-triangular factor in place.
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
      if (i == j) {
        if (s <= 0.0) throw std::runtime_error("spd_solve: matrix not positive definite");
        a[i * n + i] = std::sqrt(s);
      } else {
        a[i * n + j] = s / a[j * n + j];
      }
    }
  }
  // Forward then backward substitution per right-hand side.
  for (std::size_t c = 0; c < q; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = b[i * q + c];
      for (std::size_t k = 0; k < i; ++k) s -= a[i * n + k] * b[k * q + c];
      b[i * q + c] = s / a[i * n + i];
    }
    for (std::size_t i = n; i-- > 0;) {
      double s = b[i * q + c];
      for (std::size_t k = i + 1; k < n; ++k) s -= a[k * n + i] * b[k * q + c];
      b[i * q + c] = s / a[i * n + i];
    }
  }
  return b;
}

double least_squares_mse(const Tensor& X, const Tensor& Z) {
  if (!X.is_matrix() || !Z.is_matrix() || X.rows() != Z.rows())
    throw std::invalid_argument("least_squares_mse: row counts disagree");
  const std::size_t n = X.rows(), p = X.cols() + 1, q = Z.cols();

  // Augmented design matrix [X 1].
  std::vector<double> xtx(p * p, 0.0), xtz(p * q, 0.0);
  auto feat = [&](std::size_t r, std::size_t j) -> double {
    return j + 1 == p ? 1.0 : X.at(r, j);
  };
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < p; ++i) {
      const double xi = feat(r, i);
      for (std::size_t j = 0; j < p; ++j) xtx[i * p + j] += xi * feat(r, j);
      for (std::size_t c = 0; c < q; ++c) xtz[i * q + c] += xi * Z.at(r, c);
    }
  }
  const std::vector<double> w = spd_solve(std::move(xtx), std::move(xtz), p, q);

  double sse = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < q; ++c) {
      double pred = 0.0;
      for (std::size_t i = 0; i < p; ++i) pred += feat(r, i) * w[i * q + c];
      const double d = pred - Z.at(r, c);
      sse += d * d;
    }
  }
  return sse / static_cast<double>(n * q);
}

}  // namespace altermoma
