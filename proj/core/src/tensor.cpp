#include "altermoma/tensor.hpp"

#include <cmath>

namespace altermoma {

static std::size_t product(const std::vector<std::size_t>& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return s.empty() ? 0 : n;
}

Tensor Tensor::zeros(std::vector<std::size_t> s) {
  Tensor t;
  t.shape = std::move(s);
  t.data.assign(product(t.shape), 0.0);
  return t;
}

Tensor Tensor::from(std::vector<std::size_t> s, std::vector<double> values) {
  Tensor t;
  t.shape = std::move(s);
  if (values.size() != product(t.shape)) {
    throw std::invalid_argument("Tensor::from: " + std::to_string(values.size()) +
                                " values for shape " + shape_str(t.shape));
  }
  t.data = std::move(values);
  return t;
}

std::size_t Tensor::numel() const { return data.size(); }

std::size_t Tensor::rows() const {
  if (!is_matrix()) throw std::logic_error("Tensor::rows on non-matrix " + shape_str(shape));
  return shape[0];
}

std::size_t Tensor::cols() const {
  if (!is_matrix()) throw std::logic_error("Tensor::cols on non-matrix " + shape_str(shape));
  return shape[1];
}

double& Tensor::at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
double Tensor::at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

void Tensor::zero_grad() { grad.assign(data.size(), 0.0); }

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string shape_str(const std::vector<std::size_t>& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  out += ")";
  return out;
}

}  // namespace altermoma
