#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace altermoma {

// Raised by file loaders so the CLI can map corruption to its own exit code.
struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dense row-major tensor of doubles. Rank 1 or 2 is all the models need.
// The grad buffer is empty until a backward pass populates it.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;
  std::vector<double> grad;

  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> s);
  static Tensor from(std::vector<std::size_t> s, std::vector<double> values);

  std::size_t numel() const;
  bool is_matrix() const { return shape.size() == 2; }
  std::size_t rows() const;
  std::size_t cols() const;

  double& at(std::size_t r, std::size_t c);
  double at(std::size_t r, std::size_t c) const;

  void zero_grad();
  bool all_finite() const;
};

std::string shape_str(const std::vector<std::size_t>& s);

}  // namespace altermoma
