#pragma once

// Shared fixtures for the test binaries, including a deliberately independent
// scalar re-implementation of every graph primitive. The reference code works
// on vector-of-rows matrices and never touches Graph, so agreement between
// the two is evidence, not tautology.

#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <vector>

#include "altermoma/dataset.hpp"
#include "altermoma/graph.hpp"
#include "altermoma/linalg.hpp"
#include "altermoma/model.hpp"

namespace ref {

using Mat = std::vector<std::vector<double>>;

inline Mat from_tensor(const altermoma::Tensor& t) {
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t.at(r, c);
  return m;
}

inline Mat matmul(const Mat& a, const Mat& b) {
  const std::size_t n = a.size(), k = b.size(), m = b[0].size();
  Mat out(n, std::vector<double>(m, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    if (a[i].size() != k) throw std::logic_error("ref::matmul shape");
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < k; ++t) s += a[i][t] * b[t][j];
      out[i][j] = s;
    }
  }
  return out;
}

inline Mat bias_add(const Mat& a, const std::vector<double>& b) {
  Mat out = a;
  for (auto& row : out) {
    if (row.size() != b.size()) throw std::logic_error("ref::bias_add shape");
    for (std::size_t j = 0; j < b.size(); ++j) row[j] += b[j];
  }
  return out;
}

inline Mat relu(const Mat& a) {
  Mat out = a;
  for (auto& row : out)
    for (double& v : row) v = v > 0.0 ? v : 0.0;
  return out;
}

inline Mat mul(const Mat& a, const Mat& b) {
  Mat out = a;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) out[i][j] *= b[i][j];
  return out;
}

inline Mat concat_cols(const Mat& a, const Mat& b) {
  Mat out = a;
  for (std::size_t i = 0; i < a.size(); ++i)
    out[i].insert(out[i].end(), b[i].begin(), b[i].end());
  return out;
}

inline double mse(const Mat& pred, const Mat& target) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    for (std::size_t j = 0; j < pred[i].size(); ++j) {
      const double d = pred[i][j] - target[i][j];
      s += d * d;
      ++n;
    }
  return s / static_cast<double>(n);
}

inline double softmax_xent(const Mat& logits, const Mat& target) {
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    double mx = logits[i][0];
    for (double v : logits[i]) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : logits[i]) z += std::exp(v - mx);
    const double logz = std::log(z) + mx;
    double row = 0.0;
    for (std::size_t j = 0; j < logits[i].size(); ++j)
      row += target[i][j] * (logz - logits[i][j]);
    total += row;
  }
  return total / static_cast<double>(logits.size());
}

// Parameter as the forward pass sees it: values * mask * modality factor.
inline Mat masked_matrix(const altermoma::Parameter& p, double mu) {
  const std::size_t r = p.values.rows(), c = p.values.cols();
  Mat out(r, std::vector<double>(c));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i][j] = p.values.at(i, j) * p.mask[i * c + j] * mu;
  return out;
}

inline std::vector<double> masked_vector(const altermoma::Parameter& p, double mu) {
  std::vector<double> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = p.values.data[i] * p.mask[i] * mu;
  return out;
}

// The full two-backbone forward, re-derived from the architecture contract.
inline double fusion_loss(altermoma::FusionModel& m, const altermoma::Batch& b, double mu_l,
                          double mu_c, double mu_f) {
  using altermoma::LossKind;
  auto backbone = [&](const char* prefix, const Mat& x, double mu) {
    const std::string p(prefix);
    const Mat h1 = relu(bias_add(matmul(x, masked_matrix(m.param(p + "/l1/weight"), mu)),
                                 masked_vector(m.param(p + "/l1/bias"), mu)));
    return relu(bias_add(matmul(h1, masked_matrix(m.param(p + "/l2/weight"), mu)),
                         masked_vector(m.param(p + "/l2/bias"), mu)));
  };
  const Mat feat = concat_cols(backbone("lidar", from_tensor(b.x_lidar), mu_l),
                               backbone("camera", from_tensor(b.x_camera), mu_c));
  const Mat hidden =
      relu(bias_add(matmul(feat, masked_matrix(m.param("fusion/l1/weight"), mu_f)),
                    masked_vector(m.param("fusion/l1/bias"), mu_f)));
  const Mat pred = bias_add(matmul(hidden, masked_matrix(m.param("fusion/l2/weight"), mu_f)),
                            masked_vector(m.param("fusion/l2/bias"), mu_f));
  const Mat y = from_tensor(b.y);
  return m.arch().loss == LossKind::Mse ? mse(pred, y) : softmax_xent(pred, y);
}

}  // namespace ref

namespace support {

inline altermoma::Inputs make_inputs(const altermoma::Batch& b) {
  return altermoma::Inputs{{"x_l", b.x_lidar}, {"x_c", b.x_camera}, {"y", b.y}};
}

inline altermoma::Tensor random_tensor(altermoma::Rng& rng, std::size_t r, std::size_t c,
                                       double scale = 1.0) {
  altermoma::Tensor t = altermoma::Tensor::zeros({r, c});
  altermoma::fill_normal(rng, t.data, 0.0, scale);
  return t;
}

inline altermoma::Tensor random_vector(altermoma::Rng& rng, std::size_t n, double scale = 1.0) {
  altermoma::Tensor t = altermoma::Tensor::zeros({n});
  altermoma::fill_normal(rng, t.data, 0.0, scale);
  return t;
}

// A seeded small MLP-style graph exercising every primitive over the seeds:
// 1-3 dense layers, optional elementwise-scale branch, optional concat of a
// side input, MSE or softmax cross-entropy loss. Parameter count stays well
// under 200.
struct RandomGraphCase {
  altermoma::Graph g;
  std::vector<std::unique_ptr<altermoma::Parameter>> params;
  altermoma::Inputs inputs;
  std::size_t n_params = 0;
};

inline RandomGraphCase make_random_graph(std::uint64_t seed) {
  using namespace altermoma;
  RandomGraphCase cs;
  Rng rng(seed);
  auto dim = [&rng](std::size_t lo, std::size_t hi) {
    return lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
  };

  const std::size_t batch = dim(2, 5);
  const std::size_t d_in = dim(2, 5);
  const std::size_t layers = dim(1, 3);
  const bool use_mul = (seed % 2) == 0;
  const bool use_concat = (seed % 3) == 0;
  const bool use_xent = (seed % 5) == 0;

  auto add_param = [&](const std::string& id, std::size_t r, std::size_t c, Partition part) {
    cs.params.push_back(std::make_unique<Parameter>(id, part, random_tensor(rng, r, c, 0.6)));
    cs.n_params += r * c;
    return cs.params.back().get();
  };
  auto add_bias = [&](const std::string& id, std::size_t n, Partition part) {
    cs.params.push_back(std::make_unique<Parameter>(id, part, random_vector(rng, n, 0.6)));
    cs.n_params += n;
    return cs.params.back().get();
  };

  int x = cs.g.input("x");
  cs.inputs["x"] = random_tensor(rng, batch, d_in);
  std::size_t width = d_in;
  const Partition parts[3] = {Partition::Lidar, Partition::Camera, Partition::Fusion};
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t next = dim(2, 6);
    Parameter* w = add_param("w" + std::to_string(l), width, next, parts[l % 3]);
    Parameter* b = add_bias("b" + std::to_string(l), next, parts[l % 3]);
    x = cs.g.bias_add(cs.g.matmul(x, cs.g.param(w)), cs.g.param(b));
    if (l + 1 < layers) x = cs.g.relu(x);
    width = next;
  }
  if (use_mul) {
    Parameter* s = add_param("scale", batch, width, Partition::Fusion);
    x = cs.g.mul(x, cs.g.param(s));
  }
  if (use_concat) {
    const std::size_t extra = dim(1, 3);
    int side = cs.g.input("side");
    cs.inputs["side"] = random_tensor(rng, batch, extra);
    Parameter* w = add_param("wside", extra, extra, Partition::Lidar);
    x = cs.g.concat(x, cs.g.matmul(side, cs.g.param(w)));
    width += extra;
  }

  int t = cs.g.input("t");
  if (use_xent) {
    Tensor target = Tensor::zeros({batch, width});
    for (std::size_t r = 0; r < batch; ++r) target.at(r, rng() % width) = 1.0;
    cs.inputs["t"] = target;
    cs.g.set_loss(cs.g.softmax_xent(x, t));
  } else {
    cs.inputs["t"] = random_tensor(rng, batch, width);
    cs.g.set_loss(cs.g.mse(x, t));
  }
  return cs;
}

// The fixed 2-4-2 regression anchor network: two inputs, four hidden units,
// two outputs, MSE, everything drawn from one seeded stream in this order.
struct Anchor242 {
  altermoma::Graph g;
  std::vector<std::unique_ptr<altermoma::Parameter>> params;
  altermoma::Inputs inputs;
};

inline Anchor242 make_anchor_242() {
  using namespace altermoma;
  Anchor242 a;
  Rng rng(24242);
  auto p = [&](const std::string& id, std::size_t r, std::size_t c) {
    a.params.push_back(std::make_unique<Parameter>(id, Partition::Fusion,
                                                   random_tensor(rng, r, c, 0.8)));
    return a.params.back().get();
  };
  auto pv = [&](const std::string& id, std::size_t n) {
    a.params.push_back(std::make_unique<Parameter>(id, Partition::Fusion,
                                                   random_vector(rng, n, 0.8)));
    return a.params.back().get();
  };
  Parameter* w1 = p("w1", 2, 4);
  Parameter* b1 = pv("b1", 4);
  Parameter* w2 = p("w2", 4, 2);
  Parameter* b2 = pv("b2", 2);
  a.inputs["x"] = random_tensor(rng, 8, 2);
  a.inputs["t"] = random_tensor(rng, 8, 2);
  const int h = a.g.relu(a.g.bias_add(a.g.matmul(a.g.input("x"), a.g.param(w1)), a.g.param(b1)));
  const int y = a.g.bias_add(a.g.matmul(h, a.g.param(w2)), a.g.param(b2));
  a.g.set_loss(a.g.mse(y, a.g.input("t")));
  return a;
}

// Reference loss of the 2-4-2 anchor computed entirely with ref:: ops.
inline double anchor_242_reference(const Anchor242& a) {
  const ref::Mat x = ref::from_tensor(a.inputs.at("x"));
  const ref::Mat t = ref::from_tensor(a.inputs.at("t"));
  const ref::Mat h = ref::relu(ref::bias_add(ref::matmul(x, ref::masked_matrix(*a.params[0], 1.0)),
                                             ref::masked_vector(*a.params[1], 1.0)));
  const ref::Mat y = ref::bias_add(ref::matmul(h, ref::masked_matrix(*a.params[2], 1.0)),
                                   ref::masked_vector(*a.params[3], 1.0));
  return ref::mse(y, t);
}

// The seeded reference fusion model and batch used by the frozen masked-loss
// anchor: default architecture, default generator, fixed seeds.
struct ReferenceSetup {
  altermoma::FusionModel model;
  altermoma::MultiModalDataset data;
  altermoma::Batch batch;
};

inline ReferenceSetup make_reference_setup() {
  using namespace altermoma;
  MultiModalDataset ds = MultiModalDataset::generate(GenConfig{}, 1);
  FusionModel m = FusionModel::build(ArchConfig{});
  Batch b = batches(ds, 64, 5, 1).at(0);
  return ReferenceSetup{std::move(m), std::move(ds), std::move(b)};
}

}  // namespace support
