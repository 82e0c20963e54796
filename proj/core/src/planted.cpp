#include "altermoma/planted.hpp"

#include <stdexcept>

#include "altermoma/linalg.hpp"

namespace altermoma {

void PlantedOptions::validate() const {
  if (n_train == 0 || n_val == 0) throw std::invalid_argument("planted: empty split");
  if (d_lidar < 2) throw std::invalid_argument("planted: d_lidar must fit two latent directions");
  if (d_camera < 3)
    throw std::invalid_argument("planted: d_camera must fit three latent directions");
  if (perturb_scale < 0.0) throw std::invalid_argument("planted: negative perturbation scale");
}

namespace {

// rows(n x k) * transpose(cols(m x k)) -> n x m; maps latent rows through an
// orthonormal-column mixing matrix.
Tensor mix(const Tensor& z, const Tensor& m) {
  const std::size_t n = z.rows(), k = z.cols(), d = m.rows();
  Tensor out = Tensor::zeros({n, d});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) s += z.at(r, j) * m.at(c, j);
      out.at(r, c) = s;
    }
  return out;
}

void set_values(FusionModel& m, const std::string& id, const std::vector<double>& v) {
  Parameter& p = m.param(id);
  if (p.size() != v.size())
    throw std::logic_error("planted: size mismatch for " + id);
  p.values.data = v;
}

std::vector<double> identity_flat(std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return v;
}

}  // namespace

ArchConfig planted_arch(std::uint64_t seed, const PlantedOptions& opt) {
  ArchConfig arch;
  arch.in_lidar = opt.d_lidar;
  arch.in_camera = opt.d_camera;
  arch.hidden_lidar = 2;
  arch.feat_lidar = 2;
  arch.hidden_camera = 3;
  arch.feat_camera = 3;
  arch.fusion_hidden = 4;
  arch.out = 2;
  arch.loss = LossKind::Mse;
  arch.seed = seed;
  return arch;
}

PlantedScenario make_planted_scenario(std::uint64_t seed, const PlantedOptions& opt) {
  opt.validate();
  FusionModel model = FusionModel::build(planted_arch(seed, opt));

  // Latent layout: the lidar observes (s0, s1), the camera observes
  // (s0, c0, c1). s1 never reaches the camera, so once the lidar branch is
  // masked the only recoverable shared signal is s0 through the duplicate
  // channel below. Extraction matrices are orthonormal columns, so x * M
  // recovers the latents exactly in the noiseless data.
  Rng mix_rng(seed * 2654435761u + 101);
  const Tensor A = orthonormal_columns(mix_rng, opt.d_lidar, 2);
  const Tensor B = orthonormal_columns(mix_rng, opt.d_camera, 3);

  // Lidar backbone recovers (s0, s1); layer 2 passes them through.
  {
    std::vector<double> w1(opt.d_lidar * 2);
    for (std::size_t r = 0; r < opt.d_lidar; ++r)
      for (std::size_t c = 0; c < 2; ++c) w1[r * 2 + c] = A.at(r, c);
    set_values(model, "lidar/l1/weight", w1);
    set_values(model, "lidar/l1/bias", {opt.shift, opt.shift});
    set_values(model, "lidar/l2/weight", identity_flat(2));
    set_values(model, "lidar/l2/bias", {0.0, 0.0});
  }

  // Camera backbone: channel 0 recovers s0 (the exact duplicate of what the
  // lidar side already provides), channels 1 and 2 recover the camera-only
  // latents c0 and c1.
  {
    std::vector<double> w1(opt.d_camera * 3);
    for (std::size_t r = 0; r < opt.d_camera; ++r)
      for (std::size_t c = 0; c < 3; ++c) w1[r * 3 + c] = B.at(r, c);
    set_values(model, "camera/l1/weight", w1);
    set_values(model, "camera/l1/bias", {opt.shift, opt.shift, opt.shift});
    set_values(model, "camera/l2/weight", identity_flat(3));
    set_values(model, "camera/l2/bias", {0.0, 0.0, 0.0});
  }

  // Fusion head: one unit per used feature, and the duplicate's concat column
  // (index 2) is exactly zero, so the camera copy of s0 reaches the loss only
  // through the perturbation noise added below. The camera-only units' output
  // rows are orthogonal to the sum of the lidar units' rows: masking the lidar
  // branch removes a mean offset along that sum direction, and orthogonality
  // keeps it out of the camera-only channels' start gradients. Features are
  // nonnegative, so the positive biases keep every unit alive under masking.
  {
    std::vector<double> w1(5 * 4, 0.0);
    w1[0 * 4 + 0] = 1.0;  // lidar s0
    w1[1 * 4 + 1] = 1.0;  // lidar s1
    w1[3 * 4 + 2] = 1.0;  // camera c0
    w1[4 * 4 + 3] = 1.0;  // camera c1
    set_values(model, "fusion/l1/weight", w1);
    set_values(model, "fusion/l1/bias", {0.2, 0.2, 0.2, 0.2});
    set_values(model, "fusion/l2/weight",
               {1.0, 0.5, -0.5, 1.0, 0.45, -0.15, 0.3, -0.1});
    set_values(model, "fusion/l2/bias", {0.1, -0.1});
  }

  // Noiseless data through the same extraction geometry.
  const std::size_t n = opt.n_train + opt.n_val;
  Rng data_rng(seed * 2654435761u + 202);
  Tensor z = Tensor::zeros({n, 4});
  fill_normal(data_rng, z.data);
  Tensor z_s = Tensor::zeros({n, 2});
  Tensor z_c = Tensor::zeros({n, 3});
  for (std::size_t r = 0; r < n; ++r) {
    z_s.at(r, 0) = z.at(r, 0);
    z_s.at(r, 1) = z.at(r, 1);
    z_c.at(r, 0) = z.at(r, 0);
    z_c.at(r, 1) = z.at(r, 2);
    z_c.at(r, 2) = z.at(r, 3);
  }
  Tensor x_l = mix(z_s, A);
  Tensor x_c = mix(z_c, B);

  // Targets come from the unperturbed planted map, making it the optimum.
  Tensor y = model.predict(x_l, x_c);

  GenConfig gen;
  gen.n_train = opt.n_train;
  gen.n_val = opt.n_val;
  gen.d_shared = 2;
  gen.d_cam_only = 2;
  gen.d_lidar = opt.d_lidar;
  gen.d_camera = opt.d_camera;
  gen.d_out = 2;
  gen.sigma_lidar = 0.0;
  gen.sigma_camera = 0.0;
  gen.mixing_seed = seed * 2654435761u + 101;
  gen.target_seed = 0;
  MultiModalDataset ds =
      MultiModalDataset::from_arrays(gen, seed * 2654435761u + 202, std::move(x_l),
                                     std::move(x_c), y, y, y);

  // Only now disturb the fusion partition; the backbones stay planted so the
  // cross-modal duplicate is exact, and the fusion head has something to
  // relearn during reactivation.
  Rng noise_rng(seed * 2654435761u + 303);
  for (Parameter* p : model.partition_params(Partition::Fusion)) {
    std::vector<double> noise(p->size());
    fill_normal(noise_rng, noise);
    for (std::size_t i = 0; i < p->size(); ++i) p->values.data[i] += opt.perturb_scale * noise[i];
  }

  return PlantedScenario{std::move(model), std::move(ds),
                         {"camera/l1/ch0000", "camera/l2/ch0000"},
                         {"camera/l1/ch0001", "camera/l1/ch0002", "camera/l2/ch0001",
                          "camera/l2/ch0002"}};
}

}  // namespace altermoma
