#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "altermoma/graph.hpp"
#include "altermoma/tensor.hpp"

namespace altermoma {

// Generator settings for the paired-modality regression task. Both modalities
// observe the shared latent z_s; only the camera additionally observes z_c,
// and the camera view is noisier, so the shared information is redundant
// across branches and cheaper to read from the lidar side.
struct GenConfig {
  std::size_t n_train = 4096;
  std::size_t n_val = 512;
  std::size_t d_shared = 8;
  std::size_t d_cam_only = 4;
  std::size_t d_lidar = 16;
  std::size_t d_camera = 24;
  std::size_t d_out = 4;
  double sigma_lidar = 0.05;
  double sigma_camera = 0.3;
  std::uint64_t mixing_seed = 11;
  std::uint64_t target_seed = 13;

  std::size_t n_total() const { return n_train + n_val; }
  void validate() const;
};

struct Batch {
  Tensor x_lidar;
  Tensor x_camera;
  Tensor y;
  std::size_t size() const { return x_lidar.is_matrix() ? x_lidar.rows() : 0; }
};

struct SingleModalBatch {
  Tensor x;
  Tensor y;
};

struct RedundancyCertificate {
  double mse_from_lidar = 0.0;
  double mse_from_camera = 0.0;
  bool lidar_recovers_better() const { return mse_from_lidar < mse_from_camera; }
};

class MultiModalDataset {
 public:
  static MultiModalDataset generate(const GenConfig& cfg, std::uint64_t seed);

  const GenConfig& gen_config() const { return cfg_; }
  std::uint64_t data_seed() const { return data_seed_; }
  std::size_t n_train() const { return cfg_.n_train; }
  std::size_t n_val() const { return cfg_.n_val; }

  const Tensor& x_lidar() const { return x_l_; }
  const Tensor& x_camera() const { return x_c_; }
  const Tensor& y() const { return y_; }
  const Tensor& y_aux_lidar() const { return y_aux_l_; }
  const Tensor& y_aux_camera() const { return y_aux_c_; }

  Batch train_batch(const std::vector<std::size_t>& indices) const;
  SingleModalBatch single_modal_batch(Partition modality,
                                      const std::vector<std::size_t>& indices) const;
  Batch full_train_batch() const;
  Batch val_batch() const;

  // Recomputes the shared/camera-only latents from the stored seeds and fits
  // closed-form linear regressions x -> z_s on the training split.
  RedundancyCertificate redundancy_certificate() const;

  void save(const std::string& path) const;
  static MultiModalDataset load(const std::string& path);

  // One row per sample (training split first), columns x_l*, x_c*, y*.
  void to_csv(const std::string& path, const std::string& trailing_comment = "") const;

  // Used by the loader and by tests constructing datasets directly.
  static MultiModalDataset from_arrays(GenConfig cfg, std::uint64_t data_seed, Tensor x_l,
                                       Tensor x_c, Tensor y, Tensor y_aux_l, Tensor y_aux_c);

 private:
  MultiModalDataset() = default;
  GenConfig cfg_;
  std::uint64_t data_seed_ = 0;
  Tensor x_l_, x_c_, y_, y_aux_l_, y_aux_c_;
};

// Deterministic shuffled partition of [0, n) into consecutive batches; when an
// epoch is exhausted the permutation is redrawn from the same generator, so a
// fixed seed yields one fixed unbounded batch sequence.
class IndexStream {
 public:
  IndexStream(std::size_t n, std::size_t batch_size, std::uint64_t seed);
  std::vector<std::size_t> next();
  std::size_t batches_per_epoch() const;

 private:
  void reshuffle();
  std::size_t n_, batch_size_, cursor_ = 0;
  std::mt19937_64 rng_;
  std::vector<std::size_t> perm_;
};

// Materializes `count` training batches from a fresh stream.
std::vector<Batch> batches(const MultiModalDataset& ds, std::size_t batch_size,
                           std::uint64_t seed, std::size_t count);

std::vector<SingleModalBatch> single_modal_batches(const MultiModalDataset& ds,
                                                   Partition modality, std::size_t batch_size,
                                                   std::uint64_t seed, std::size_t count);

// Replaces each row of y by a one-hot vector at its argmax (classification
// variant of the synthetic task).
Tensor onehot_argmax(const Tensor& y);

}  // namespace altermoma
