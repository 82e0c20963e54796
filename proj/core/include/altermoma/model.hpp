#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "altermoma/dataset.hpp"
#include "altermoma/graph.hpp"

namespace altermoma {

enum class LossKind : std::uint8_t { Mse = 0, SoftmaxXent = 1 };

struct ArchConfig {
  std::size_t in_lidar = 16;
  std::size_t in_camera = 24;
  std::size_t hidden_lidar = 32;
  std::size_t hidden_camera = 32;
  std::size_t feat_lidar = 16;
  std::size_t feat_camera = 16;
  std::size_t fusion_hidden = 32;
  std::size_t out = 4;
  LossKind loss = LossKind::Mse;
  std::uint64_t seed = 7;

  void validate() const;
};

// One output channel of a linear layer: the matching weight column plus the
// bias entry. Channels are the pruning unit in structured mode; the final
// output layer is excluded because its channels are the task outputs.
struct Channel {
  std::string id;
  Partition partition;
  std::string weight_id;
  std::string bias_id;
  std::size_t index;
  std::vector<std::size_t> weight_flat_indices;
};

// Two ReLU MLP backbones feeding a two-layer fusion head over concatenated
// features. Parameters are partitioned lidar / camera / fusion; per-partition
// modality masks and per-entry pruning masks both act functionally in the
// forward pass.
class FusionModel {
 public:
  static FusionModel build(const ArchConfig& arch);

  FusionModel(FusionModel&&) = default;
  FusionModel& operator=(FusionModel&&) = default;
  FusionModel(const FusionModel&) = delete;
  FusionModel& operator=(const FusionModel&) = delete;

  const ArchConfig& arch() const { return arch_; }
  Graph& graph() { return graph_; }

  std::vector<Parameter*> parameters();
  std::vector<Parameter*> partition_params(Partition p);
  Parameter& param(const std::string& id);
  const Parameter& param(const std::string& id) const;
  std::size_t n_entries() const;
  std::size_t kept_entries() const;

  double loss_on(const Batch& b);
  GradMap grads_on(const Batch& b);
  Tensor predict(const Tensor& x_lidar, const Tensor& x_camera);

  // Loss under the given per-partition masks; parameter values are untouched
  // and the previous modality masks are restored before returning.
  double masked_loss(const Batch& b, double mu_lidar, double mu_camera, double mu_fusion);

  ModalityMasks& modality() { return graph_.modality(); }

  void snapshot();
  void restore();
  bool has_snapshot() const { return !snapshot_.empty(); }
  const std::map<std::string, std::vector<double>>& snapshot_values() const { return snapshot_; }

  FusionModel clone() const;

  const std::vector<Channel>& channels() const { return channels_; }
  const Channel& channel(const std::string& id) const;
  void set_channel_mask(const Channel& ch, bool keep);
  bool channel_kept(const Channel& ch) const;

  // Per-sample multiply-accumulate count with structurally dead channels
  // (mask all zero) removed from both their own layer and the next layer.
  std::size_t mac_count() const;

 private:
  FusionModel() = default;
  void rebuild_graph();
  friend FusionModel compact_channels(const FusionModel& m);

  ArchConfig arch_;
  std::vector<std::unique_ptr<Parameter>> params_;
  Graph graph_;
  int pred_node_ = -1;
  std::vector<Channel> channels_;
  std::map<std::string, std::vector<double>> snapshot_;
};

// Stable per-entry id: "<param id>#<zero-padded flat index>". Lexicographic
// order of ids of one parameter equals numeric order of the indices.
std::string entry_id(const std::string& param_id, std::size_t flat_index);

// New model with every dead channel physically removed (smaller layer dims,
// rows/columns deleted). Forward outputs are bit-identical to the masked
// original; throws if a layer would lose all of its channels.
FusionModel compact_channels(const FusionModel& m);

struct EpochStats {
  double train_loss;
  double val_loss;
};

// Trains one backbone on its auxiliary single-modal targets through a
// temporary linear head that is discarded afterwards. Only that backbone's
// partition changes. Per epoch: mean training loss and the auxiliary
// objective's loss on the validation split.
std::vector<EpochStats> pretrain_backbone(FusionModel& m, Partition modality,
                                          const MultiModalDataset& ds, int epochs, double lr,
                                          std::size_t batch_size, std::uint64_t seed);

// SGD on the fusion objective. By default only the fusion partition trains,
// matching the pretrain-then-fuse pipeline; pass train_backbones to unfreeze.
std::vector<EpochStats> train_fusion(FusionModel& m, const MultiModalDataset& ds, int epochs,
                                     double lr, std::size_t batch_size, std::uint64_t seed,
                                     bool train_backbones = false);

// SGD over all partitions with the pruning masks fixed; pruned entries stay
// exactly zero.
std::vector<EpochStats> finetune(FusionModel& m, const MultiModalDataset& ds, int epochs,
                                 double lr, std::size_t batch_size, std::uint64_t seed);

}  // namespace altermoma
