#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "altermoma/baselines.hpp"
#include "altermoma/config.hpp"
#include "altermoma/planted.hpp"

namespace altermoma {

enum class DataKind : std::uint8_t { Synthetic, Planted };

struct TrainConfig {
  int pretrain_epochs = 6;
  int fusion_epochs = 8;
  bool train_backbones = false;
  double lr = 0.05;
  int finetune_epochs = 6;
  double finetune_lr = 0.02;
  std::size_t batch_size = 64;

  void validate() const;
};

struct AblateConfig {
  std::vector<double> grid = {0.0, 0.25, 0.5, 1.0, 2.0, 4.0};
  std::size_t seeds = 5;

  void validate() const;
};

// Every knob of a run, loadable from one config file; the master seed fans
// out into per-component seeds so independent stages never share a stream.
struct ExperimentConfig {
  DataKind kind = DataKind::Synthetic;
  GenConfig gen;
  ArchConfig arch;
  TrainConfig train;
  PruneConfig prune;
  BaselineOptions baseline;
  PlantedOptions planted;
  AblateConfig ablate;
  std::string method = "altermoma";
  std::uint64_t seed = 1;

  // Rejects unknown keys, then reads every section. The returned config has
  // the derived seeds already applied.
  static ExperimentConfig from_config(const ConfigFile& f);

  // Re-derives all component seeds from a new master.
  void apply_seed(std::uint64_t master);
  std::uint64_t data_seed() const { return derive_seed(seed, "data"); }

  // The architecture this run's model actually has; the planted fixture
  // dictates its own shapes, everything else uses the configured ones.
  ArchConfig model_arch() const;

  void validate() const;
};

// Synthetic generation or the planted fixture, per cfg.kind.
MultiModalDataset make_dataset(const ExperimentConfig& cfg);

struct PipelineResult {
  FusionModel model;
  MultiModalDataset data;
};

// Dataset plus a trained model: build + pretrain both backbones + train the
// fusion head for synthetic runs; the planted fixture arrives constructed.
PipelineResult prepare_model(const ExperimentConfig& cfg);

double val_loss(FusionModel& m, const MultiModalDataset& ds);

struct MethodRun {
  PruneResult result;
  double val_before_finetune = 0.0;
  double val_after_finetune = 0.0;
};

// prune_with_method followed by masked finetuning on the fusion objective.
MethodRun prune_and_finetune(FusionModel& m, const MultiModalDataset& ds,
                             const ExperimentConfig& cfg, const std::string& method);

struct AblationRow {
  double beta_over_alpha = 0.0;
  std::uint64_t seed = 0;
  double rho = 0.0;
  double val_loss = 0.0;
};

// Full pipeline per (grid point, seed): fresh data and model, alternating-
// masking prune with beta = ratio * alpha, finetune, measure. Rows come out
// in (grid, seed) order.
std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg);

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::string& path,
                        const std::string& trailing_comment);

struct GradDiffRow {
  std::string id;
  double camera_only = 0.0;
  double full_fusion = 0.0;
};

// Per camera-backbone entry: |theta * g| under the lidar-masked loss vs under
// the intact fusion loss. Entries the fusion head ignores show a large
// camera-only value against a small full-fusion one.
std::vector<GradDiffRow> gradient_difference(FusionModel& m, const MultiModalDataset& ds,
                                             const PruneConfig& cfg);

void write_graddiff_csv(const std::vector<GradDiffRow>& rows, const std::string& path,
                        const std::string& trailing_comment);

}  // namespace altermoma
