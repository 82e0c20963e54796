#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "altermoma/model.hpp"

namespace altermoma {

// Settings for one pruning run. B is the number of reactivation SGD steps and
// epsilon their learning rate; E eval batches estimate dataset gradients.
// literal_reri_end takes the end gradient on the last training batch exactly;
// switching it off averages the end gradient over the eval batches instead.
struct PruneConfig {
  double rho = 0.8;
  double alpha = 1.0;
  double beta = 1.0;
  std::size_t reactivation_steps = 32;
  double reactivation_lr = 1e-3;
  std::size_t eval_batch_count = 8;
  std::size_t batch_size = 64;
  bool structured = false;
  bool literal_reri_end = true;
  std::uint64_t seed = 0;

  void validate() const;
};

// Map keyed by parameter id; one value per flat entry of that parameter.
using ValueMap = std::map<std::string, std::vector<double>>;

struct LedgerEntry {
  std::string id;
  Partition partition = Partition::Fusion;
  double deci = 0.0;
  std::optional<double> reri_lidar_masked;   // computed in the mu_l = 0 stage
  std::optional<double> reri_camera_masked;  // computed in the mu_c = 0 stage
  double score = 0.0;
  bool kept = true;
};

struct ImportanceLedger {
  std::string method = "altermoma";
  bool structured = false;
  std::vector<LedgerEntry> entries;

  LedgerEntry& find(const std::string& id);
};

// Signed per-entry first-order contributions, kept separate from their
// absolute values so channel aggregation can sum before taking magnitudes.
struct SaliencyTerms {
  ValueMap deci;
  ValueMap reri_lidar_masked;
  ValueMap reri_camera_masked;
};

std::vector<Batch> make_eval_batches(const MultiModalDataset& ds, const PruneConfig& cfg);

// Gradient of the loss averaged over the given forward passes.
GradMap averaged_gradients(Graph& g, const std::vector<Inputs>& eval_inputs);
GradMap averaged_gradients(FusionModel& m, const std::vector<Batch>& eval_batches);

// Deactivation saliency |theta * g| with g the eval-averaged gradient of the
// fully unmasked model: the first-order loss change from zeroing one entry.
ValueMap deci_terms(FusionModel& m, const std::vector<Batch>& eval_batches);
std::map<std::string, double> deci(FusionModel& m, const std::vector<Batch>& eval_batches);

struct ReactivationResult {
  GradMap grad_start;
  GradMap grad_end;
  std::vector<double> step_losses;  // loss of each training batch before its update
};

// Graph-level core: measures the start gradient, runs B masked-training steps
// on train_inputs, then measures the end gradient (on the last training batch
// when literal_end, otherwise averaged over eval_inputs again).
ReactivationResult reactivate_graph(Graph& g, const std::vector<Parameter*>& trainable,
                                    const std::vector<Inputs>& eval_inputs,
                                    const std::vector<Inputs>& train_inputs, double lr,
                                    bool literal_end);

// Masks one backbone (mu_m = 0), lets the rest of the network adapt for B
// steps, and returns start/end gradients over the two unmasked partitions.
// The model is left in its adapted, masked state; callers restore.
ReactivationResult reactivate(FusionModel& m, Partition masked_modality,
                              const MultiModalDataset& ds, const PruneConfig& cfg);

// Reactivated redundancy |theta0*g_start - theta0*g_end| per entry; both
// products use the initial parameter values.
ValueMap reri_terms(const ValueMap& theta_init, const GradMap& grad_start,
                    const GradMap& grad_end);
std::map<std::string, double> reri(const ValueMap& theta_init, const GradMap& grad_start,
                                   const GradMap& grad_end);

// Normalizes each indicator within its partition and combines them:
// backbones get alpha*deci_share - beta*reri_share, the fusion partition gets
// alpha*deci_share - beta/2*(each of its two reri shares). A partition whose
// indicator sums to zero contributes zero for that term.
void assemble_scores(ImportanceLedger& ledger, double alpha, double beta);

// Keeps the k = round((1-rho)*N) highest-scoring ids; ties break toward the
// lexicographically smaller id.
std::vector<std::string> global_threshold(const std::map<std::string, double>& scores,
                                          double rho);

// Per-entry ledger over every parameter entry of the model.
ImportanceLedger make_unstructured_ledger(FusionModel& m, const SaliencyTerms& terms);

// Channel-level ledger: signed sums within each channel (weight column plus
// bias), absolute value last. Covers every parameter outside the task output
// layer; a parameter entry missing from the channel map is an error.
ImportanceLedger structured_aggregate(FusionModel& m, const SaliencyTerms& terms);

struct PruneResult {
  ImportanceLedger ledger;
  std::size_t k = 0;
  std::size_t total = 0;
};

// Thresholds the ledger scores, writes kept flags, rewinds the model to its
// snapshot and commits the masks (theta = mask * theta_init). Shared by every
// scoring method so the comparison isolates the scoring rule.
std::size_t commit_masks(FusionModel& m, ImportanceLedger& ledger, double rho);

// Full alternating pipeline: deactivation saliencies on the intact model,
// one reactivation stage per masked backbone, score assembly, global
// threshold, masks applied to the initial parameters. Fine-tuning is separate.
PruneResult run_altermoma(FusionModel& m, const MultiModalDataset& ds, const PruneConfig& cfg);

void write_ledger_csv(const ImportanceLedger& ledger, const std::string& path,
                      const std::string& trailing_comment = "");
void write_ledger_json(const ImportanceLedger& ledger, const std::string& path);

}  // namespace altermoma
