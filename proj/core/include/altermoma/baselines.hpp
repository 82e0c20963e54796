#pragma once

#include <map>
#include <string>
#include <vector>

#include "altermoma/scoring.hpp"

namespace altermoma {

// Reference scoring rules run through the exact same thresholding, masking,
// and finetuning machinery as the alternating-masking method, so comparisons
// isolate the scoring rule itself.

// |theta| per entry; structured: channel L2 norm.
std::map<std::string, double> magnitude_scores(FusionModel& m, bool structured = false);

// |theta * g| with g averaged over the eval batches. Deliberately a separate
// code path from the deactivation indicator; the test suite pins the two to
// agree componentwise.
std::map<std::string, double> snip_scores(FusionModel& m, const std::vector<Batch>& eval_batches);

// Data-free saliency: clone with |theta|, all-ones input through both
// modalities, loss = sum of outputs, score = theta * g. Applied iteratively,
// masking the lowest-scored fraction per round toward rho; the returned map
// is the final round's scores, so one global threshold at rho reproduces the
// iterative mask exactly.
std::map<std::string, double> synflow_scores(const FusionModel& m, std::size_t iterations,
                                             double rho);

// Same rule on an arbitrary graph: parameters are swapped to |theta| for the
// duration, intermediate rounds mask toward rho, and both values and masks are
// restored before returning. Scores are keyed by entry id.
std::map<std::string, double> synflow_scores(Graph& g, const std::vector<Parameter*>& params,
                                             const Inputs& inputs, std::size_t iterations,
                                             double rho);

// uniform(0, 1) per entry (or per channel), deterministic in the seed.
std::map<std::string, double> random_scores(FusionModel& m, std::uint64_t seed,
                                            bool structured = false);

struct ImpOptions {
  std::size_t rounds = 5;
  std::size_t epochs_per_round = 1;
  double lr = 1e-2;
};

// Lottery-ticket style iterative magnitude pruning: train, mask the lowest
// magnitudes so round r keeps round((1-rho)^(r/rounds) * N) entries, rewind
// survivors to the init snapshot, repeat. Masks are cumulative; the final
// round lands on the exact global kept count.
PruneResult imp_prune(FusionModel& m, const MultiModalDataset& ds, const PruneConfig& cfg,
                      const ImpOptions& opt = {});

// Entries (or channels, when structured) in model order, score column filled
// from the map, indicator columns left empty.
ImportanceLedger ledger_from_scores(FusionModel& m, const std::map<std::string, double>& scores,
                                    const std::string& method, bool structured);

struct BaselineOptions {
  ImpOptions imp;
  std::size_t synflow_iterations = 100;
};

const std::vector<std::string>& known_methods();

// Dispatches on the method name, prunes in place (snapshot taken if absent),
// and returns the committed ledger. Structured mode is defined for
// altermoma, magnitude, and random only.
PruneResult prune_with_method(FusionModel& m, const MultiModalDataset& ds, const PruneConfig& cfg,
                              const std::string& method, const BaselineOptions& opt = {});

}  // namespace altermoma
