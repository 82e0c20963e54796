#include "altermoma/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <stdexcept>

#include "altermoma/linalg.hpp"

namespace altermoma {

std::map<std::string, double> magnitude_scores(FusionModel& m, bool structured) {
  std::map<std::string, double> scores;
  if (structured) {
    for (const Channel& ch : m.channels()) {
      const Parameter& w = m.param(ch.weight_id);
      const Parameter& b = m.param(ch.bias_id);
      double sq = b.values.data[ch.index] * b.values.data[ch.index];
      for (std::size_t idx : ch.weight_flat_indices) sq += w.values.data[idx] * w.values.data[idx];
      scores[ch.id] = std::sqrt(sq);
    }
  } else {
    for (Parameter* p : m.parameters())
      for (std::size_t i = 0; i < p->size(); ++i)
        scores[entry_id(p->id, i)] = std::fabs(p->values.data[i]);
  }
  return scores;
}

std::map<std::string, double> snip_scores(FusionModel& m, const std::vector<Batch>& eval_batches) {
  if (eval_batches.empty()) throw std::invalid_argument("snip: no eval batches");
  if (!m.modality().all_unmasked()) throw std::invalid_argument("snip: model must be fully unmasked");
  GradMap sum;
  for (const Batch& b : eval_batches) {
    GradMap g = m.grads_on(b);
    if (sum.empty()) {
      sum = std::move(g);
    } else {
      for (auto& [id, vec] : g) {
        auto& slot = sum.at(id);
        for (std::size_t i = 0; i < vec.size(); ++i) slot[i] += vec[i];
      }
    }
  }
  std::map<std::string, double> scores;
  const double inv = 1.0 / static_cast<double>(eval_batches.size());
  for (Parameter* p : m.parameters()) {
    const std::vector<double>& g = sum.at(p->id);
    for (std::size_t i = 0; i < p->size(); ++i)
      scores[entry_id(p->id, i)] = std::fabs(p->values.data[i] * (g[i] * inv));
  }
  return scores;
}

namespace {

Tensor ones(std::size_t r, std::size_t c) {
  return Tensor::from({r, c}, std::vector<double>(r * c, 1.0));
}

// Forward of the fusion architecture over the given model's parameters with
// all-ones constant inputs and loss = sum of the output row.
void build_synflow_graph(Graph& g, FusionModel& m) {
  const ArchConfig& a = m.arch();
  auto backbone = [&](const std::string& prefix, std::size_t in_dim) {
    const int x = g.constant(ones(1, in_dim));
    const int h = g.relu(g.bias_add(g.matmul(x, g.param(&m.param(prefix + "/l1/weight"))),
                                    g.param(&m.param(prefix + "/l1/bias"))));
    return g.relu(g.bias_add(g.matmul(h, g.param(&m.param(prefix + "/l2/weight"))),
                             g.param(&m.param(prefix + "/l2/bias"))));
  };
  const int fused = g.concat(backbone("lidar", a.in_lidar), backbone("camera", a.in_camera));
  const int hidden = g.relu(g.bias_add(g.matmul(fused, g.param(&m.param("fusion/l1/weight"))),
                                       g.param(&m.param("fusion/l1/bias"))));
  const int pred = g.bias_add(g.matmul(hidden, g.param(&m.param("fusion/l2/weight"))),
                              g.param(&m.param("fusion/l2/bias")));
  g.set_loss(g.matmul(pred, g.constant(ones(a.out, 1))));
}

}  // namespace

std::map<std::string, double> synflow_scores(Graph& g, const std::vector<Parameter*>& params,
                                             const Inputs& inputs, std::size_t iterations,
                                             double rho) {
  if (iterations == 0) throw std::invalid_argument("synflow: need at least one iteration");
  if (!(rho >= 0.0 && rho < 1.0)) throw std::invalid_argument("synflow: rho outside [0, 1)");

  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> saved;
  for (Parameter* p : params) saved[p->id] = {p->values.data, p->mask};
  for (Parameter* p : params)
    for (double& v : p->values.data) v = std::fabs(v);

  std::map<std::string, double> scores;
  try {
    for (std::size_t r = 1; r <= iterations; ++r) {
      g.forward(inputs);
      const GradMap grads = g.backward();
      scores.clear();
      for (Parameter* p : params) {
        const std::vector<double>& gv = grads.at(p->id);
        for (std::size_t i = 0; i < p->size(); ++i)
          scores[entry_id(p->id, i)] = p->values.data[i] * gv[i];
      }
      if (r == iterations) break;
      const double frac = static_cast<double>(r) / static_cast<double>(iterations);
      const double rho_r = 1.0 - std::pow(1.0 - rho, frac);
      const std::vector<std::string> kept_list = global_threshold(scores, rho_r);
      const std::set<std::string> kept(kept_list.begin(), kept_list.end());
      for (Parameter* p : params)
        for (std::size_t i = 0; i < p->size(); ++i)
          p->mask[i] = kept.count(entry_id(p->id, i)) > 0 ? 1.0 : 0.0;
    }
  } catch (...) {
    for (Parameter* p : params) {
      p->values.data = saved.at(p->id).first;
      p->mask = saved.at(p->id).second;
    }
    throw;
  }
  for (Parameter* p : params) {
    p->values.data = saved.at(p->id).first;
    p->mask = saved.at(p->id).second;
  }
  return scores;
}

std::map<std::string, double> synflow_scores(const FusionModel& m, std::size_t iterations,
                                             double rho) {
  FusionModel work = m.clone();
  Graph g;
  build_synflow_graph(g, work);
  return synflow_scores(g, work.parameters(), Inputs{}, iterations, rho);
}

std::map<std::string, double> random_scores(FusionModel& m, std::uint64_t seed, bool structured) {
  Rng rng(seed);
  std::map<std::string, double> scores;
  auto draw = [&rng]() { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); };
  if (structured) {
    for (const Channel& ch : m.channels()) scores[ch.id] = draw();
  } else {
    for (Parameter* p : m.parameters())
      for (std::size_t i = 0; i < p->size(); ++i) scores[entry_id(p->id, i)] = draw();
  }
  return scores;
}

ImportanceLedger ledger_from_scores(FusionModel& m, const std::map<std::string, double>& scores,
                                    const std::string& method, bool structured) {
  ImportanceLedger ledger;
  ledger.method = method;
  ledger.structured = structured;
  auto push = [&](const std::string& id, Partition part) {
    auto it = scores.find(id);
    if (it == scores.end()) throw std::invalid_argument("ledger: no score for " + id);
    LedgerEntry e;
    e.id = id;
    e.partition = part;
    e.score = it->second;
    ledger.entries.push_back(std::move(e));
  };
  if (structured) {
    for (const Channel& ch : m.channels()) push(ch.id, ch.partition);
  } else {
    for (Parameter* p : m.parameters())
      for (std::size_t i = 0; i < p->size(); ++i) push(entry_id(p->id, i), p->partition);
  }
  if (ledger.entries.size() != scores.size())
    throw std::invalid_argument("ledger: score map has ids the model lacks");
  return ledger;
}

PruneResult imp_prune(FusionModel& m, const MultiModalDataset& ds, const PruneConfig& cfg,
                      const ImpOptions& opt) {
  cfg.validate();
  if (cfg.structured) throw std::invalid_argument("imp: structured mode is not defined");
  if (opt.rounds == 0) throw std::invalid_argument("imp: need at least one round");
  if (!m.has_snapshot()) m.snapshot();

  PruneResult out;
  for (std::size_t r = 1; r <= opt.rounds; ++r) {
    finetune(m, ds, static_cast<int>(opt.epochs_per_round), opt.lr, cfg.batch_size,
             cfg.seed + 16 + r);
    // Already-masked entries get a sentinel below every reachable magnitude,
    // so prior prunings can never be undone.
    std::map<std::string, double> scores;
    for (Parameter* p : m.parameters())
      for (std::size_t i = 0; i < p->size(); ++i)
        scores[entry_id(p->id, i)] =
            p->mask[i] == 1.0 ? std::fabs(p->values.data[i]) : -1.0;
    const double frac = static_cast<double>(r) / static_cast<double>(opt.rounds);
    const double rho_r = 1.0 - std::pow(1.0 - cfg.rho, frac);
    out.ledger = ledger_from_scores(m, scores, "imp", false);
    out.k = commit_masks(m, out.ledger, rho_r);
  }
  out.total = out.ledger.entries.size();
  return out;
}

const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> methods = {"altermoma", "magnitude", "imp",
                                                   "snip",      "synflow",   "random"};
  return methods;
}

PruneResult prune_with_method(FusionModel& m, const MultiModalDataset& ds, const PruneConfig& cfg,
                              const std::string& method, const BaselineOptions& opt) {
  cfg.validate();
  const auto& methods = known_methods();
  if (std::find(methods.begin(), methods.end(), method) == methods.end()) {
    std::string msg = "unknown method '" + method + "'; valid methods:";
    for (const std::string& s : methods) msg += " " + s;
    throw std::invalid_argument(msg);
  }
  if (cfg.structured && method != "altermoma" && method != "magnitude" && method != "random")
    throw std::invalid_argument("structured pruning is defined for altermoma, magnitude, and "
                                "random, not for " + method);

  if (!m.has_snapshot()) m.snapshot();
  if (method == "altermoma") return run_altermoma(m, ds, cfg);
  if (method == "imp") return imp_prune(m, ds, cfg, opt.imp);

  std::map<std::string, double> scores;
  if (method == "magnitude") {
    scores = magnitude_scores(m, cfg.structured);
  } else if (method == "snip") {
    scores = snip_scores(m, make_eval_batches(ds, cfg));
  } else if (method == "synflow") {
    scores = synflow_scores(m, opt.synflow_iterations, cfg.rho);
  } else {
    scores = random_scores(m, cfg.seed, cfg.structured);
  }
  PruneResult out;
  out.ledger = ledger_from_scores(m, scores, method, cfg.structured);
  out.total = out.ledger.entries.size();
  out.k = commit_masks(m, out.ledger, cfg.rho);
  return out;
}

}  // namespace altermoma
