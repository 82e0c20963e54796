#include "altermoma/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include <json.hpp>

namespace altermoma {

void PruneConfig::validate() const {
  if (!(rho >= 0.0 && rho < 1.0)) throw std::invalid_argument("PruneConfig: rho outside [0, 1)");
  if (alpha < 0.0 || beta < 0.0) throw std::invalid_argument("PruneConfig: negative alpha or beta");
  if (eval_batch_count == 0) throw std::invalid_argument("PruneConfig: need at least one eval batch");
  if (batch_size == 0) throw std::invalid_argument("PruneConfig: zero batch size");
  if (reactivation_steps > 0 && reactivation_lr <= 0.0)
    throw std::invalid_argument("PruneConfig: reactivation steps need a positive learning rate");
}

LedgerEntry& ImportanceLedger::find(const std::string& id) {
  for (LedgerEntry& e : entries)
    if (e.id == id) return e;
  throw std::invalid_argument("ledger has no entry " + id);
}

std::vector<Batch> make_eval_batches(const MultiModalDataset& ds, const PruneConfig& cfg) {
  return batches(ds, cfg.batch_size, cfg.seed + 1, cfg.eval_batch_count);
}

static Inputs batch_inputs(const Batch& b) {
  return Inputs{{"x_l", b.x_lidar}, {"x_c", b.x_camera}, {"y", b.y}};
}

static std::vector<Inputs> batch_inputs(const std::vector<Batch>& bs) {
  std::vector<Inputs> out;
  out.reserve(bs.size());
  for (const Batch& b : bs) out.push_back(batch_inputs(b));
  return out;
}

GradMap averaged_gradients(Graph& g, const std::vector<Inputs>& eval_inputs) {
  if (eval_inputs.empty()) throw std::invalid_argument("averaged_gradients: no eval batches");
  GradMap acc;
  for (const Inputs& in : eval_inputs) {
    g.forward(in);
    GradMap grads = g.backward();
    if (acc.empty()) {
      acc = std::move(grads);
    } else {
      for (auto& [id, vec] : grads) {
        auto& slot = acc.at(id);
        for (std::size_t i = 0; i < vec.size(); ++i) slot[i] += vec[i];
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(eval_inputs.size());
  for (auto& [id, vec] : acc)
    for (double& v : vec) v *= inv;
  return acc;
}

GradMap averaged_gradients(FusionModel& m, const std::vector<Batch>& eval_batches) {
  return averaged_gradients(m.graph(), batch_inputs(eval_batches));
}

static std::map<std::string, double> expand_abs(const ValueMap& terms) {
  std::map<std::string, double> out;
  for (const auto& [pid, vec] : terms)
    for (std::size_t i = 0; i < vec.size(); ++i) out[entry_id(pid, i)] = std::fabs(vec[i]);
  return out;
}

ValueMap deci_terms(FusionModel& m, const std::vector<Batch>& eval_batches) {
  if (!m.modality().all_unmasked())
    throw std::invalid_argument("deci: model must be fully unmasked");
  const GradMap grads = averaged_gradients(m, eval_batches);
  ValueMap terms;
  for (Parameter* p : m.parameters()) {
    const std::vector<double>& g = grads.at(p->id);
    std::vector<double> t(p->size());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = p->values.data[i] * g[i];
    terms[p->id] = std::move(t);
  }
  return terms;
}

std::map<std::string, double> deci(FusionModel& m, const std::vector<Batch>& eval_batches) {
  return expand_abs(deci_terms(m, eval_batches));
}

ReactivationResult reactivate_graph(Graph& g, const std::vector<Parameter*>& trainable,
                                    const std::vector<Inputs>& eval_inputs,
                                    const std::vector<Inputs>& train_inputs, double lr,
                                    bool literal_end) {
  if (!train_inputs.empty() && lr <= 0.0)
    throw std::invalid_argument("reactivate: training steps need a positive learning rate");
  ReactivationResult res;
  res.grad_start = averaged_gradients(g, eval_inputs);
  for (const Inputs& in : train_inputs) {
    res.step_losses.push_back(g.forward(in));
    sgd_step(trainable, g.backward(), lr);
  }
  if (literal_end && !train_inputs.empty()) {
    g.forward(train_inputs.back());
    res.grad_end = g.backward();
  } else {
    res.grad_end = averaged_gradients(g, eval_inputs);
  }
  return res;
}

ReactivationResult reactivate(FusionModel& m, Partition masked_modality,
                              const MultiModalDataset& ds, const PruneConfig& cfg) {
  cfg.validate();
  if (masked_modality != Partition::Lidar && masked_modality != Partition::Camera)
    throw std::invalid_argument("reactivate: masked modality must be lidar or camera");

  const std::vector<Inputs> eval_inputs = batch_inputs(make_eval_batches(ds, cfg));
  const std::uint64_t train_seed = cfg.seed + (masked_modality == Partition::Lidar ? 2 : 3);
  const std::vector<Inputs> train_inputs =
      batch_inputs(batches(ds, cfg.batch_size, train_seed, cfg.reactivation_steps));

  if (masked_modality == Partition::Lidar)
    m.modality().lidar = 0.0;
  else
    m.modality().camera = 0.0;

  std::vector<Parameter*> trainable;
  for (Parameter* p : m.parameters())
    if (p->partition != masked_modality) trainable.push_back(p);

  ReactivationResult res = reactivate_graph(m.graph(), trainable, eval_inputs, train_inputs,
                                            cfg.reactivation_lr, cfg.literal_reri_end);

  // The masked partition's entries are identically zero through the modality
  // mask; the indicator is only defined over the partitions that adapted.
  for (Parameter* p : m.partition_params(masked_modality)) {
    res.grad_start.erase(p->id);
    res.grad_end.erase(p->id);
  }
  return res;
}

ValueMap reri_terms(const ValueMap& theta_init, const GradMap& grad_start,
                    const GradMap& grad_end) {
  if (grad_start.size() != theta_init.size() || grad_end.size() != theta_init.size())
    throw std::invalid_argument("reri: the three maps disagree on their id sets");
  ValueMap out;
  for (const auto& [pid, theta] : theta_init) {
    auto gs = grad_start.find(pid);
    auto ge = grad_end.find(pid);
    if (gs == grad_start.end() || ge == grad_end.end())
      throw std::invalid_argument("reri: gradient maps lack parameter " + pid);
    if (gs->second.size() != theta.size() || ge->second.size() != theta.size())
      throw std::invalid_argument("reri: length mismatch for " + pid);
    std::vector<double> t(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i)
      t[i] = theta[i] * gs->second[i] - theta[i] * ge->second[i];
    out[pid] = std::move(t);
  }
  return out;
}

std::map<std::string, double> reri(const ValueMap& theta_init, const GradMap& grad_start,
                                   const GradMap& grad_end) {
  return expand_abs(reri_terms(theta_init, grad_start, grad_end));
}

void assemble_scores(ImportanceLedger& ledger, double alpha, double beta) {
  std::vector<std::string> missing;
  for (const LedgerEntry& e : ledger.entries) {
    const bool needs_lidar_masked = e.partition != Partition::Lidar;
    const bool needs_camera_masked = e.partition != Partition::Camera;
    if ((needs_lidar_masked && !e.reri_lidar_masked.has_value()) ||
        (needs_camera_masked && !e.reri_camera_masked.has_value()))
      missing.push_back(e.id);
  }
  if (!missing.empty()) {
    std::string msg = "assemble_scores: incomplete indicators for";
    for (std::size_t i = 0; i < missing.size() && i < 8; ++i) msg += " " + missing[i];
    if (missing.size() > 8) msg += " (+" + std::to_string(missing.size() - 8) + " more)";
    throw std::invalid_argument(msg);
  }

  double sum_deci[3] = {0, 0, 0}, sum_rl[3] = {0, 0, 0}, sum_rc[3] = {0, 0, 0};
  for (const LedgerEntry& e : ledger.entries) {
    const int p = static_cast<int>(e.partition);
    sum_deci[p] += e.deci;
    if (e.reri_lidar_masked) sum_rl[p] += *e.reri_lidar_masked;
    if (e.reri_camera_masked) sum_rc[p] += *e.reri_camera_masked;
  }

  auto share = [](double v, double sum) { return sum > 0.0 ? v / sum : 0.0; };
  for (LedgerEntry& e : ledger.entries) {
    const int p = static_cast<int>(e.partition);
    double s = alpha * share(e.deci, sum_deci[p]);
    switch (e.partition) {
      case Partition::Camera:
        s -= beta * share(*e.reri_lidar_masked, sum_rl[p]);
        break;
      case Partition::Lidar:
        s -= beta * share(*e.reri_camera_masked, sum_rc[p]);
        break;
      case Partition::Fusion:
        s -= 0.5 * beta * share(*e.reri_lidar_masked, sum_rl[p]);
        s -= 0.5 * beta * share(*e.reri_camera_masked, sum_rc[p]);
        break;
    }
    e.score = s;
  }
}

std::vector<std::string> global_threshold(const std::map<std::string, double>& scores,
                                          double rho) {
  if (!(rho >= 0.0 && rho < 1.0)) throw std::invalid_argument("global_threshold: rho outside [0, 1)");
  std::vector<std::pair<std::string, double>> ranked(scores.begin(), scores.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  const std::size_t k = static_cast<std::size_t>(
      std::llround((1.0 - rho) * static_cast<double>(scores.size())));
  std::vector<std::string> kept;
  kept.reserve(k);
  for (std::size_t i = 0; i < k && i < ranked.size(); ++i) kept.push_back(ranked[i].first);
  return kept;
}

namespace {

const std::vector<double>* lookup(const ValueMap& m, const std::string& pid) {
  auto it = m.find(pid);
  return it == m.end() ? nullptr : &it->second;
}

}  // namespace

ImportanceLedger make_unstructured_ledger(FusionModel& m, const SaliencyTerms& terms) {
  ImportanceLedger ledger;
  ledger.structured = false;
  for (Parameter* p : m.parameters()) {
    const std::vector<double>* d = lookup(terms.deci, p->id);
    if (d == nullptr) throw std::invalid_argument("ledger: no deactivation terms for " + p->id);
    const std::vector<double>* rl = lookup(terms.reri_lidar_masked, p->id);
    const std::vector<double>* rc = lookup(terms.reri_camera_masked, p->id);
    for (std::size_t i = 0; i < p->size(); ++i) {
      LedgerEntry e;
      e.id = entry_id(p->id, i);
      e.partition = p->partition;
      e.deci = std::fabs((*d)[i]);
      if (rl) e.reri_lidar_masked = std::fabs((*rl)[i]);
      if (rc) e.reri_camera_masked = std::fabs((*rc)[i]);
      ledger.entries.push_back(std::move(e));
    }
  }
  return ledger;
}

ImportanceLedger structured_aggregate(FusionModel& m, const SaliencyTerms& terms) {
  // Every entry outside the task output layer must belong to exactly one
  // channel; count coverage to catch a malformed map early.
  std::map<std::string, std::size_t> covered;
  for (const Channel& ch : m.channels()) {
    covered[ch.weight_id] += ch.weight_flat_indices.size();
    covered[ch.bias_id] += 1;
  }
  for (Parameter* p : m.parameters()) {
    const bool prunable = covered.count(p->id) > 0;
    if (prunable && covered[p->id] != p->size())
      throw std::invalid_argument("structured_aggregate: channel map covers " +
                                  std::to_string(covered[p->id]) + " of " +
                                  std::to_string(p->size()) + " entries of " + p->id);
  }

  auto channel_sum = [&](const ValueMap& vm, const Channel& ch, bool& present) -> double {
    const std::vector<double>* w = lookup(vm, ch.weight_id);
    const std::vector<double>* b = lookup(vm, ch.bias_id);
    if (w == nullptr || b == nullptr) {
      present = false;
      return 0.0;
    }
    present = true;
    double acc = 0.0;
    for (std::size_t idx : ch.weight_flat_indices) acc += (*w)[idx];
    acc += (*b)[ch.index];
    return acc;
  };

  ImportanceLedger ledger;
  ledger.structured = true;
  for (const Channel& ch : m.channels()) {
    LedgerEntry e;
    e.id = ch.id;
    e.partition = ch.partition;
    bool present = false;
    const double d = channel_sum(terms.deci, ch, present);
    if (!present) throw std::invalid_argument("structured_aggregate: no deactivation terms for " + ch.id);
    e.deci = std::fabs(d);
    const double rl = channel_sum(terms.reri_lidar_masked, ch, present);
    if (present) e.reri_lidar_masked = std::fabs(rl);
    const double rc = channel_sum(terms.reri_camera_masked, ch, present);
    if (present) e.reri_camera_masked = std::fabs(rc);
    ledger.entries.push_back(std::move(e));
  }
  return ledger;
}

std::size_t commit_masks(FusionModel& m, ImportanceLedger& ledger, double rho) {
  if (!m.has_snapshot())
    throw std::runtime_error("commit_masks: model carries no initial snapshot");
  std::map<std::string, double> scores;
  for (const LedgerEntry& e : ledger.entries) scores[e.id] = e.score;
  if (scores.size() != ledger.entries.size())
    throw std::invalid_argument("commit_masks: duplicate ledger ids");
  const std::vector<std::string> kept_list = global_threshold(scores, rho);
  const std::set<std::string> kept(kept_list.begin(), kept_list.end());
  for (LedgerEntry& e : ledger.entries) e.kept = kept.count(e.id) > 0;

  if (ledger.structured) {
    for (Parameter* p : m.parameters()) p->mask.assign(p->size(), 1.0);
    for (const Channel& ch : m.channels()) m.set_channel_mask(ch, kept.count(ch.id) > 0);
  } else {
    for (Parameter* p : m.parameters()) {
      for (std::size_t i = 0; i < p->size(); ++i)
        p->mask[i] = kept.count(entry_id(p->id, i)) > 0 ? 1.0 : 0.0;
    }
  }

  m.restore();
  for (Parameter* p : m.parameters()) p->apply_mask();
  return kept_list.size();
}

PruneResult run_altermoma(FusionModel& m, const MultiModalDataset& ds, const PruneConfig& cfg) {
  cfg.validate();
  if (!m.has_snapshot()) m.snapshot();

  const std::vector<Batch> eval_batches = make_eval_batches(ds, cfg);

  SaliencyTerms terms;
  terms.deci = deci_terms(m, eval_batches);

  const ValueMap& theta_init = m.snapshot_values();
  for (Partition masked : {Partition::Lidar, Partition::Camera}) {
    const ReactivationResult res = reactivate(m, masked, ds, cfg);
    ValueMap theta_subset;
    for (const auto& [pid, g] : res.grad_start) theta_subset[pid] = theta_init.at(pid);
    ValueMap t = reri_terms(theta_subset, res.grad_start, res.grad_end);
    if (masked == Partition::Lidar)
      terms.reri_lidar_masked = std::move(t);
    else
      terms.reri_camera_masked = std::move(t);
    m.restore();
    m.modality() = ModalityMasks{};
  }

  PruneResult out;
  out.ledger = cfg.structured ? structured_aggregate(m, terms) : make_unstructured_ledger(m, terms);
  assemble_scores(out.ledger, cfg.alpha, cfg.beta);
  out.total = out.ledger.entries.size();
  out.k = commit_masks(m, out.ledger, cfg.rho);
  return out;
}

// ============================================================================
// Ledger dumps.
// ============================================================================

static void emit_double(std::ofstream& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out << buf;
}

void write_ledger_csv(const ImportanceLedger& ledger, const std::string& path,
                      const std::string& trailing_comment) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot open " + path + " for writing");
  out << "id,partition,method,deci,reri_lidar_masked,reri_camera_masked,score,kept\n";
  for (const LedgerEntry& e : ledger.entries) {
    out << e.id << "," << partition_name(e.partition) << "," << ledger.method << ",";
    emit_double(out, e.deci);
    out << ",";
    if (e.reri_lidar_masked) emit_double(out, *e.reri_lidar_masked);
    out << ",";
    if (e.reri_camera_masked) emit_double(out, *e.reri_camera_masked);
    out << ",";
    emit_double(out, e.score);
    out << "," << (e.kept ? 1 : 0) << "\n";
  }
  if (!trailing_comment.empty()) out << trailing_comment << "\n";
  if (!out) throw io_error("write failed for " + path);
}

void write_ledger_json(const ImportanceLedger& ledger, const std::string& path) {
  nlohmann::json root;
  root["method"] = ledger.method;
  root["structured"] = ledger.structured;
  nlohmann::json entries = nlohmann::json::array();
  for (const LedgerEntry& e : ledger.entries) {
    nlohmann::json j;
    j["id"] = e.id;
    j["partition"] = partition_name(e.partition);
    j["deci"] = e.deci;
    if (e.reri_lidar_masked) j["reri_lidar_masked"] = *e.reri_lidar_masked;
    if (e.reri_camera_masked) j["reri_camera_masked"] = *e.reri_camera_masked;
    j["score"] = e.score;
    j["kept"] = e.kept;
    entries.push_back(std::move(j));
  }
  root["entries"] = std::move(entries);
  std::ofstream out(path);
  if (!out) throw io_error("cannot open " + path + " for writing");
  out << root.dump(2) << "\n";
  if (!out) throw io_error("write failed for " + path);
}

}  // namespace altermoma
