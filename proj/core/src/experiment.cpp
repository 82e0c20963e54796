#include "altermoma/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>

namespace altermoma {

void TrainConfig::validate() const {
  if (pretrain_epochs < 0 || fusion_epochs < 0 || finetune_epochs < 0)
    throw std::invalid_argument("train: negative epoch count");
  if (!(lr > 0.0) || !(finetune_lr > 0.0)) throw std::invalid_argument("train: learning rates must be positive");
  if (batch_size == 0) throw std::invalid_argument("train: zero batch size");
}

void AblateConfig::validate() const {
  if (grid.empty()) throw std::invalid_argument("ablate: empty ratio grid");
  for (double r : grid)
    if (r < 0.0) throw std::invalid_argument("ablate: negative beta/alpha ratio");
  if (seeds == 0) throw std::invalid_argument("ablate: need at least one seed");
}

void ExperimentConfig::apply_seed(std::uint64_t master) {
  seed = master;
  gen.mixing_seed = derive_seed(master, "mixing");
  gen.target_seed = derive_seed(master, "target");
  arch.seed = derive_seed(master, "init");
  prune.seed = derive_seed(master, "prune");
}

void ExperimentConfig::validate() const {
  if (kind == DataKind::Synthetic) {
    gen.validate();
    arch.validate();
  } else {
    planted.validate();
  }
  train.validate();
  prune.validate();
  ablate.validate();
  const auto& methods = known_methods();
  if (std::find(methods.begin(), methods.end(), method) == methods.end()) {
    std::string msg = "unknown method '" + method + "'; valid methods:";
    for (const std::string& s : methods) msg += " " + s;
    throw std::invalid_argument(msg);
  }
}

ExperimentConfig ExperimentConfig::from_config(const ConfigFile& f) {
  static const std::set<std::string> known = {
      "data.kind",          "data.n_train",       "data.n_val",
      "data.d_shared",      "data.d_cam_only",    "data.d_lidar",
      "data.d_camera",      "data.d_out",         "data.sigma_lidar",
      "data.sigma_camera",  "model.hidden_lidar", "model.hidden_camera",
      "model.feat_lidar",   "model.feat_camera",  "model.fusion_hidden",
      "model.loss",         "train.pretrain_epochs", "train.fusion_epochs",
      "train.train_backbones", "train.lr",        "train.finetune_epochs",
      "train.finetune_lr",  "train.batch_size",   "prune.rho",
      "prune.alpha",        "prune.beta",         "prune.reactivation_steps",
      "prune.reactivation_lr", "prune.eval_batch_count", "prune.structured",
      "prune.literal_reri_end", "prune.method",   "prune.imp_rounds",
      "prune.imp_epochs_per_round", "prune.imp_lr", "prune.synflow_iterations",
      "ablate.grid",        "ablate.seeds",       "planted.n_train",
      "planted.n_val",      "planted.d_lidar",    "planted.d_camera",
      "planted.shift",      "planted.perturb_scale", "run.seed",
  };
  for (const std::string& k : f.keys())
    if (!known.count(k)) throw std::invalid_argument("unknown config key '" + k + "'");

  ExperimentConfig cfg;

  const std::string kind = f.get_string("data", "kind", "synthetic");
  if (kind == "synthetic")
    cfg.kind = DataKind::Synthetic;
  else if (kind == "planted")
    cfg.kind = DataKind::Planted;
  else
    throw std::invalid_argument("data.kind must be 'synthetic' or 'planted', got '" + kind + "'");

  GenConfig& g = cfg.gen;
  g.n_train = f.get_u64("data", "n_train", g.n_train);
  g.n_val = f.get_u64("data", "n_val", g.n_val);
  g.d_shared = f.get_u64("data", "d_shared", g.d_shared);
  g.d_cam_only = f.get_u64("data", "d_cam_only", g.d_cam_only);
  g.d_lidar = f.get_u64("data", "d_lidar", g.d_lidar);
  g.d_camera = f.get_u64("data", "d_camera", g.d_camera);
  g.d_out = f.get_u64("data", "d_out", g.d_out);
  g.sigma_lidar = f.get_double("data", "sigma_lidar", g.sigma_lidar);
  g.sigma_camera = f.get_double("data", "sigma_camera", g.sigma_camera);

  ArchConfig& a = cfg.arch;
  a.in_lidar = g.d_lidar;
  a.in_camera = g.d_camera;
  a.out = g.d_out;
  a.hidden_lidar = f.get_u64("model", "hidden_lidar", a.hidden_lidar);
  a.hidden_camera = f.get_u64("model", "hidden_camera", a.hidden_camera);
  a.feat_lidar = f.get_u64("model", "feat_lidar", a.feat_lidar);
  a.feat_camera = f.get_u64("model", "feat_camera", a.feat_camera);
  a.fusion_hidden = f.get_u64("model", "fusion_hidden", a.fusion_hidden);
  const std::string loss = f.get_string("model", "loss", "mse");
  if (loss == "mse")
    a.loss = LossKind::Mse;
  else if (loss == "xent")
    a.loss = LossKind::SoftmaxXent;
  else
    throw std::invalid_argument("model.loss must be 'mse' or 'xent', got '" + loss + "'");

  TrainConfig& t = cfg.train;
  t.pretrain_epochs = static_cast<int>(f.get_i64("train", "pretrain_epochs", t.pretrain_epochs));
  t.fusion_epochs = static_cast<int>(f.get_i64("train", "fusion_epochs", t.fusion_epochs));
  t.train_backbones = f.get_bool("train", "train_backbones", t.train_backbones);
  t.lr = f.get_double("train", "lr", t.lr);
  t.finetune_epochs = static_cast<int>(f.get_i64("train", "finetune_epochs", t.finetune_epochs));
  t.finetune_lr = f.get_double("train", "finetune_lr", t.finetune_lr);
  t.batch_size = f.get_u64("train", "batch_size", t.batch_size);

  PruneConfig& p = cfg.prune;
  p.rho = f.get_double("prune", "rho", p.rho);
  p.alpha = f.get_double("prune", "alpha", p.alpha);
  p.beta = f.get_double("prune", "beta", p.beta);
  p.reactivation_steps = f.get_u64("prune", "reactivation_steps", p.reactivation_steps);
  p.reactivation_lr = f.get_double("prune", "reactivation_lr", p.reactivation_lr);
  p.eval_batch_count = f.get_u64("prune", "eval_batch_count", p.eval_batch_count);
  p.structured = f.get_bool("prune", "structured", p.structured);
  p.literal_reri_end = f.get_bool("prune", "literal_reri_end", p.literal_reri_end);
  p.batch_size = t.batch_size;
  cfg.method = f.get_string("prune", "method", cfg.method);

  BaselineOptions& b = cfg.baseline;
  b.imp.rounds = f.get_u64("prune", "imp_rounds", b.imp.rounds);
  b.imp.epochs_per_round = f.get_u64("prune", "imp_epochs_per_round", b.imp.epochs_per_round);
  b.imp.lr = f.get_double("prune", "imp_lr", b.imp.lr);
  b.synflow_iterations = f.get_u64("prune", "synflow_iterations", b.synflow_iterations);

  AblateConfig& ab = cfg.ablate;
  ab.grid = f.get_double_list("ablate", "grid", ab.grid);
  ab.seeds = f.get_u64("ablate", "seeds", ab.seeds);

  PlantedOptions& pl = cfg.planted;
  pl.n_train = f.get_u64("planted", "n_train", pl.n_train);
  pl.n_val = f.get_u64("planted", "n_val", pl.n_val);
  pl.d_lidar = f.get_u64("planted", "d_lidar", pl.d_lidar);
  pl.d_camera = f.get_u64("planted", "d_camera", pl.d_camera);
  pl.shift = f.get_double("planted", "shift", pl.shift);
  pl.perturb_scale = f.get_double("planted", "perturb_scale", pl.perturb_scale);

  cfg.apply_seed(f.get_u64("run", "seed", cfg.seed));
  cfg.validate();
  return cfg;
}

MultiModalDataset make_dataset(const ExperimentConfig& cfg) {
  if (cfg.kind == DataKind::Planted)
    return std::move(make_planted_scenario(cfg.seed, cfg.planted).data);
  return MultiModalDataset::generate(cfg.gen, cfg.data_seed());
}

ArchConfig ExperimentConfig::model_arch() const {
  return kind == DataKind::Planted ? planted_arch(seed, planted) : arch;
}

PipelineResult prepare_model(const ExperimentConfig& cfg) {
  if (cfg.kind == DataKind::Planted) {
    PlantedScenario sc = make_planted_scenario(cfg.seed, cfg.planted);
    return PipelineResult{std::move(sc.model), std::move(sc.data)};
  }
  MultiModalDataset ds = MultiModalDataset::generate(cfg.gen, cfg.data_seed());
  FusionModel m = FusionModel::build(cfg.arch);
  pretrain_backbone(m, Partition::Lidar, ds, cfg.train.pretrain_epochs, cfg.train.lr,
                    cfg.train.batch_size, derive_seed(cfg.seed, "pretrain_lidar"));
  pretrain_backbone(m, Partition::Camera, ds, cfg.train.pretrain_epochs, cfg.train.lr,
                    cfg.train.batch_size, derive_seed(cfg.seed, "pretrain_camera"));
  train_fusion(m, ds, cfg.train.fusion_epochs, cfg.train.lr, cfg.train.batch_size,
               derive_seed(cfg.seed, "fusion"), cfg.train.train_backbones);
  return PipelineResult{std::move(m), std::move(ds)};
}

double val_loss(FusionModel& m, const MultiModalDataset& ds) {
  return m.loss_on(ds.val_batch());
}

MethodRun prune_and_finetune(FusionModel& m, const MultiModalDataset& ds,
                             const ExperimentConfig& cfg, const std::string& method) {
  MethodRun run;
  run.result = prune_with_method(m, ds, cfg.prune, method, cfg.baseline);
  run.val_before_finetune = val_loss(m, ds);
  finetune(m, ds, cfg.train.finetune_epochs, cfg.train.finetune_lr, cfg.train.batch_size,
           derive_seed(cfg.seed, "finetune"));
  run.val_after_finetune = val_loss(m, ds);
  return run;
}

std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg) {
  std::vector<AblationRow> rows;
  for (double ratio : cfg.ablate.grid) {
    for (std::size_t s = 0; s < cfg.ablate.seeds; ++s) {
      ExperimentConfig sub = cfg;
      sub.apply_seed(cfg.seed + s);
      sub.prune.beta = ratio * sub.prune.alpha;
      PipelineResult pipe = prepare_model(sub);
      const MethodRun run = prune_and_finetune(pipe.model, pipe.data, sub, "altermoma");
      rows.push_back(AblationRow{ratio, sub.seed, sub.prune.rho, run.val_after_finetune});
    }
  }
  return rows;
}

namespace {

void emit_double(std::ofstream& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out << buf;
}

}  // namespace

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::string& path,
                        const std::string& trailing_comment) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot open " + path + " for writing");
  out << "beta_over_alpha,seed,rho,val_loss\n";
  for (const AblationRow& r : rows) {
    emit_double(out, r.beta_over_alpha);
    out << "," << r.seed << ",";
    emit_double(out, r.rho);
    out << ",";
    emit_double(out, r.val_loss);
    out << "\n";
  }
  if (!trailing_comment.empty()) out << trailing_comment << "\n";
  if (!out) throw io_error("write failed for " + path);
}

std::vector<GradDiffRow> gradient_difference(FusionModel& m, const MultiModalDataset& ds,
                                             const PruneConfig& cfg) {
  if (!m.modality().all_unmasked())
    throw std::invalid_argument("gradient_difference: model must start fully unmasked");
  const std::vector<Batch> eval_batches = make_eval_batches(ds, cfg);
  const GradMap g_full = averaged_gradients(m, eval_batches);
  m.modality().lidar = 0.0;
  const GradMap g_cam = averaged_gradients(m, eval_batches);
  m.modality().lidar = 1.0;

  std::vector<GradDiffRow> rows;
  for (Parameter* p : m.partition_params(Partition::Camera)) {
    const std::vector<double>& gc = g_cam.at(p->id);
    const std::vector<double>& gf = g_full.at(p->id);
    for (std::size_t i = 0; i < p->size(); ++i) {
      GradDiffRow r;
      r.id = entry_id(p->id, i);
      r.camera_only = std::fabs(p->values.data[i] * gc[i]);
      r.full_fusion = std::fabs(p->values.data[i] * gf[i]);
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

void write_graddiff_csv(const std::vector<GradDiffRow>& rows, const std::string& path,
                        const std::string& trailing_comment) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot open " + path + " for writing");
  out << "id,camera_only,full_fusion,ratio\n";
  for (const GradDiffRow& r : rows) {
    out << r.id << ",";
    emit_double(out, r.camera_only);
    out << ",";
    emit_double(out, r.full_fusion);
    out << ",";
    if (r.camera_only > 0.0) emit_double(out, r.full_fusion / r.camera_only);
    out << "\n";
  }
  if (!trailing_comment.empty()) out << trailing_comment << "\n";
  if (!out) throw io_error("write failed for " + path);
}

}  // namespace altermoma
