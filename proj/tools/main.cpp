// Experiment harness: every subcommand is driven by one config file, and every
// emitted CSV carries the canonical hash of that config (with command-line
// overrides folded in), so any table traces back to its exact settings.

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "altermoma/checkpoint.hpp"
#include "altermoma/experiment.hpp"
#include "altermoma/oracle.hpp"

namespace {

using namespace altermoma;

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kVerifyFail = 2;
constexpr int kIo = 3;

// Matches the CSV writers, so stdout numbers round trip the same way.
std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct CommonArgs {
  std::string config_path;
  std::string model_in;
  std::string data_path;
  std::string out;
  std::string ledger_path;
  std::string csv_path;
  std::optional<std::uint64_t> seed;
  std::optional<double> rho;
  std::optional<std::string> method;
  bool structured = false;
};

struct Run {
  ConfigFile file;
  ExperimentConfig cfg;
  std::string hash_comment;
};

Run load_run(const CommonArgs& a) {
  ConfigFile f = ConfigFile::parse_file(a.config_path);
  if (a.seed) f.set("run", "seed", std::to_string(*a.seed));
  if (a.rho) f.set("prune", "rho", fmt(*a.rho));
  if (a.method) f.set("prune", "method", *a.method);
  if (a.structured) f.set("prune", "structured", "true");
  ExperimentConfig cfg = ExperimentConfig::from_config(f);
  cfg.validate();
  std::string comment = config_hash_comment(f);
  return Run{std::move(f), std::move(cfg), std::move(comment)};
}

MultiModalDataset dataset_for(const Run& run, const CommonArgs& a) {
  if (!a.data_path.empty()) return MultiModalDataset::load(a.data_path);
  return make_dataset(run.cfg);
}

int cmd_gen_data(const CommonArgs& a) {
  const Run run = load_run(a);
  MultiModalDataset ds = make_dataset(run.cfg);
  ds.save(a.out);
  if (!a.csv_path.empty()) ds.to_csv(a.csv_path, run.hash_comment);
  std::printf("wrote %s (%zu train, %zu val)\n", a.out.c_str(), ds.n_train(), ds.n_val());
  if (run.cfg.kind == DataKind::Synthetic) {
    // Least-squares recovery of the shared latents from each raw view; the
    // lidar side must come out cleaner or the whole redundancy premise is off.
    const RedundancyCertificate cert = ds.redundancy_certificate();
    std::printf("recovery_mse_from_lidar,%s\n", fmt(cert.mse_from_lidar).c_str());
    std::printf("recovery_mse_from_camera,%s\n", fmt(cert.mse_from_camera).c_str());
    std::printf("lidar_recovers_better,%s\n", cert.lidar_recovers_better() ? "true" : "false");
  }
  return kOk;
}

void print_epochs(const char* stage, const std::vector<EpochStats>& rows) {
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::printf("%s,%zu,%s,%s\n", stage, i + 1, fmt(rows[i].train_loss).c_str(),
                fmt(rows[i].val_loss).c_str());
}

int cmd_pretrain(const CommonArgs& a) {
  const Run run = load_run(a);
  const ExperimentConfig& cfg = run.cfg;
  std::printf("stage,epoch,train_loss,val_loss\n");
  if (cfg.kind == DataKind::Planted) {
    // The planted fixture arrives constructed; this just materializes it.
    PipelineResult pipe = prepare_model(cfg);
    save_checkpoint(pipe.model, a.out);
  } else {
    MultiModalDataset ds = dataset_for(run, a);
    FusionModel m = FusionModel::build(cfg.arch);
    print_epochs("pretrain_lidar",
                 pretrain_backbone(m, Partition::Lidar, ds, cfg.train.pretrain_epochs,
                                   cfg.train.lr, cfg.train.batch_size,
                                   derive_seed(cfg.seed, "pretrain_lidar")));
    print_epochs("pretrain_camera",
                 pretrain_backbone(m, Partition::Camera, ds, cfg.train.pretrain_epochs,
                                   cfg.train.lr, cfg.train.batch_size,
                                   derive_seed(cfg.seed, "pretrain_camera")));
    save_checkpoint(m, a.out);
  }
  std::printf("%s\n", run.hash_comment.c_str());
  return kOk;
}

int cmd_train_fusion(const CommonArgs& a) {
  const Run run = load_run(a);
  const ExperimentConfig& cfg = run.cfg;
  MultiModalDataset ds = dataset_for(run, a);
  FusionModel m = load_checkpoint(a.model_in, cfg.model_arch());
  std::printf("stage,epoch,train_loss,val_loss\n");
  print_epochs("train_fusion",
               train_fusion(m, ds, cfg.train.fusion_epochs, cfg.train.lr, cfg.train.batch_size,
                            derive_seed(cfg.seed, "fusion"), cfg.train.train_backbones));
  save_checkpoint(m, a.out);
  const Batch val = ds.val_batch();
  std::printf("# val_fused=%s val_lidar_masked=%s val_camera_masked=%s\n",
              fmt(m.loss_on(val)).c_str(), fmt(m.masked_loss(val, 0.0, 1.0, 1.0)).c_str(),
              fmt(m.masked_loss(val, 1.0, 0.0, 1.0)).c_str());
  std::printf("%s\n", run.hash_comment.c_str());
  return kOk;
}

int cmd_prune(const CommonArgs& a) {
  const Run run = load_run(a);
  const ExperimentConfig& cfg = run.cfg;
  MultiModalDataset ds = dataset_for(run, a);
  FusionModel m = load_checkpoint(a.model_in, cfg.model_arch());
  PruneResult r = prune_with_method(m, ds, cfg.prune, cfg.method, cfg.baseline);
  const double v = val_loss(m, ds);
  save_checkpoint(m, a.out);
  const std::string ledger = a.ledger_path.empty() ? a.out + ".ledger.csv" : a.ledger_path;
  write_ledger_csv(r.ledger, ledger, run.hash_comment);
  std::printf("method,rho,k,val_loss\n%s,%s,%zu,%s\n", cfg.method.c_str(),
              fmt(cfg.prune.rho).c_str(), r.k, fmt(v).c_str());
  std::printf("%s\n", run.hash_comment.c_str());
  return kOk;
}

int cmd_ablate(const CommonArgs& a) {
  const Run run = load_run(a);
  const std::vector<AblationRow> rows = run_ablation(run.cfg);
  write_ablation_csv(rows, a.out, run.hash_comment);
  std::printf("wrote %zu rows to %s\n", rows.size(), a.out.c_str());
  return kOk;
}

int cmd_graddiff(const CommonArgs& a) {
  const Run run = load_run(a);
  MultiModalDataset ds = dataset_for(run, a);
  FusionModel m = load_checkpoint(a.model_in, run.cfg.model_arch());
  const std::vector<GradDiffRow> rows = gradient_difference(m, ds, run.cfg.prune);
  write_graddiff_csv(rows, a.out, run.hash_comment);
  std::printf("wrote %zu rows to %s\n", rows.size(), a.out.c_str());
  return kOk;
}

// ---------------------------------------------------------------------------
// verify: oracle suite on small probe models seeded from the config, plus
// bookkeeping checks on the configured pipeline itself.
// ---------------------------------------------------------------------------

FusionModel probe_model(std::uint64_t seed) {
  ArchConfig a;
  a.in_lidar = 4;
  a.in_camera = 6;
  a.hidden_lidar = 6;
  a.hidden_camera = 6;
  a.feat_lidar = 4;
  a.feat_camera = 4;
  a.fusion_hidden = 6;
  a.out = 2;
  a.seed = derive_seed(seed, "init");
  return FusionModel::build(a);
}

MultiModalDataset probe_data(std::uint64_t seed) {
  GenConfig g;
  g.n_train = 256;
  g.n_val = 64;
  g.d_shared = 2;
  g.d_cam_only = 2;
  g.d_lidar = 4;
  g.d_camera = 6;
  g.d_out = 2;
  g.mixing_seed = derive_seed(seed, "mixing");
  g.target_seed = derive_seed(seed, "target");
  return MultiModalDataset::generate(g, derive_seed(seed, "data"));
}

// Tiny graph that stays under the quadratic-cost guard of the trajectory
// replay check.
FusionModel prop1_model(std::uint64_t seed) {
  ArchConfig a;
  a.in_lidar = 2;
  a.in_camera = 2;
  a.hidden_lidar = 2;
  a.hidden_camera = 2;
  a.feat_lidar = 2;
  a.feat_camera = 2;
  a.fusion_hidden = 2;
  a.out = 1;
  a.seed = derive_seed(seed, "init") + 1;
  return FusionModel::build(a);
}

MultiModalDataset prop1_data(std::uint64_t seed) {
  GenConfig g;
  g.n_train = 64;
  g.n_val = 16;
  g.d_shared = 1;
  g.d_cam_only = 1;
  g.d_lidar = 2;
  g.d_camera = 2;
  g.d_out = 1;
  g.mixing_seed = derive_seed(seed, "mixing") + 1;
  g.target_seed = derive_seed(seed, "target") + 1;
  return MultiModalDataset::generate(g, derive_seed(seed, "data") + 1);
}

int cmd_verify(const CommonArgs& a) {
  const Run run = load_run(a);
  const ExperimentConfig& cfg = run.cfg;
  const std::uint64_t seed = cfg.seed;
  std::vector<CheckRow> rows;
  auto add = [&](const char* name, double value, double threshold, bool pass) {
    rows.push_back(CheckRow{name, seed, value, threshold, pass});
  };

  FusionModel pm = probe_model(seed);
  MultiModalDataset pds = probe_data(seed);
  PruneConfig pc;
  pc.batch_size = 32;
  pc.eval_batch_count = 4;
  pc.seed = derive_seed(seed, "prune");

  {
    const Batch b = batches(pds, 32, seed + 9, 1)[0];
    const double worst = fd_gradient_check(pm, b, 1e-6);
    add("fd_worst", worst, 1e-5, worst < 1e-5);
  }
  {
    const std::vector<Batch> eval = make_eval_batches(pds, pc);
    const std::map<std::string, double> scores = deci(pm, eval);
    std::vector<double> predicted, exact;
    for (Parameter* p : pm.parameters())
      for (std::size_t i = 0; i < p->size(); ++i) {
        predicted.push_back(scores.at(entry_id(p->id, i)));
        exact.push_back(exact_mask_delta(pm, p->id, i, eval));
      }
    const double corr = spearman(predicted, exact);
    add("rank_corr", corr, 0.8, corr >= 0.8);
  }
  {
    FusionModel tm = prop1_model(seed);
    MultiModalDataset tds = prop1_data(seed);
    PruneConfig tc;
    tc.batch_size = 16;
    tc.eval_batch_count = 2;
    tc.seed = derive_seed(seed, "prune") + 1;
    const double e2 = prop1_error(tm, tds, 4, 1e-2, tc);
    const double e3 = prop1_error(tm, tds, 4, 1e-3, tc);
    const double e4 = prop1_error(tm, tds, 4, 1e-4, tc);
    add("prop1_decay_21", e3 / e2, 1.0, e3 < e2);
    add("prop1_decay_32", e4 / e3, 1.0, e4 < e3);
    const double zero = prop1_error(tm, tds, 0, 1e-3, tc);
    add("prop1_zero_steps", zero, 0.0, zero == 0.0);
  }
  {
    // Silencing a modality through its mask must equal physically zeroed
    // parameter values.
    FusionModel zeroed = pm.clone();
    for (Parameter* p : zeroed.partition_params(Partition::Camera))
      for (double& v : p->values.data) v = 0.0;
    const Batch val = pds.val_batch();
    const double diff = std::fabs(pm.masked_loss(val, 1.0, 0.0, 1.0) - zeroed.loss_on(val));
    add("mask_absorption", diff, 0.0, diff == 0.0);
  }
  {
    // Bookkeeping on the configured pipeline: per-partition shares must
    // renormalize to one, and the kept count must hit round((1-rho)*N).
    MultiModalDataset ds = make_dataset(cfg);
    FusionModel m = cfg.kind == DataKind::Planted
                        ? make_planted_scenario(cfg.seed, cfg.planted).model
                        : FusionModel::build(cfg.arch);
    PruneConfig prune_cfg = cfg.prune;
    prune_cfg.structured = false;
    PruneResult r = run_altermoma(m, ds, prune_cfg);

    std::map<Partition, double> deci_sum, rl_sum, rc_sum;
    for (const LedgerEntry& e : r.ledger.entries) {
      deci_sum[e.partition] += e.deci;
      if (e.reri_lidar_masked) rl_sum[e.partition] += *e.reri_lidar_masked;
      if (e.reri_camera_masked) rc_sum[e.partition] += *e.reri_camera_masked;
    }
    std::map<Partition, double> deci_share, rl_share, rc_share;
    for (const LedgerEntry& e : r.ledger.entries) {
      if (deci_sum[e.partition] > 0.0) deci_share[e.partition] += e.deci / deci_sum[e.partition];
      if (e.reri_lidar_masked && rl_sum[e.partition] > 0.0)
        rl_share[e.partition] += *e.reri_lidar_masked / rl_sum[e.partition];
      if (e.reri_camera_masked && rc_sum[e.partition] > 0.0)
        rc_share[e.partition] += *e.reri_camera_masked / rc_sum[e.partition];
    }
    double worst = 0.0;
    for (const auto& [part, total] : deci_share) worst = std::max(worst, std::fabs(total - 1.0));
    for (const auto& [part, total] : rl_share) worst = std::max(worst, std::fabs(total - 1.0));
    for (const auto& [part, total] : rc_share) worst = std::max(worst, std::fabs(total - 1.0));
    add("share_sums", worst, 1e-9, worst <= 1e-9);

    std::size_t kept = 0;
    for (const LedgerEntry& e : r.ledger.entries) kept += e.kept ? 1 : 0;
    const auto want = static_cast<std::size_t>(
        std::llround((1.0 - prune_cfg.rho) * static_cast<double>(r.total)));
    const bool exact = kept == r.k && r.k == want;
    add("kept_count", static_cast<double>(kept), static_cast<double>(want), exact);
  }

  bool all_pass = true;
  std::printf("check,seed,value,threshold,pass\n");
  for (const CheckRow& row : rows) {
    all_pass = all_pass && row.pass;
    std::printf("%s,%llu,%s,%s,%s\n", row.name.c_str(),
                static_cast<unsigned long long>(row.seed), fmt(row.value).c_str(),
                fmt(row.threshold).c_str(), row.pass ? "pass" : "fail");
  }
  std::printf("%s\n", run.hash_comment.c_str());
  if (!a.out.empty()) write_check_report(rows, a.out, run.hash_comment);
  return all_pass ? kOk : kVerifyFail;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"camera-lidar fusion pruning laboratory"};
  app.require_subcommand(1);
  CommonArgs args;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", args.config_path, "experiment config file")->required();
    sub->add_option("--seed", args.seed, "override [run] seed");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate a dataset file");
  add_common(gen);
  gen->add_option("--out", args.out, "dataset file to write")->required();
  gen->add_option("--csv", args.csv_path, "also dump the samples as CSV");

  CLI::App* pre = app.add_subcommand("pretrain", "build a model and pretrain its backbones");
  add_common(pre);
  pre->add_option("--out", args.out, "checkpoint to write")->required();
  pre->add_option("--data", args.data_path, "dataset file (default: regenerate from config)");

  CLI::App* fuse = app.add_subcommand("train-fusion", "train the fusion head of a checkpoint");
  add_common(fuse);
  fuse->add_option("--model-in", args.model_in, "checkpoint to start from")->required();
  fuse->add_option("--out", args.out, "checkpoint to write")->required();
  fuse->add_option("--data", args.data_path, "dataset file (default: regenerate from config)");

  CLI::App* prune = app.add_subcommand("prune", "score and mask a trained checkpoint");
  add_common(prune);
  prune->add_option("--model-in", args.model_in, "checkpoint to prune")->required();
  prune->add_option("--out", args.out, "pruned checkpoint to write")->required();
  prune->add_option("--method", args.method, "scoring method");
  prune->add_option("--rho", args.rho, "override pruning ratio");
  prune->add_flag("--structured", args.structured, "prune whole channels");
  prune->add_option("--ledger", args.ledger_path, "ledger CSV path (default: <out>.ledger.csv)");
  prune->add_option("--data", args.data_path, "dataset file (default: regenerate from config)");

  CLI::App* ablate = app.add_subcommand("ablate", "sweep the mixing ratio grid");
  add_common(ablate);
  ablate->add_option("--out", args.out, "ablation CSV to write")->required();
  ablate->add_option("--rho", args.rho, "override pruning ratio");

  CLI::App* gd = app.add_subcommand("graddiff-report",
                                    "camera saliency under camera-only vs fusion loss");
  add_common(gd);
  gd->add_option("--model-in", args.model_in, "checkpoint to analyze")->required();
  gd->add_option("--out", args.out, "report CSV to write")->required();
  gd->add_option("--data", args.data_path, "dataset file (default: regenerate from config)");

  CLI::App* verify = app.add_subcommand("verify", "run the oracle suite against the config");
  add_common(verify);
  verify->add_option("--out", args.out, "also write the check report CSV here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(args);
    if (pre->parsed()) return cmd_pretrain(args);
    if (fuse->parsed()) return cmd_train_fusion(args);
    if (prune->parsed()) return cmd_prune(args);
    if (ablate->parsed()) return cmd_ablate(args);
    if (gd->parsed()) return cmd_graddiff(args);
    if (verify->parsed()) return cmd_verify(args);
  } catch (const io_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kIo;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  }
  return kUsage;
}
