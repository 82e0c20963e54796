#include "altermoma/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "altermoma/linalg.hpp"

namespace altermoma {

void ArchConfig::validate() const {
  const std::size_t dims[] = {in_lidar,  in_camera,  hidden_lidar, hidden_camera,
                              feat_lidar, feat_camera, fusion_hidden, out};
  for (std::size_t d : dims)
    if (d == 0) throw std::invalid_argument("ArchConfig: zero layer dimension");
}

std::string entry_id(const std::string& param_id, std::size_t flat_index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%06zu", flat_index);
  return param_id + buf;
}

namespace {

struct LayerSpec {
  const char* weight_id;
  const char* bias_id;
  Partition partition;
  std::size_t fan_in;
  std::size_t fan_out;
};

std::vector<LayerSpec> layer_specs(const ArchConfig& a) {
  return {
      {"lidar/l1/weight", "lidar/l1/bias", Partition::Lidar, a.in_lidar, a.hidden_lidar},
      {"lidar/l2/weight", "lidar/l2/bias", Partition::Lidar, a.hidden_lidar, a.feat_lidar},
      {"camera/l1/weight", "camera/l1/bias", Partition::Camera, a.in_camera, a.hidden_camera},
      {"camera/l2/weight", "camera/l2/bias", Partition::Camera, a.hidden_camera, a.feat_camera},
      {"fusion/l1/weight", "fusion/l1/bias", Partition::Fusion,
       a.feat_lidar + a.feat_camera, a.fusion_hidden},
      {"fusion/l2/weight", "fusion/l2/bias", Partition::Fusion, a.fusion_hidden, a.out},
  };
}

std::string channel_id(Partition p, int layer, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s/l%d/ch%04zu", partition_name(p), layer, index);
  return buf;
}

}  // namespace

FusionModel FusionModel::build(const ArchConfig& arch) {
  arch.validate();
  FusionModel m;
  m.arch_ = arch;

  Rng rng(arch.seed);
  for (const LayerSpec& spec : layer_specs(arch)) {
    const double s = std::sqrt(6.0 / static_cast<double>(spec.fan_in + spec.fan_out));
    Tensor w = Tensor::zeros({spec.fan_in, spec.fan_out});
    fill_uniform(rng, w.data, -s, s);
    Tensor b = Tensor::zeros({spec.fan_out});
    fill_uniform(rng, b.data, -s, s);
    m.params_.push_back(std::make_unique<Parameter>(spec.weight_id, spec.partition, std::move(w)));
    m.params_.push_back(std::make_unique<Parameter>(spec.bias_id, spec.partition, std::move(b)));
  }
  m.rebuild_graph();
  return m;
}

void FusionModel::rebuild_graph() {
  graph_ = Graph();
  auto p = [&](const char* id) { return graph_.param(&param(id)); };

  const int x_l = graph_.input("x_l");
  const int x_c = graph_.input("x_c");
  const int y = graph_.input("y");

  const int feat_l = graph_.relu(graph_.bias_add(
      graph_.matmul(graph_.relu(graph_.bias_add(graph_.matmul(x_l, p("lidar/l1/weight")),
                                                p("lidar/l1/bias"))),
                    p("lidar/l2/weight")),
      p("lidar/l2/bias")));
  const int feat_c = graph_.relu(graph_.bias_add(
      graph_.matmul(graph_.relu(graph_.bias_add(graph_.matmul(x_c, p("camera/l1/weight")),
                                                p("camera/l1/bias"))),
                    p("camera/l2/weight")),
      p("camera/l2/bias")));

  const int fused = graph_.concat(feat_l, feat_c);
  const int hidden = graph_.relu(
      graph_.bias_add(graph_.matmul(fused, p("fusion/l1/weight")), p("fusion/l1/bias")));
  pred_node_ =
      graph_.bias_add(graph_.matmul(hidden, p("fusion/l2/weight")), p("fusion/l2/bias"));

  const int loss = arch_.loss == LossKind::Mse ? graph_.mse(pred_node_, y)
                                               : graph_.softmax_xent(pred_node_, y);
  graph_.set_loss(loss);

  channels_.clear();
  const ArchConfig& a = arch_;
  struct ChLayer {
    Partition part;
    int layer;
    const char* w;
    const char* b;
    std::size_t fan_in, fan_out;
  };
  // The fusion output layer is deliberately absent: its channels are the task
  // outputs and are never pruning candidates.
  const ChLayer ch_layers[] = {
      {Partition::Lidar, 1, "lidar/l1/weight", "lidar/l1/bias", a.in_lidar, a.hidden_lidar},
      {Partition::Lidar, 2, "lidar/l2/weight", "lidar/l2/bias", a.hidden_lidar, a.feat_lidar},
      {Partition::Camera, 1, "camera/l1/weight", "camera/l1/bias", a.in_camera, a.hidden_camera},
      {Partition::Camera, 2, "camera/l2/weight", "camera/l2/bias", a.hidden_camera,
       a.feat_camera},
      {Partition::Fusion, 1, "fusion/l1/weight", "fusion/l1/bias",
       a.feat_lidar + a.feat_camera, a.fusion_hidden},
  };
  for (const ChLayer& cl : ch_layers) {
    for (std::size_t j = 0; j < cl.fan_out; ++j) {
      Channel ch;
      ch.id = channel_id(cl.part, cl.layer, j);
      ch.partition = cl.part;
      ch.weight_id = cl.w;
      ch.bias_id = cl.b;
      ch.index = j;
      ch.weight_flat_indices.reserve(cl.fan_in);
      for (std::size_t i = 0; i < cl.fan_in; ++i)
        ch.weight_flat_indices.push_back(i * cl.fan_out + j);
      channels_.push_back(std::move(ch));
    }
  }
}

std::vector<Parameter*> FusionModel::parameters() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<Parameter*> FusionModel::partition_params(Partition part) {
  std::vector<Parameter*> out;
  for (auto& p : params_)
    if (p->partition == part) out.push_back(p.get());
  return out;
}

Parameter& FusionModel::param(const std::string& id) {
  for (auto& p : params_)
    if (p->id == id) return *p;
  throw std::invalid_argument("unknown parameter id: " + id);
}

const Parameter& FusionModel::param(const std::string& id) const {
  for (const auto& p : params_)
    if (p->id == id) return *p;
  throw std::invalid_argument("unknown parameter id: " + id);
}

std::size_t FusionModel::n_entries() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->size();
  return n;
}

std::size_t FusionModel::kept_entries() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->kept_count();
  return n;
}

double FusionModel::loss_on(const Batch& b) {
  return graph_.forward({{"x_l", b.x_lidar}, {"x_c", b.x_camera}, {"y", b.y}});
}

GradMap FusionModel::grads_on(const Batch& b) {
  loss_on(b);
  return graph_.backward();
}

Tensor FusionModel::predict(const Tensor& x_lidar, const Tensor& x_camera) {
  Tensor y = Tensor::zeros({x_lidar.rows(), arch_.out});
  graph_.forward({{"x_l", x_lidar}, {"x_c", x_camera}, {"y", std::move(y)}});
  return graph_.nodes()[static_cast<std::size_t>(pred_node_)].value;
}

double FusionModel::masked_loss(const Batch& b, double mu_lidar, double mu_camera,
                                double mu_fusion) {
  if (mu_lidar == 0.0 && mu_camera == 0.0 && mu_fusion == 0.0) {
    throw std::invalid_argument("masked_loss: all three modality masks are zero");
  }
  ModalityMasks saved = graph_.modality();
  graph_.modality() = ModalityMasks{mu_lidar, mu_camera, mu_fusion};
  double loss;
  try {
    loss = loss_on(b);
  } catch (...) {
    graph_.modality() = saved;
    throw;
  }
  graph_.modality() = saved;
  return loss;
}

void FusionModel::snapshot() {
  snapshot_.clear();
  for (const auto& p : params_) snapshot_[p->id] = p->values.data;
}

void FusionModel::restore() {
  if (snapshot_.empty()) throw std::runtime_error("restore: no snapshot has been taken");
  for (auto& p : params_) p->values.data = snapshot_.at(p->id);
}

FusionModel FusionModel::clone() const {
  FusionModel copy = build(arch_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    copy.params_[i]->values.data = params_[i]->values.data;
    copy.params_[i]->mask = params_[i]->mask;
  }
  copy.graph_.modality() = graph_.modality();
  copy.snapshot_ = snapshot_;
  return copy;
}

const Channel& FusionModel::channel(const std::string& id) const {
  for (const Channel& ch : channels_)
    if (ch.id == id) return ch;
  throw std::invalid_argument("unknown channel id: " + id);
}

void FusionModel::set_channel_mask(const Channel& ch, bool keep) {
  Parameter& w = param(ch.weight_id);
  Parameter& b = param(ch.bias_id);
  const double bit = keep ? 1.0 : 0.0;
  for (std::size_t idx : ch.weight_flat_indices) w.mask[idx] = bit;
  b.mask[ch.index] = bit;
}

bool FusionModel::channel_kept(const Channel& ch) const {
  const Parameter& w = param(ch.weight_id);
  const Parameter& b = param(ch.bias_id);
  for (std::size_t idx : ch.weight_flat_indices)
    if (w.mask[idx] != 0.0) return true;
  return b.mask[ch.index] != 0.0;
}

std::size_t FusionModel::mac_count() const {
  std::size_t kept[5] = {0, 0, 0, 0, 0};
  for (const Channel& ch : channels_) {
    std::size_t slot;
    if (ch.weight_id == std::string("lidar/l1/weight")) slot = 0;
    else if (ch.weight_id == std::string("lidar/l2/weight")) slot = 1;
    else if (ch.weight_id == std::string("camera/l1/weight")) slot = 2;
    else if (ch.weight_id == std::string("camera/l2/weight")) slot = 3;
    else slot = 4;
    if (channel_kept(ch)) ++kept[slot];
  }
  const ArchConfig& a = arch_;
  return a.in_lidar * kept[0] + kept[0] * kept[1] + a.in_camera * kept[2] + kept[2] * kept[3] +
         (kept[1] + kept[3]) * kept[4] + kept[4] * a.out;
}

FusionModel compact_channels(const FusionModel& m) {
  const ArchConfig& a = m.arch_;
  std::vector<std::size_t> kept[5];
  for (const Channel& ch : m.channels_) {
    std::size_t slot;
    if (ch.weight_id == "lidar/l1/weight") slot = 0;
    else if (ch.weight_id == "lidar/l2/weight") slot = 1;
    else if (ch.weight_id == "camera/l1/weight") slot = 2;
    else if (ch.weight_id == "camera/l2/weight") slot = 3;
    else slot = 4;
    if (m.channel_kept(ch)) kept[slot].push_back(ch.index);
  }
  const char* names[5] = {"lidar/l1", "lidar/l2", "camera/l1", "camera/l2", "fusion/l1"};
  for (int i = 0; i < 5; ++i) {
    if (kept[i].empty())
      throw std::runtime_error(std::string("compact_channels: ") + names[i] +
                               " would lose all channels");
  }

  ArchConfig na = a;
  na.hidden_lidar = kept[0].size();
  na.feat_lidar = kept[1].size();
  na.hidden_camera = kept[2].size();
  na.feat_camera = kept[3].size();
  na.fusion_hidden = kept[4].size();
  FusionModel out = FusionModel::build(na);

  auto all = [](std::size_t n) {
    std::vector<std::size_t> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = i;
    return v;
  };
  auto copy_layer = [&](const char* wid, const char* bid, const std::vector<std::size_t>& in_sel,
                        const std::vector<std::size_t>& out_sel) {
    const Parameter& src_w = m.param(wid);
    const Parameter& src_b = m.param(bid);
    Parameter& dst_w = out.param(wid);
    Parameter& dst_b = out.param(bid);
    const std::size_t src_cols = src_w.values.cols();
    const std::size_t dst_cols = out_sel.size();
    for (std::size_t i = 0; i < in_sel.size(); ++i) {
      for (std::size_t j = 0; j < dst_cols; ++j) {
        dst_w.values.data[i * dst_cols + j] = src_w.values.data[in_sel[i] * src_cols + out_sel[j]];
        dst_w.mask[i * dst_cols + j] = src_w.mask[in_sel[i] * src_cols + out_sel[j]];
      }
    }
    for (std::size_t j = 0; j < dst_cols; ++j) {
      dst_b.values.data[j] = src_b.values.data[out_sel[j]];
      dst_b.mask[j] = src_b.mask[out_sel[j]];
    }
  };

  copy_layer("lidar/l1/weight", "lidar/l1/bias", all(a.in_lidar), kept[0]);
  copy_layer("lidar/l2/weight", "lidar/l2/bias", kept[0], kept[1]);
  copy_layer("camera/l1/weight", "camera/l1/bias", all(a.in_camera), kept[2]);
  copy_layer("camera/l2/weight", "camera/l2/bias", kept[2], kept[3]);

  std::vector<std::size_t> fusion_in;
  for (std::size_t i : kept[1]) fusion_in.push_back(i);
  for (std::size_t i : kept[3]) fusion_in.push_back(a.feat_lidar + i);
  copy_layer("fusion/l1/weight", "fusion/l1/bias", fusion_in, kept[4]);
  copy_layer("fusion/l2/weight", "fusion/l2/bias", kept[4], all(a.out));

  out.graph_.modality() = m.graph_.modality();
  return out;
}

// ============================================================================
// Training loops.
// ============================================================================

std::vector<EpochStats> pretrain_backbone(FusionModel& m, Partition modality,
                                          const MultiModalDataset& ds, int epochs, double lr,
                                          std::size_t batch_size, std::uint64_t seed) {
  if (modality != Partition::Lidar && modality != Partition::Camera)
    throw std::invalid_argument("pretrain_backbone: modality must be lidar or camera");
  if (epochs < 0) throw std::invalid_argument("pretrain_backbone: negative epoch count");
  if (epochs == 0) return {};

  const bool lidar = modality == Partition::Lidar;
  const std::size_t feat = lidar ? m.arch().feat_lidar : m.arch().feat_camera;
  const std::size_t d_aux = ds.y_aux_lidar().cols();

  Rng rng(seed);
  const double s = std::sqrt(6.0 / static_cast<double>(feat + d_aux));
  Tensor aw = Tensor::zeros({feat, d_aux});
  fill_uniform(rng, aw.data, -s, s);
  Tensor ab = Tensor::zeros({d_aux});
  fill_uniform(rng, ab.data, -s, s);
  Parameter aux_w("aux/weight", modality, std::move(aw));
  Parameter aux_b("aux/bias", modality, std::move(ab));

  const std::string prefix = partition_name(modality);
  Graph g;
  auto p = [&](const std::string& suffix) { return g.param(&m.param(prefix + suffix)); };
  const int x = g.input("x");
  const int y = g.input("y");
  const int feat_node = g.relu(g.bias_add(
      g.matmul(g.relu(g.bias_add(g.matmul(x, p("/l1/weight")), p("/l1/bias"))), p("/l2/weight")),
      p("/l2/bias")));
  const int pred = g.bias_add(g.matmul(feat_node, g.param(&aux_w)), g.param(&aux_b));
  g.set_loss(g.mse(pred, y));

  std::vector<Parameter*> trainable = m.partition_params(modality);
  trainable.push_back(&aux_w);
  trainable.push_back(&aux_b);

  std::vector<std::size_t> val_idx(ds.n_val());
  std::iota(val_idx.begin(), val_idx.end(), ds.n_train());
  const SingleModalBatch val = ds.single_modal_batch(modality, val_idx);

  IndexStream stream(ds.n_train(), batch_size, seed + 1);
  const std::size_t per_epoch = stream.batches_per_epoch();
  std::vector<EpochStats> epochs_out;
  epochs_out.reserve(static_cast<std::size_t>(epochs));
  for (int e = 0; e < epochs; ++e) {
    double acc = 0.0;
    for (std::size_t i = 0; i < per_epoch; ++i) {
      const SingleModalBatch b = ds.single_modal_batch(modality, stream.next());
      acc += g.forward({{"x", b.x}, {"y", b.y}});
      sgd_step(trainable, g.backward(), lr);
    }
    const double v = g.forward({{"x", val.x}, {"y", val.y}});
    epochs_out.push_back(EpochStats{acc / static_cast<double>(per_epoch), v});
  }
  return epochs_out;
}

namespace {

std::vector<EpochStats> sgd_train(FusionModel& m, const MultiModalDataset& ds, int epochs,
                                  double lr, std::size_t batch_size, std::uint64_t seed,
                                  const std::vector<Parameter*>& trainable, const char* what) {
  if (epochs < 0) throw std::invalid_argument(std::string(what) + ": negative epoch count");
  std::vector<EpochStats> log;
  if (epochs == 0) return log;
  const Batch val = ds.val_batch();
  IndexStream stream(ds.n_train(), batch_size, seed);
  const std::size_t per_epoch = stream.batches_per_epoch();
  log.reserve(static_cast<std::size_t>(epochs));
  for (int e = 0; e < epochs; ++e) {
    double acc = 0.0;
    for (std::size_t i = 0; i < per_epoch; ++i) {
      const Batch b = ds.train_batch(stream.next());
      acc += m.loss_on(b);
      sgd_step(trainable, m.graph().backward(), lr);
    }
    log.push_back(EpochStats{acc / static_cast<double>(per_epoch), m.loss_on(val)});
  }
  return log;
}

}  // namespace

std::vector<EpochStats> train_fusion(FusionModel& m, const MultiModalDataset& ds, int epochs,
                                     double lr, std::size_t batch_size, std::uint64_t seed,
                                     bool train_backbones) {
  std::vector<Parameter*> trainable =
      train_backbones ? m.parameters() : m.partition_params(Partition::Fusion);
  return sgd_train(m, ds, epochs, lr, batch_size, seed, trainable, "train_fusion");
}

std::vector<EpochStats> finetune(FusionModel& m, const MultiModalDataset& ds, int epochs,
                                 double lr, std::size_t batch_size, std::uint64_t seed) {
  return sgd_train(m, ds, epochs, lr, batch_size, seed, m.parameters(), "finetune");
}

}  // namespace altermoma
