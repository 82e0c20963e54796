#include "altermoma/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>

#include "altermoma/linalg.hpp"

namespace altermoma {

void GenConfig::validate() const {
  if (n_train == 0 || n_val == 0) throw std::invalid_argument("GenConfig: empty split");
  if (d_shared == 0 || d_lidar == 0 || d_camera == 0 || d_out == 0)
    throw std::invalid_argument("GenConfig: zero dimension");
  if (d_lidar < d_shared)
    throw std::invalid_argument("GenConfig: d_lidar must be >= d_shared for the mixing matrix");
  if (d_camera < d_shared + d_cam_only)
    throw std::invalid_argument("GenConfig: d_camera must be >= d_shared + d_cam_only");
  if (sigma_lidar < 0.0 || sigma_camera < 0.0) throw std::invalid_argument("GenConfig: negative sigma");
  if (sigma_lidar > sigma_camera)
    throw std::invalid_argument("GenConfig: the lidar view must not be noisier than the camera view");
}

// Fixed random 1-hidden-layer tanh network used for targets. Seeding is the
// caller's job; draws happen in construction order.
namespace {

struct TargetNet {
  std::size_t d_in, d_hidden, d_out;
  std::vector<double> w1, b1, w2, b2;

  TargetNet(Rng& rng, std::size_t in, std::size_t hidden, std::size_t out)
      : d_in(in), d_hidden(hidden), d_out(out) {
    w1.resize(in * hidden);
    b1.resize(hidden);
    w2.resize(hidden * out);
    b2.resize(out);
    fill_normal(rng, w1, 0.0, 1.0 / std::sqrt(static_cast<double>(in)));
    fill_normal(rng, b1, 0.0, 0.1);
    fill_normal(rng, w2, 0.0, 1.0 / std::sqrt(static_cast<double>(hidden)));
    fill_normal(rng, b2, 0.0, 0.1);
  }

  void eval(const double* x, double* out) const {
    std::vector<double> h(d_hidden);
    for (std::size_t j = 0; j < d_hidden; ++j) {
      double s = b1[j];
      for (std::size_t i = 0; i < d_in; ++i) s += x[i] * w1[i * d_hidden + j];
      h[j] = std::tanh(s);
    }
    for (std::size_t k = 0; k < d_out; ++k) {
      double s = b2[k];
      for (std::size_t j = 0; j < d_hidden; ++j) s += h[j] * w2[j * d_out + k];
      out[k] = s;
    }
  }
};

// Latents are the first draws from the data RNG, so the certificate can redo
// exactly this prefix of the stream without seeing the noise draws behind it.
void draw_latents(const GenConfig& cfg, Rng& rng, Tensor& z_s, Tensor& z_c) {
  z_s = Tensor::zeros({cfg.n_total(), cfg.d_shared});
  z_c = Tensor::zeros({cfg.n_total(), cfg.d_cam_only});
  fill_normal(rng, z_s.data);
  if (cfg.d_cam_only > 0) fill_normal(rng, z_c.data);
}

}  // namespace

MultiModalDataset MultiModalDataset::generate(const GenConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::size_t n = cfg.n_total();

  Rng mix_rng(cfg.mixing_seed);
  const Tensor A = orthonormal_columns(mix_rng, cfg.d_lidar, cfg.d_shared);
  const Tensor B = orthonormal_columns(mix_rng, cfg.d_camera, cfg.d_shared + cfg.d_cam_only);

  Rng data_rng(seed);
  Tensor z_s, z_c;
  draw_latents(cfg, data_rng, z_s, z_c);

  Tensor x_l = Tensor::zeros({n, cfg.d_lidar});
  Tensor x_c = Tensor::zeros({n, cfg.d_camera});
  std::vector<double> noise_l(n * cfg.d_lidar), noise_c(n * cfg.d_camera);
  fill_normal(data_rng, noise_l);
  fill_normal(data_rng, noise_c);

  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < cfg.d_lidar; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < cfg.d_shared; ++j) s += A.at(i, j) * z_s.at(r, j);
      x_l.at(r, i) = s + cfg.sigma_lidar * noise_l[r * cfg.d_lidar + i];
    }
    for (std::size_t i = 0; i < cfg.d_camera; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < cfg.d_shared; ++j) s += B.at(i, j) * z_s.at(r, j);
      for (std::size_t j = 0; j < cfg.d_cam_only; ++j)
        s += B.at(i, cfg.d_shared + j) * z_c.at(r, j);
      x_c.at(r, i) = s + cfg.sigma_camera * noise_c[r * cfg.d_camera + i];
    }
  }

  Rng target_rng(cfg.target_seed);
  const std::size_t h = 16;
  TargetNet g(target_rng, cfg.d_shared + cfg.d_cam_only, h, cfg.d_out);
  TargetNet h_l(target_rng, cfg.d_shared, h, cfg.d_out);
  TargetNet h_c(target_rng, cfg.d_shared + cfg.d_cam_only, h, cfg.d_out);

  Tensor y = Tensor::zeros({n, cfg.d_out});
  Tensor y_aux_l = Tensor::zeros({n, cfg.d_out});
  Tensor y_aux_c = Tensor::zeros({n, cfg.d_out});
  std::vector<double> zfull(cfg.d_shared + cfg.d_cam_only);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < cfg.d_shared; ++j) zfull[j] = z_s.at(r, j);
    for (std::size_t j = 0; j < cfg.d_cam_only; ++j) zfull[cfg.d_shared + j] = z_c.at(r, j);
    g.eval(zfull.data(), &y.data[r * cfg.d_out]);
    h_l.eval(&z_s.data[r * cfg.d_shared], &y_aux_l.data[r * cfg.d_out]);
    h_c.eval(zfull.data(), &y_aux_c.data[r * cfg.d_out]);
  }

  return from_arrays(cfg, seed, std::move(x_l), std::move(x_c), std::move(y), std::move(y_aux_l),
                     std::move(y_aux_c));
}

MultiModalDataset MultiModalDataset::from_arrays(GenConfig cfg, std::uint64_t data_seed,
                                                 Tensor x_l, Tensor x_c, Tensor y, Tensor y_aux_l,
                                                 Tensor y_aux_c) {
  MultiModalDataset ds;
  ds.cfg_ = cfg;
  ds.data_seed_ = data_seed;
  ds.x_l_ = std::move(x_l);
  ds.x_c_ = std::move(x_c);
  ds.y_ = std::move(y);
  ds.y_aux_l_ = std::move(y_aux_l);
  ds.y_aux_c_ = std::move(y_aux_c);
  return ds;
}

static Tensor gather_rows(const Tensor& src, const std::vector<std::size_t>& indices) {
  const std::size_t c = src.cols();
  Tensor out = Tensor::zeros({indices.size(), c});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    std::copy_n(&src.data[indices[r] * c], c, &out.data[r * c]);
  }
  return out;
}

Batch MultiModalDataset::train_batch(const std::vector<std::size_t>& indices) const {
  for (std::size_t i : indices) {
    if (i >= cfg_.n_train) throw std::invalid_argument("train_batch: index outside training split");
  }
  return Batch{gather_rows(x_l_, indices), gather_rows(x_c_, indices), gather_rows(y_, indices)};
}

SingleModalBatch MultiModalDataset::single_modal_batch(
    Partition modality, const std::vector<std::size_t>& indices) const {
  // Aux targets exist for every sample, so the validation split is fair game.
  for (std::size_t i : indices) {
    if (i >= cfg_.n_train + cfg_.n_val)
      throw std::invalid_argument("single_modal_batch: index out of range");
  }
  switch (modality) {
    case Partition::Lidar:
      return SingleModalBatch{gather_rows(x_l_, indices), gather_rows(y_aux_l_, indices)};
    case Partition::Camera:
      return SingleModalBatch{gather_rows(x_c_, indices), gather_rows(y_aux_c_, indices)};
    default:
      throw std::invalid_argument("single_modal_batch: modality must be lidar or camera");
  }
}

Batch MultiModalDataset::full_train_batch() const {
  std::vector<std::size_t> idx(cfg_.n_train);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return train_batch(idx);
}

Batch MultiModalDataset::val_batch() const {
  std::vector<std::size_t> idx(cfg_.n_val);
  std::iota(idx.begin(), idx.end(), cfg_.n_train);
  return Batch{gather_rows(x_l_, idx), gather_rows(x_c_, idx), gather_rows(y_, idx)};
}

RedundancyCertificate MultiModalDataset::redundancy_certificate() const {
  Rng data_rng(data_seed_);
  Tensor z_s, z_c;
  draw_latents(cfg_, data_rng, z_s, z_c);

  std::vector<std::size_t> idx(cfg_.n_train);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const Tensor z_train = gather_rows(z_s, idx);

  RedundancyCertificate cert;
  cert.mse_from_lidar = least_squares_mse(gather_rows(x_l_, idx), z_train);
  cert.mse_from_camera = least_squares_mse(gather_rows(x_c_, idx), z_train);
  return cert;
}

// ============================================================================
// Binary persistence.
//
// Layout: magic "AMDS", u16 version, the generator settings, then the five
// arrays in declaration order as little-endian f64. All integers little-endian.
// ============================================================================

namespace {

constexpr char kMagic[4] = {'A', 'M', 'D', 'S'};
constexpr std::uint16_t kVersion = 1;

struct Writer {
  std::ofstream out;
  explicit Writer(const std::string& path) : out(path, std::ios::binary) {
    if (!out) throw io_error("cannot open " + path + " for writing");
  }
  void bytes(const void* p, std::size_t n) { out.write(static_cast<const char*>(p), n); }
  void u16(std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    bytes(b, 2);
  }
  void u32(std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, 4);
  }
  void u64(std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, 8);
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }
  void f64_array(const std::vector<double>& v) {
    for (double x : v) f64(x);
  }
};

struct Reader {
  std::ifstream in;
  std::string path;
  std::size_t offset = 0;
  Reader(const std::string& p) : in(p, std::ios::binary), path(p) {
    if (!in) throw io_error("cannot open " + p + " for reading");
  }
  void bytes(void* p, std::size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) {
      throw io_error(path + ": truncated at byte offset " + std::to_string(offset));
    }
    offset += n;
  }
  std::uint16_t u16() {
    unsigned char b[2];
    bytes(b, 2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }
  std::uint32_t u32() {
    unsigned char b[4];
    bytes(b, 4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }
  std::uint64_t u64() {
    unsigned char b[8];
    bytes(b, 8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::vector<double> f64_array(std::size_t n) {
    std::vector<double> v(n);
    for (double& x : v) x = f64();
    return v;
  }
};

}  // namespace

void MultiModalDataset::save(const std::string& path) const {
  Writer w(path);
  w.bytes(kMagic, 4);
  w.u16(kVersion);
  w.u32(static_cast<std::uint32_t>(cfg_.n_train));
  w.u32(static_cast<std::uint32_t>(cfg_.n_val));
  w.u32(static_cast<std::uint32_t>(cfg_.d_shared));
  w.u32(static_cast<std::uint32_t>(cfg_.d_cam_only));
  w.u32(static_cast<std::uint32_t>(cfg_.d_lidar));
  w.u32(static_cast<std::uint32_t>(cfg_.d_camera));
  w.u32(static_cast<std::uint32_t>(cfg_.d_out));
  w.f64(cfg_.sigma_lidar);
  w.f64(cfg_.sigma_camera);
  w.u64(cfg_.mixing_seed);
  w.u64(cfg_.target_seed);
  w.u64(data_seed_);
  w.f64_array(x_l_.data);
  w.f64_array(x_c_.data);
  w.f64_array(y_.data);
  w.f64_array(y_aux_l_.data);
  w.f64_array(y_aux_c_.data);
  if (!w.out) throw io_error("write failed for " + path);
}

MultiModalDataset MultiModalDataset::load(const std::string& path) {
  Reader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw io_error(path + ": bad magic at byte offset 0 (not a dataset file)");
  }
  const std::uint16_t version = r.u16();
  if (version != kVersion) {
    throw io_error(path + ": unsupported version " + std::to_string(version) +
                   " at byte offset 4");
  }
  GenConfig cfg;
  cfg.n_train = r.u32();
  cfg.n_val = r.u32();
  cfg.d_shared = r.u32();
  cfg.d_cam_only = r.u32();
  cfg.d_lidar = r.u32();
  cfg.d_camera = r.u32();
  cfg.d_out = r.u32();
  cfg.sigma_lidar = r.f64();
  cfg.sigma_camera = r.f64();
  cfg.mixing_seed = r.u64();
  cfg.target_seed = r.u64();
  const std::uint64_t data_seed = r.u64();
  const std::size_t n = cfg.n_total();
  Tensor x_l = Tensor::from({n, cfg.d_lidar}, r.f64_array(n * cfg.d_lidar));
  Tensor x_c = Tensor::from({n, cfg.d_camera}, r.f64_array(n * cfg.d_camera));
  Tensor y = Tensor::from({n, cfg.d_out}, r.f64_array(n * cfg.d_out));
  Tensor y_aux_l = Tensor::from({n, cfg.d_out}, r.f64_array(n * cfg.d_out));
  Tensor y_aux_c = Tensor::from({n, cfg.d_out}, r.f64_array(n * cfg.d_out));
  return from_arrays(cfg, data_seed, std::move(x_l), std::move(x_c), std::move(y),
                     std::move(y_aux_l), std::move(y_aux_c));
}

void MultiModalDataset::to_csv(const std::string& path, const std::string& trailing_comment) const {
  std::ofstream out(path);
  if (!out) throw io_error("cannot open " + path + " for writing");
  for (std::size_t j = 0; j < cfg_.d_lidar; ++j) out << (j ? "," : "") << "x_l" << j;
  for (std::size_t j = 0; j < cfg_.d_camera; ++j) out << ",x_c" << j;
  for (std::size_t j = 0; j < cfg_.d_out; ++j) out << ",y" << j;
  out << "\n";
  char buf[32];
  auto emit = [&](double v, bool first) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    if (!first) out << ",";
    out << buf;
  };
  for (std::size_t r = 0; r < cfg_.n_total(); ++r) {
    for (std::size_t j = 0; j < cfg_.d_lidar; ++j) emit(x_l_.at(r, j), j == 0);
    for (std::size_t j = 0; j < cfg_.d_camera; ++j) emit(x_c_.at(r, j), false);
    for (std::size_t j = 0; j < cfg_.d_out; ++j) emit(y_.at(r, j), false);
    out << "\n";
  }
  if (!trailing_comment.empty()) out << trailing_comment << "\n";
  if (!out) throw io_error("write failed for " + path);
}

IndexStream::IndexStream(std::size_t n, std::size_t batch_size, std::uint64_t seed)
    : n_(n), batch_size_(batch_size), rng_(seed) {
  if (n == 0) throw std::invalid_argument("IndexStream: empty index range");
  if (batch_size == 0) throw std::invalid_argument("IndexStream: zero batch size");
  perm_.resize(n);
  std::iota(perm_.begin(), perm_.end(), std::size_t{0});
  reshuffle();
}

void IndexStream::reshuffle() {
  std::shuffle(perm_.begin(), perm_.end(), rng_);
  cursor_ = 0;
}

std::vector<std::size_t> IndexStream::next() {
  if (cursor_ >= n_) reshuffle();
  const std::size_t take = std::min(batch_size_, n_ - cursor_);
  std::vector<std::size_t> out(perm_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                               perm_.begin() + static_cast<std::ptrdiff_t>(cursor_ + take));
  cursor_ += take;
  return out;
}

std::size_t IndexStream::batches_per_epoch() const { return (n_ + batch_size_ - 1) / batch_size_; }

std::vector<Batch> batches(const MultiModalDataset& ds, std::size_t batch_size, std::uint64_t seed,
                           std::size_t count) {
  IndexStream stream(ds.n_train(), batch_size, seed);
  std::vector<Batch> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(ds.train_batch(stream.next()));
  return out;
}

std::vector<SingleModalBatch> single_modal_batches(const MultiModalDataset& ds, Partition modality,
                                                   std::size_t batch_size, std::uint64_t seed,
                                                   std::size_t count) {
  IndexStream stream(ds.n_train(), batch_size, seed);
  std::vector<SingleModalBatch> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(ds.single_modal_batch(modality, stream.next()));
  return out;
}

Tensor onehot_argmax(const Tensor& y) {
  Tensor out = Tensor::zeros(y.shape);
  const std::size_t C = y.cols();
  for (std::size_t r = 0; r < y.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c)
      if (y.at(r, c) > y.at(r, best)) best = c;
    out.at(r, best) = 1.0;
  }
  return out;
}

}  // namespace altermoma
