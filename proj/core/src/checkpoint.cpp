#include "altermoma/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace altermoma {

namespace {

constexpr char kMagic[4] = {'A', 'M', 'M', 'L'};
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
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    bytes(b, 8);
  }
};

struct Reader {
  std::ifstream in;
  std::string path;
  std::size_t offset = 0;
  explicit Reader(const std::string& p) : in(p, std::ios::binary), path(p) {
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
  double f64() {
    unsigned char b[8];
    bytes(b, 8);
    std::uint64_t bits = 0;
    for (int i = 7; i >= 0; --i) bits = (bits << 8) | b[i];
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
};

}  // namespace

void write_checkpoint_records(const std::vector<ParamRecord>& records, const std::string& path) {
  Writer w(path);
  w.bytes(kMagic, 4);
  w.u16(kVersion);
  w.u32(static_cast<std::uint32_t>(records.size()));
  for (const ParamRecord& r : records) {
    if (r.mask.size() != r.values.size())
      throw std::invalid_argument("checkpoint: mask/value length mismatch for " + r.id);
    w.u32(static_cast<std::uint32_t>(r.id.size()));
    w.bytes(r.id.data(), r.id.size());
    const unsigned char part = static_cast<unsigned char>(r.partition);
    w.bytes(&part, 1);
    w.u32(static_cast<std::uint32_t>(r.shape.size()));
    for (std::size_t d : r.shape) w.u32(static_cast<std::uint32_t>(d));
    for (double v : r.values) w.f64(v);
    const std::size_t n = r.values.size();
    for (std::size_t byte = 0; byte < (n + 7) / 8; ++byte) {
      unsigned char packed = 0;
      for (std::size_t bit = 0; bit < 8; ++bit) {
        const std::size_t i = byte * 8 + bit;
        if (i < n && r.mask[i] != 0.0) packed |= static_cast<unsigned char>(1u << bit);
      }
      w.bytes(&packed, 1);
    }
  }
  if (!w.out) throw io_error("write failed for " + path);
}

std::vector<ParamRecord> read_checkpoint_records(const std::string& path) {
  Reader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw io_error(path + ": bad magic at byte offset 0 (not a checkpoint file)");
  const std::uint16_t version = r.u16();
  if (version != kVersion)
    throw io_error(path + ": unsupported version " + std::to_string(version) +
                   " at byte offset 4");
  const std::uint32_t count = r.u32();
  std::vector<ParamRecord> out;
  out.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    ParamRecord rec;
    const std::uint32_t id_len = r.u32();
    rec.id.resize(id_len);
    if (id_len > 0) r.bytes(rec.id.data(), id_len);
    unsigned char part;
    r.bytes(&part, 1);
    if (part > 2)
      throw io_error(path + ": invalid partition byte at offset " + std::to_string(r.offset - 1));
    rec.partition = static_cast<Partition>(part);
    const std::uint32_t rank = r.u32();
    std::size_t numel = rank == 0 ? 0 : 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint32_t d = r.u32();
      rec.shape.push_back(d);
      numel *= d;
    }
    rec.values.resize(numel);
    for (double& v : rec.values) v = r.f64();
    rec.mask.resize(numel);
    for (std::size_t byte = 0; byte < (numel + 7) / 8; ++byte) {
      unsigned char packed;
      r.bytes(&packed, 1);
      for (std::size_t bit = 0; bit < 8; ++bit) {
        const std::size_t i = byte * 8 + bit;
        if (i < numel) rec.mask[i] = (packed >> bit) & 1u ? 1.0 : 0.0;
      }
    }
    out.push_back(std::move(rec));
  }
  return out;
}

void save_checkpoint(const FusionModel& m, const std::string& path) {
  std::vector<ParamRecord> records;
  FusionModel& mm = const_cast<FusionModel&>(m);
  for (Parameter* p : mm.parameters()) {
    ParamRecord r;
    r.id = p->id;
    r.partition = p->partition;
    r.shape = p->values.shape;
    r.values = p->values.data;
    r.mask = p->mask;
    records.push_back(std::move(r));
  }
  write_checkpoint_records(records, path);
}

FusionModel load_checkpoint(const std::string& path, const ArchConfig& arch) {
  const std::vector<ParamRecord> records = read_checkpoint_records(path);
  FusionModel m = FusionModel::build(arch);
  std::size_t matched = 0;
  for (const ParamRecord& r : records) {
    Parameter* target = nullptr;
    for (Parameter* p : m.parameters()) {
      if (p->id == r.id) {
        target = p;
        break;
      }
    }
    if (target == nullptr) throw io_error(path + ": unexpected parameter " + r.id);
    if (target->values.shape != r.shape)
      throw io_error(path + ": shape mismatch for " + r.id + ": file has " + shape_str(r.shape) +
                     ", architecture wants " + shape_str(target->values.shape));
    if (target->partition != r.partition) throw io_error(path + ": partition mismatch for " + r.id);
    target->values.data = r.values;
    target->mask = r.mask;
    ++matched;
  }
  if (matched != m.parameters().size())
    throw io_error(path + ": file holds " + std::to_string(matched) + " of " +
                   std::to_string(m.parameters().size()) + " parameters");
  return m;
}

}  // namespace altermoma
