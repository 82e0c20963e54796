#pragma once

#include <string>
#include <vector>

#include "altermoma/model.hpp"

namespace altermoma {

struct ParamRecord {
  std::string id;
  Partition partition;
  std::vector<std::size_t> shape;
  std::vector<double> values;
  std::vector<double> mask;  // 0/1 flags, one per value
};

// Binary checkpoint, one record per parameter: id, partition, shape, raw
// little-endian f64 values, then the mask as packed bits. Round trips are
// bit-exact.
void write_checkpoint_records(const std::vector<ParamRecord>& records, const std::string& path);
std::vector<ParamRecord> read_checkpoint_records(const std::string& path);

void save_checkpoint(const FusionModel& m, const std::string& path);

// Rebuilds the architecture given by `arch` and fills it from the file;
// mismatched ids or shapes raise io_error.
FusionModel load_checkpoint(const std::string& path, const ArchConfig& arch);

}  // namespace altermoma
