#pragma once

#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "udoc/model.hpp"

namespace udoc {

struct AdamState {
  ModelParams m;
  ModelParams v;
  long step = 0;  // completed optimizer steps
};

struct CheckpointMeta {
  long step = 0;
  Scalar tau = 2.0;
  Scalar best_loss = std::numeric_limits<Scalar>::infinity();
  long best_step = -1;
  std::string task = "pretrain";  // pretrain | entity | doc
};

// Extra named tensors saved alongside the model (fine-tuning heads).
struct NamedTensor {
  std::string name;
  Mat value;
};

// Layout: <dir>/manifest.json (format version, meta, config echo, tensor
// table with name/shape/dtype/offset) and <dir>/weights.bin (raw
// little-endian f64, concatenated in table order).
void save_checkpoint(const std::filesystem::path& dir, const ModelParams& params,
                     const AdamState* adam, const CheckpointMeta& meta, const KvConfig& config,
                     const std::vector<NamedTensor>& extra = {});

struct Checkpoint {
  ModelParams params;
  std::optional<AdamState> adam;
  CheckpointMeta meta;
  KvConfig config;
  std::vector<NamedTensor> extra;
};

Checkpoint load_checkpoint(const std::filesystem::path& dir);

// Human-readable tensor table (for the `inspect` subcommand).
std::string describe_checkpoint(const std::filesystem::path& dir);

}  // namespace udoc
