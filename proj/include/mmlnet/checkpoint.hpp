#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mmlnet/config.hpp"
#include "mmlnet/core/matrix.hpp"
#include "mmlnet/core/params.hpp"

namespace mmlnet::checkpoint {

/// Parsed checkpoint: the full training config (so evaluation can rebuild the
/// model without a separate config file), its hash, the training seed, and
/// every named tensor bit-exactly.
struct CheckpointData {
  config::ExperimentConfig config;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, Matrix>> tensors;
};

/// Writes a versioned binary checkpoint. Tensor bytes round-trip exactly.
void save(const std::string& path, const config::ExperimentConfig& cfg, const ParamStore& store);

/// Reads and validates a checkpoint file (magic, version, stored hash against
/// the embedded config).
CheckpointData read(const std::string& path);

/// Copies tensors into an existing store by name. The store and checkpoint
/// must carry exactly the same names and shapes. A config-hash mismatch with
/// `expected_hash` is refused unless `force`.
void restore(const CheckpointData& data, ParamStore& store, const std::string& expected_hash,
             bool force = false);

}  // namespace mmlnet::checkpoint
