#pragma once

#include <span>
#include <string>

#include "nff/dense_nets.hpp"
#include "nff/field_flow.hpp"

namespace nff {

struct CheckpointMeta {
  std::string kind;
  std::string config_hash;
  std::string dataset_hash;
  std::size_t epoch = 0;
};

/// Writes `path` (JSON manifest: names, shapes, byte offsets, hashes, RNG
/// state, optimizer step, loss history) and `path + ".bin"` (little-endian
/// float64 blob with the parameters followed by the Adam moments).
void save_checkpoint(const std::string& path, const CheckpointMeta& meta, std::span<const NamedParam> params,
                     const TrainState& state);

/// Loads parameters by name into `params` (shapes must match) and, when
/// `state` is given, restores the optimizer, RNG and history.
CheckpointMeta load_checkpoint(const std::string& path, std::span<const NamedParam> params, TrainState* state);

/// Manifest fields only.
CheckpointMeta read_checkpoint_meta(const std::string& path);

}  // namespace nff
