#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "apnet/tensor.hpp"

namespace apnet {

inline constexpr char kCheckpointMagic[8] = {'A', 'P', 'N', 'E', 'T', 'v', '1', '\n'};

/// One checkpoint: a JSON header (plan, epoch, bookkeeping) followed by named
/// arrays with explicit shape headers (doubles, little-endian).
struct Checkpoint {
  nlohmann::json header;
  std::vector<std::pair<std::string, Tensor>> arrays;
};

/// Writes to `<path>.tmp` and renames, so a crash never leaves a partially
/// written checkpoint at the target path.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace apnet
