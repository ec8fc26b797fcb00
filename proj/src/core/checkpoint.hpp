#pragma once

#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace rlfolio {

/// Checkpoint format: `<base>.manifest` is UTF-8 text, one line per tensor
/// (`name rank d0 ... dn byte_offset`), and `<base>.blob` is a single blob of
/// little-endian 64-bit floats in row-major, manifest order.
void save_checkpoint(const std::string& base_path, const std::vector<NamedTensor>& tensors);

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

std::vector<CheckpointEntry> load_checkpoint(const std::string& base_path);

/// Lookup helper; throws naming the missing entry.
const CheckpointEntry& find_entry(const std::vector<CheckpointEntry>& entries,
                                  const std::string& name);

}  // namespace rlfolio
