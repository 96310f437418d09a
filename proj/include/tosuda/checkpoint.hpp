#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tosuda/tensor.hpp"

namespace tosuda {

// Named-tensor archive. Layout, all integers little-endian:
//   "TOSU" | version u32 | count u32 |
//   per tensor: name_len u16 | name bytes | rank u8 |
//               extents u32 each | payload f64 little-endian
// Loads refuse unknown versions outright; nothing is partially loaded.
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Corrupt or incompatible checkpoint content (its own type so the CLI
/// can map it to a dedicated exit code).
struct CheckpointError : FormatError {
  using FormatError::FormatError;
};

void save_checkpoint(const std::string& path,
                     std::span<const NamedTensor> tensors);

/// CheckpointError on bad magic, unknown version, or truncation; IoError
/// if the file cannot be opened.
std::vector<NamedTensor> load_checkpoint(const std::string& path);

/// First tensor with the given name, or nullptr.
const NamedTensor* find_tensor(std::span<const NamedTensor> tensors,
                               const std::string& name);

/// Copies values from `loaded` into every tensor of `own`, matched by
/// name; FormatError on a missing name or shape mismatch.
void load_into(std::span<NamedTensor> own,
               std::span<const NamedTensor> loaded);

/// Subset whose names start with `prefix`.
std::vector<NamedTensor> filter_prefix(std::span<const NamedTensor> tensors,
                                       const std::string& prefix);

}  // namespace tosuda
