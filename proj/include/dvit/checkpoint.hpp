// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint file: magic "MVKD", version, entry count, name-sorted
// tensor entries, trailing CRC-32 of everything before it. All multi-byte
// fields little-endian. Run metadata (step counter, config fingerprint and
// the canonical config text) rides along as reserved "meta.*" entries.
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dvit/tensor.hpp"

namespace dvit {

struct Checkpoint {
  std::vector<std::pair<std::string, Tensor>> entries;  // parameters + optim state
  std::uint32_t step = 0;
  std::uint64_t fingerprint = 0;
  std::string config_text;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Serializes entries sorted by name. Rejects duplicate or "meta."-prefixed
// names (reserved). Write failures -> IoError with the path.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);

// Distinct failures: BadMagicError, VersionMismatchError, TruncatedFileError,
// ChecksumError; unreadable file -> IoError.
Checkpoint load_checkpoint(const std::string& path);

// CRC-32 (reflected 0xEDB88320 polynomial); crc32_of("123456789") is
// 0xCBF43926, which doubles as the self-test vector.
std::uint32_t crc32_of(const std::uint8_t* data, std::size_t len);

}  // namespace dvit
