#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "trigait/nn.hpp"

namespace trigait {

// Checkpoint layout (little-endian):
//   "TGCK" | u32 version | u32 record count |
//   per record: u32 name length | name bytes | u32 rank | u64 extents[rank] | f64 payload
struct CheckpointRecord {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const std::vector<CheckpointRecord>& records);
std::vector<CheckpointRecord> decode_checkpoint(const std::string& bytes, const std::string& origin = "<memory>");

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointRecord>& records);
std::vector<CheckpointRecord> read_checkpoint(const std::filesystem::path& path);

// Parameters, momentum buffers ("<name>.momentum") and running statistics.
std::vector<CheckpointRecord> module_state(Module& module);
// Every parameter and buffer of `module` must be present with a matching shape;
// momentum records are optional.
void load_module_state(Module& module, const std::vector<CheckpointRecord>& records);

const CheckpointRecord* find_record(const std::vector<CheckpointRecord>& records, const std::string& name);

}  // namespace trigait
