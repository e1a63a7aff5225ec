#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "trigait/model.hpp"
#include "trigait/train.hpp"

namespace trigait {

struct RunConfig {
  ModelConfig model;
  TrainOptions train;
  int threads = 1;
  bool miniature = false;
  std::filesystem::path dataset;
  std::filesystem::path out;
};

// Thrown when a configuration is rejected; what() lists every problem.
struct ConfigError : Error {
  explicit ConfigError(const std::vector<std::string>& problems);
  std::vector<std::string> problems;
};

// Full-size hyperparameters: 64x64 input, channels 32/64/128/128, n=8, r=16, 8 heads,
// 256-d parts, margin 0.2, lr 1e-4 -> 1e-5 at 30k, batch (8, 16, 30), 60k iterations.
RunConfig default_config();

// Desk-scale shapes: 16x16 frames, narrow channels, short batches. Training knobs are
// scaled so the synthetic set is learned within a few hundred iterations.
void apply_miniature(RunConfig& config);

// Ordered key/value assignments, as read from a file or given on the command line.
using Assignments = std::vector<std::pair<std::string, std::string>>;

// Parses `key = value` lines; `#` starts a comment. Syntax problems are collected and thrown together.
Assignments parse_config_text(const std::string& text, const std::string& origin = "<config>");
Assignments read_config_file(const std::filesystem::path& path);

// Full-size defaults, then the miniature set when `miniature` is true (or assigned true),
// then every assignment in order. Unknown keys, malformed values and inconsistent
// settings are all reported in one ConfigError.
RunConfig build_config(const Assignments& assignments, bool miniature = false);

// Every problem with a fully built configuration.
std::vector<std::string> validate_config(const RunConfig& config);

// All keys in `key = value` form; build_config(parse_config_text(to_text(c))) == c.
std::string config_text(const RunConfig& config);

const std::vector<std::string>& config_keys();

}  // namespace trigait
