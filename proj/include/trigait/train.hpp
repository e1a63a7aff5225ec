#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "trigait/checkpoint.hpp"
#include "trigait/dataset.hpp"
#include "trigait/model.hpp"
#include "trigait/optim.hpp"

namespace trigait {

struct TrainOptions {
  data::BatchSpec batch;
  StepSchedule schedule;  // base 1e-4, x0.1 at 30000
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double margin = 0.2;
  long iterations = 60000;
  long log_every = 100;
  long checkpoint_every = 1000;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;  // empty: nothing written
};

struct LogRow {
  long iteration = 0;
  double lr = 0.0;
  LossReport loss;
};

inline constexpr const char* kTrainLogHeader = "iteration\tlr\tL_tri\tL_ce\tL\tactive_fraction";
std::string format_log_row(const LogRow& row);
std::vector<LogRow> parse_train_log(const std::string& text);

// Checkpoint = module state plus meta records (iteration, config hash, class count).
struct CheckpointMeta {
  long iteration = 0;
  std::uint64_t config_hash = 0;
  std::size_t num_classes = 0;
};

std::vector<CheckpointRecord> model_checkpoint(TriGaitModel& model, long iteration);
CheckpointMeta checkpoint_meta(const std::vector<CheckpointRecord>& records, const std::string& origin);
// Rejects a checkpoint whose config hash differs from the model's, naming both hashes.
void restore_model(TriGaitModel& model, const std::vector<CheckpointRecord>& records, const std::string& origin);

std::string hash_hex(std::uint64_t h);

struct TrainResult {
  long first_iteration = 0;
  long end_iteration = 0;  // one past the last iteration run
  std::vector<LogRow> log;
};

inline constexpr const char* kCheckpointFile = "checkpoint.tgck";
inline constexpr const char* kTrainLogFile = "train_log.tsv";

// Runs iterations [start_iteration, options.iterations). Subject ids map to classes via
// their rank in dataset.subjects(). Batch sampling is seeded per iteration, so a resumed
// run draws the same batches as an uninterrupted one.
TrainResult train(TriGaitModel& model, const data::DatasetReader& dataset, const TrainOptions& options,
                  long start_iteration = 0, const std::function<void(const LogRow&)>& on_log = {});

}  // namespace trigait
