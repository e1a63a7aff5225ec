#include "trigait/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace trigait {

namespace fs = std::filesystem;

std::string format_log_row(const LogRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%ld\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g", r.iteration, r.lr, r.loss.l_tri, r.loss.l_ce,
                r.loss.l, r.loss.active_fraction);
  return buf;
}

std::vector<LogRow> parse_train_log(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<LogRow> rows;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line == kTrainLogHeader) continue;
    std::istringstream fields(line);
    LogRow r;
    if (!(fields >> r.iteration >> r.lr >> r.loss.l_tri >> r.loss.l_ce >> r.loss.l >> r.loss.active_fraction)) {
      throw Error("train log line " + std::to_string(line_no) + ": malformed row");
    }
    rows.push_back(r);
  }
  return rows;
}

std::string hash_hex(std::uint64_t h) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<CheckpointRecord> model_checkpoint(TriGaitModel& model, long iteration) {
  auto records = module_state(model);
  const std::uint64_t h = model_config_hash(model.config);
  // f64 payloads hold integers exactly up to 2^53, so the hash goes in two 32-bit halves.
  records.push_back({"meta.iteration", {1}, {static_cast<double>(iteration)}});
  records.push_back({"meta.config_hash", {2}, {static_cast<double>(h >> 32), static_cast<double>(h & 0xffffffffULL)}});
  records.push_back({"meta.num_classes", {1}, {static_cast<double>(model.config.num_classes)}});
  return records;
}

CheckpointMeta checkpoint_meta(const std::vector<CheckpointRecord>& records, const std::string& origin) {
  auto need = [&](const char* name, std::size_t count) -> const CheckpointRecord& {
    const CheckpointRecord* r = find_record(records, name);
    if (!r || r->data.size() != count) throw Error(origin + ": checkpoint lacks a valid '" + name + "' record");
    return *r;
  };
  CheckpointMeta m;
  m.iteration = static_cast<long>(need("meta.iteration", 1).data[0]);
  const auto& h = need("meta.config_hash", 2).data;
  m.config_hash = (static_cast<std::uint64_t>(h[0]) << 32) | static_cast<std::uint64_t>(h[1]);
  m.num_classes = static_cast<std::size_t>(need("meta.num_classes", 1).data[0]);
  return m;
}

void restore_model(TriGaitModel& model, const std::vector<CheckpointRecord>& records, const std::string& origin) {
  const CheckpointMeta meta = checkpoint_meta(records, origin);
  const std::uint64_t expected = model_config_hash(model.config);
  if (meta.config_hash != expected) {
    throw Error(origin + ": checkpoint config hash " + hash_hex(meta.config_hash) + " does not match configuration hash " +
                hash_hex(expected));
  }
  if (meta.num_classes != model.config.num_classes) {
    throw Error(origin + ": checkpoint has " + std::to_string(meta.num_classes) + " classes, model has " +
                std::to_string(model.config.num_classes));
  }
  load_module_state(model, records);
}

TrainResult train(TriGaitModel& model, const data::DatasetReader& dataset, const TrainOptions& o, long start_iteration,
                  const std::function<void(const LogRow&)>& on_log) {
  if (o.iterations < 0 || start_iteration < 0) throw Error("train: iteration counts must be non-negative");
  if (o.log_every <= 0 || o.checkpoint_every <= 0) throw Error("train: log and checkpoint intervals must be positive");
  const auto subjects = dataset.subjects();
  if (subjects.size() > model.config.num_classes) {
    throw Error("train: dataset has " + std::to_string(subjects.size()) + " subjects but the classifier has " +
                std::to_string(model.config.num_classes) + " classes");
  }
  auto class_of = [&](std::uint32_t subject) {
    return static_cast<std::uint32_t>(std::lower_bound(subjects.begin(), subjects.end(), subject) - subjects.begin());
  };

  std::ofstream log;
  if (!o.out_dir.empty()) {
    fs::create_directories(o.out_dir);
    const fs::path path = o.out_dir / kTrainLogFile;
    const bool append = start_iteration > 0 && fs::exists(path);
    log.open(path, append ? std::ios::app : std::ios::trunc);
    if (!log) throw Error(path.string() + ": cannot open for writing");
    if (!append) log << kTrainLogHeader << '\n';
  }
  auto save = [&](long next_iteration) {
    if (o.out_dir.empty()) return;
    write_checkpoint(o.out_dir / kCheckpointFile, model_checkpoint(model, next_iteration));
  };

  const auto params = model.parameters();
  TrainResult result;
  result.first_iteration = start_iteration;
  result.end_iteration = start_iteration;
  for (long it = start_iteration; it < o.iterations; ++it) {
    Rng rng(mix_seed(o.seed, static_cast<std::uint64_t>(it)));
    const data::Batch batch = data::sample_batch(dataset, o.batch, rng);
    std::vector<std::uint32_t> labels;
    for (std::uint32_t s : batch.labels) labels.push_back(class_of(s));

    model.zero_grad();
    const ModelOutput out = model.forward(prepare_inputs(batch.sequences, model.config), NormMode::Train);
    const LossTerms loss = combined_loss(out.embedding, labels, model.classifier, o.margin);
    if (!std::isfinite(loss.report.l)) {
      throw Error("training diverged: non-finite loss at iteration " + std::to_string(it));
    }
    loss.total.backward();
    const double lr = o.schedule.at(it);
    sgd_step(params, SgdOptions{lr, o.momentum, o.weight_decay});

    const LogRow row{it, lr, loss.report};
    if (it % o.log_every == 0 || it + 1 == o.iterations) {
      result.log.push_back(row);
      if (log) log << format_log_row(row) << '\n' << std::flush;
      if (on_log) on_log(row);
    }
    result.end_iteration = it + 1;
    if ((it + 1) % o.checkpoint_every == 0 && it + 1 < o.iterations) save(it + 1);
  }
  save(result.end_iteration);
  return result;
}

}  // namespace trigait
