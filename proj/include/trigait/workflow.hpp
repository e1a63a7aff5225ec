#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "trigait/config.hpp"
#include "trigait/dataset.hpp"
#include "trigait/eval.hpp"
#include "trigait/train.hpp"

// End-to-end steps shared by the command-line tool and the Python module.
namespace trigait::workflow {

struct SynthSummary {
  std::size_t sequences = 0;
  std::filesystem::path manifest;
};

// Rejects fewer than 2 subjects and unwritable output paths.
SynthSummary synthesize(const std::filesystem::path& out, const data::SynthOptions& options);

// Model sized for the dataset: num_classes = number of distinct subjects.
ModelConfig model_for(const RunConfig& config, const data::DatasetReader& dataset);

struct TrainSummary {
  long first_iteration = 0;
  long end_iteration = 0;
  std::vector<LogRow> log;
  std::filesystem::path checkpoint;
  std::filesystem::path log_file;
};

// Reads config.dataset, trains into config.out. With `resume`, an existing checkpoint in
// config.out is restored and its iteration counter continued.
TrainSummary run_training(const RunConfig& config, bool resume = false,
                          const std::function<void(const LogRow&)>& on_log = {});

struct EvalOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path report_dir;  // report.tsv and report.md; empty: not written
  bool gallery_as_probe = false;     // probes = gallery, identical-view cells only
};

struct EvalSummary {
  EvalReport report;
  std::size_t gallery = 0;
  std::size_t probes = 0;
};

// Model shaped by `config` with the class count and weights of `checkpoint`.
TriGaitModel load_model(const RunConfig& config, const std::filesystem::path& checkpoint);

EvalSummary run_evaluation(const RunConfig& config, const EvalOptions& options);

// Part ranges of every sequence: "stem\tpart\tH_f\tH_e\trow_lo\trow_hi" rows.
std::string dump_ranges(const ModelConfig& model, const data::DatasetReader& dataset);

// Gallery/probe split of a set of embeddings.
void split_embeddings(const std::vector<Embedding>& all, std::vector<Embedding>& gallery, std::vector<Embedding>& probes);

}  // namespace trigait::workflow
