#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "trigait/dataset.hpp"
#include "trigait/model.hpp"

namespace trigait {

struct Embedding {
  synth::SequenceMeta meta;
  std::size_t dim = 0;
  std::size_t parts = 0;
  std::vector<double> values;  // [dim, parts]
};

// Eval-mode forward of every dataset entry, one sequence at a time.
std::vector<Embedding> embed_all(TriGaitModel& model, const data::DatasetReader& dataset);

// Sum over parts of the Euclidean distance between part vectors.
double part_distance(const Embedding& a, const Embedding& b);

// Gallery: the first 4 NM sequences of each subject at every view.
bool is_gallery(const synth::SequenceMeta& meta);

inline constexpr std::size_t kConditions = 3;

struct EvalCell {
  std::size_t probes = 0;
  std::size_t correct = 0;
  bool present() const { return probes > 0; }
  double accuracy() const { return probes ? static_cast<double>(correct) / static_cast<double>(probes) : 0.0; }
};

struct EvalReport {
  std::vector<std::uint32_t> views;  // ascending
  // cells[condition][probe_view_index * views + gallery_view_index]
  std::array<std::vector<EvalCell>, kConditions> cells;

  const EvalCell& cell(std::size_t condition, std::size_t probe_view, std::size_t gallery_view) const;
  // Mean over gallery views other than the probe view; NaN when no such cell exists.
  double probe_view_mean(std::size_t condition, std::size_t probe_view) const;
  // Mean over every present off-diagonal cell; NaN when none.
  double condition_mean(std::size_t condition) const;
  // Mean of the available condition means.
  double overall_mean() const;
  // Number of cells that enter condition_mean.
  std::size_t counted_cells(std::size_t condition) const;
};

struct RankOptions {
  // When false only identical-view cells are filled (gallery-as-probe sanity runs).
  bool cross_view = true;
};

// Nearest gallery entry within each gallery view; ties go to the lowest gallery index.
EvalReport rank1(const std::vector<Embedding>& gallery, const std::vector<Embedding>& probes,
                 const RankOptions& options = {});

// One row per cell: condition, probe_view, gallery_view, probes, correct.
std::string report_tsv(const EvalReport& report);
EvalReport parse_report_tsv(const std::string& text);
// Per condition a view table (11 view columns + Mean), then the condition summary.
std::string report_markdown(const EvalReport& report);
// "NM 97.3\nBG ...\nCL ...\nMean ..." with one decimal; "-" marks an absent mean.
std::string report_summary(const EvalReport& report);

}  // namespace trigait
