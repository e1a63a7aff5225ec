#include "trigait/workflow.hpp"

#include "trigait/binary_io.hpp"
#include "trigait/parallel.hpp"

#include <sstream>

namespace trigait::workflow {

namespace fs = std::filesystem;

SynthSummary synthesize(const fs::path& out, const data::SynthOptions& options) {
  if (options.subjects < 2) throw Error("synth: need at least 2 subjects, got " + std::to_string(options.subjects));
  if (out.empty()) throw Error("synth: output directory not given");
  const auto sequences = data::generate_sequences(options);
  data::write_dataset(out, sequences, options.seqs_per_view);
  return {sequences.size(), out / "manifest.tsv"};
}

ModelConfig model_for(const RunConfig& config, const data::DatasetReader& dataset) {
  ModelConfig m = config.model;
  m.num_classes = dataset.subjects().size();
  return m;
}

TrainSummary run_training(const RunConfig& config, bool resume, const std::function<void(const LogRow&)>& on_log) {
  if (const auto problems = validate_config(config); !problems.empty()) throw ConfigError(problems);
  if (config.dataset.empty()) throw Error("train: no dataset given");
  if (config.out.empty()) throw Error("train: no output directory given");
  set_num_threads(config.threads);
  const data::Dataset dataset = data::read_dataset(config.dataset);
  TriGaitModel model(model_for(config, dataset), config.train.seed);

  TrainOptions options = config.train;
  options.out_dir = config.out;
  const fs::path checkpoint = config.out / kCheckpointFile;
  long start = 0;
  if (resume) {
    if (!fs::exists(checkpoint)) throw Error(checkpoint.string() + ": no checkpoint to resume from");
    const auto records = read_checkpoint(checkpoint);
    restore_model(model, records, checkpoint.string());
    start = checkpoint_meta(records, checkpoint.string()).iteration;
  }
  const TrainResult r = train(model, dataset, options, start, on_log);
  return {r.first_iteration, r.end_iteration, r.log, checkpoint, config.out / kTrainLogFile};
}

std::string dump_ranges(const ModelConfig& model, const data::DatasetReader& dataset) {
  std::string out = "stem\tpart\tH_f\tH_e\trow_lo\trow_hi\n";
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto seq = dataset.load(i);
    const auto table = ranges_tsv(partition_ranges(model.partition, seq.skeleton, model.frame_size), body_parts());
    std::istringstream rows(table);
    std::string line;
    std::getline(rows, line);  // header
    while (std::getline(rows, line)) out += dataset.entries()[i].stem + "\t" + line + "\n";
  }
  return out;
}

void split_embeddings(const std::vector<Embedding>& all, std::vector<Embedding>& gallery, std::vector<Embedding>& probes) {
  for (const auto& e : all) (is_gallery(e.meta) ? gallery : probes).push_back(e);
}

TriGaitModel load_model(const RunConfig& config, const fs::path& checkpoint) {
  const auto records = read_checkpoint(checkpoint);
  ModelConfig mc = config.model;
  mc.num_classes = checkpoint_meta(records, checkpoint.string()).num_classes;
  TriGaitModel model(mc, config.train.seed);
  restore_model(model, records, checkpoint.string());
  return model;
}

EvalSummary run_evaluation(const RunConfig& config, const EvalOptions& options) {
  if (const auto problems = validate_config(config); !problems.empty()) throw ConfigError(problems);
  if (config.dataset.empty()) throw Error("eval: no dataset given");
  set_num_threads(config.threads);
  const data::Dataset dataset = data::read_dataset(config.dataset);
  TriGaitModel model = load_model(config, options.checkpoint.empty() ? config.out / kCheckpointFile : options.checkpoint);

  std::vector<Embedding> gallery, probes;
  split_embeddings(embed_all(model, dataset), gallery, probes);
  if (gallery.empty()) throw Error("eval: dataset has no gallery sequences (first 4 NM per subject and view)");
  EvalSummary s;
  RankOptions rank;
  if (options.gallery_as_probe) {
    probes = gallery;
    rank.cross_view = false;
  }
  s.gallery = gallery.size();
  s.probes = probes.size();
  s.report = rank1(gallery, probes, rank);
  if (!options.report_dir.empty()) {
    fs::create_directories(options.report_dir);
    io::write_file(options.report_dir / "report.tsv", report_tsv(s.report));
    io::write_file(options.report_dir / "report.md", report_markdown(s.report));
  }
  return s;
}

}  // namespace trigait::workflow
