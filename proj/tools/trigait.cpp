#include <malloc.h>

#include <cstdio>
#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "trigait/binary_io.hpp"
#include "trigait/checks.hpp"
#include "trigait/workflow.hpp"

namespace {

using namespace trigait;

struct ModelFlags {
  std::string config_file;
  std::vector<std::string> sets;
  bool miniature = false;
  std::string partition_mode;
  std::string dataset;
  std::string out;
  long iterations = -1;
  std::uint64_t seed = 0;
  int threads = 0;
};

void add_model_flags(CLI::App* cmd, ModelFlags& f) {
  cmd->add_option("--config", f.config_file, "Config file with 'key = value' lines ('#' comments)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--set", f.sets, "Override one config key, e.g. --set lr=0.01 (repeatable)");
  cmd->add_flag("--miniature", f.miniature, "Use the desk-scale shape set (16x16 frames, narrow channels)");
  cmd->add_option("--partition-mode", f.partition_mode, "Silhouette part rows: motion (default) or uniform bands")
      ->check(CLI::IsMember({"motion", "uniform"}));
  cmd->add_option("--seed", f.seed, "Seed for initialization and batch sampling (default: TRIGAIT_SEED or 0)");
  cmd->add_option("--threads", f.threads, "Worker threads; 1 is fully deterministic (default 1)")
      ->check(CLI::PositiveNumber);
}

// Precedence: flags, then the config file, then TRIGAIT_SEED, then built-in defaults.
RunConfig resolve(CLI::App* cmd, const ModelFlags& f) {
  Assignments a;
  if (const char* env = std::getenv("TRIGAIT_SEED")) a.emplace_back("seed", env);
  if (!f.config_file.empty()) {
    const auto file = read_config_file(f.config_file);
    a.insert(a.end(), file.begin(), file.end());
  }
  std::vector<std::string> problems;
  for (const auto& s : f.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      problems.push_back("--set '" + s + "': expected key=value");
      continue;
    }
    auto trim = [](std::string v) {
      v.erase(0, v.find_first_not_of(' '));
      v.erase(v.find_last_not_of(' ') + 1);
      return v;
    };
    a.emplace_back(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  if (!problems.empty()) throw ConfigError(problems);
  if (!f.partition_mode.empty()) a.emplace_back("partition_mode", f.partition_mode);
  if (!f.dataset.empty()) a.emplace_back("dataset", f.dataset);
  if (!f.out.empty()) a.emplace_back("out", f.out);
  if (auto* it = cmd->get_option_no_throw("--iterations"); it && it->count()) a.emplace_back("iterations", std::to_string(f.iterations));
  if (cmd->count("--seed")) a.emplace_back("seed", std::to_string(f.seed));
  if (cmd->count("--threads")) a.emplace_back("threads", std::to_string(f.threads));
  return build_config(a, f.miniature);
}

int cmd_synth(CLI::App* cmd, const std::string& out, const data::SynthOptions& base) {
  data::SynthOptions o = base;
  if (!cmd->count("--seed")) {
    if (const char* env = std::getenv("TRIGAIT_SEED")) {
      try {
        o.seed = std::stoull(env);
      } catch (const std::exception&) {
        throw Error(std::string("TRIGAIT_SEED: not an unsigned integer: '") + env + "'");
      }
    }
  }
  const auto s = workflow::synthesize(out, o);
  std::cout << "wrote " << s.sequences << " sequences to " << out << "\n";
  return 0;
}

int cmd_train(CLI::App* cmd, const ModelFlags& f, bool resume, bool quiet) {
  const RunConfig config = resolve(cmd, f);
  const auto s = workflow::run_training(config, resume, [&](const LogRow& r) {
    if (!quiet) std::cerr << format_log_row(r) << "\n";
  });
  std::cout << "trained iterations " << s.first_iteration << ".." << s.end_iteration << "\n";
  if (!s.log.empty()) {
    const auto& last = s.log.back().loss;
    std::printf("final L_tri %.6g L_ce %.6g L %.6g active %.4f\n", last.l_tri, last.l_ce, last.l, last.active_fraction);
  }
  std::cout << "checkpoint " << s.checkpoint.string() << "\nlog " << s.log_file.string() << "\n";
  return 0;
}

int cmd_eval(CLI::App* cmd, const ModelFlags& f, const std::string& checkpoint, const std::string& report_dir,
             bool gallery_as_probe, const std::string& ranges_file) {
  const RunConfig config = resolve(cmd, f);
  if (!ranges_file.empty()) {
    const data::Dataset ds = data::read_dataset(config.dataset);
    io::write_file(ranges_file, workflow::dump_ranges(config.model, ds));
  }
  workflow::EvalOptions o;
  o.checkpoint = checkpoint;
  o.report_dir = report_dir.empty() ? config.out : std::filesystem::path(report_dir);
  o.gallery_as_probe = gallery_as_probe;
  const auto s = workflow::run_evaluation(config, o);
  std::cout << "gallery " << s.gallery << " probes " << s.probes << "\n" << report_summary(s.report);
  return 0;
}

int cmd_check(const std::vector<std::string>& only) {
  const auto results = run_checks(only);
  std::size_t passed = 0;
  for (const auto& r : results) {
    passed += r.passed;
    std::cout << (r.passed ? "PASS" : "FAIL") << "  " << r.group << ": " << r.name;
    if (!r.detail.empty()) std::cout << " (" << r.detail << ")";
    std::cout << "\n";
  }
  std::cout << "summary: " << passed << " passed, " << results.size() - passed << " failed\n";
  return passed == results.size() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  // Training allocates and frees large activation buffers every iteration; keep them
  // on the heap instead of round-tripping through mmap.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  CLI::App app{"trigait: synthetic gait data, tri-branch model training and rank-1 evaluation"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  std::string synth_out;
  data::SynthOptions synth_options;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--subjects", synth_options.subjects, "Number of subjects (at least 2)")->capture_default_str();
  synth->add_option("--views", synth_options.views, "Camera views, 18 degrees apart (1..11)")->capture_default_str();
  synth->add_option("--seqs-per-view", synth_options.seqs_per_view, "Sequences per view (split 60/20/20 NM/BG/CL)")
      ->capture_default_str();
  synth->add_option("--frames", synth_options.frames, "Frames per sequence")->capture_default_str();
  synth->add_option("--seed", synth_options.seed, "Seed (default: TRIGAIT_SEED or 0)");

  auto* train = app.add_subcommand("train", "Train a model on a dataset");
  ModelFlags train_flags;
  bool resume = false, quiet = false;
  train->add_option("--dataset", train_flags.dataset, "Dataset directory (with manifest.tsv)");
  train->add_option("--out", train_flags.out, "Output directory for checkpoint.tgck and train_log.tsv");
  train->add_option("--iterations", train_flags.iterations, "Total iterations (overrides the config)");
  train->add_flag("--resume", resume, "Continue from the checkpoint in --out");
  train->add_flag("--quiet", quiet, "Do not echo log rows to standard error");
  add_model_flags(train, train_flags);

  auto* eval = app.add_subcommand("eval", "Rank-1 evaluation of a checkpoint");
  ModelFlags eval_flags;
  std::string checkpoint, report_dir, ranges_file;
  bool gallery_as_probe = false;
  eval->add_option("--dataset", eval_flags.dataset, "Dataset directory (with manifest.tsv)");
  eval->add_option("--out", eval_flags.out, "Training output directory (default checkpoint location)");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file (default: <out>/checkpoint.tgck)");
  eval->add_option("--report-dir", report_dir, "Where report.tsv and report.md go (default: --out)");
  eval->add_flag("--gallery-as-probe", gallery_as_probe, "Use the gallery as probes (identical-view sanity run)");
  eval->add_option("--dump-ranges", ranges_file, "Write per-sequence part row ranges as TSV to this file");
  add_model_flags(eval, eval_flags);

  auto* check = app.add_subcommand("check", "Run the built-in property and oracle checks");
  std::vector<std::string> only;
  check->add_option("--only", only, "Run only these groups: grad branches softmax sigmoid gem jsa attention alignment triplet rank1");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*synth) return cmd_synth(synth, synth_out, synth_options);
    if (*train) return cmd_train(train, train_flags, resume, quiet);
    if (*eval) return cmd_eval(eval, eval_flags, checkpoint, report_dir, gallery_as_probe, ranges_file);
    if (*check) return cmd_check(only);
  } catch (const std::exception& e) {
    std::cerr << "trigait: error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
