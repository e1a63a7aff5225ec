#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "trigait/binary_io.hpp"
#include "trigait/config.hpp"
#include "trigait/workflow.hpp"

using namespace trigait;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("trigait_" + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

const data::Dataset& small_dataset() {
  static const data::Dataset ds = [] {
    data::SynthOptions o;
    o.subjects = 4;
    o.views = 2;
    o.frames = 12;
    o.seed = 3;
    return data::Dataset(data::generate_sequences(o));
  }();
  return ds;
}

RunConfig small_run() {
  RunConfig c = build_config({}, true);
  c.train.batch = {4, 2, 8};
  c.train.log_every = 1;
  return c;
}

double window_mean(const std::vector<LogRow>& log, std::size_t begin, std::size_t count) {
  double s = 0.0;
  for (std::size_t i = begin; i < begin + count; ++i) s += log[i].loss.l_tri;
  return s / static_cast<double>(count);
}

}  // namespace

TEST_CASE("default schedule drops tenfold at 30k") {
  const StepSchedule s;
  CHECK(s.at(0) == 1e-4);
  CHECK(s.at(29999) == 1e-4);
  CHECK(s.at(30000) == doctest::Approx(1e-5).epsilon(1e-15));
  CHECK(s.at(59999) == doctest::Approx(1e-5).epsilon(1e-15));
  const RunConfig full = default_config();
  CHECK(full.train.iterations == 60000);
  CHECK(full.train.schedule.at(30000) == doctest::Approx(1e-5).epsilon(1e-15));
}

TEST_CASE("logged learning rate switches at iteration 30000") {
  RunConfig c = small_run();
  c.train.schedule = StepSchedule{};
  c.train.iterations = 30001;
  TriGaitModel model(workflow::model_for(c, small_dataset()), 1);
  const auto r = train(model, small_dataset(), c.train, 29999);
  REQUIRE(r.log.size() == 2);
  CHECK(r.log[0].iteration == 29999);
  CHECK(r.log[0].lr == 1e-4);
  CHECK(r.log[1].iteration == 30000);
  CHECK(r.log[1].lr == doctest::Approx(1e-5).epsilon(1e-15));
  CHECK(r.end_iteration == 30001);
}

TEST_CASE("smoke training has finite losses and lowers the triplet loss") {
  RunConfig c = small_run();
  c.train.iterations = 64;
  TriGaitModel model(workflow::model_for(c, small_dataset()), 2);
  const auto r = train(model, small_dataset(), c.train);
  REQUIRE(r.log.size() == 64);
  for (const auto& row : r.log) {
    CHECK(std::isfinite(row.loss.l));
    CHECK(row.loss.l == row.loss.l_tri + row.loss.l_ce);
    CHECK(row.loss.active_fraction >= 0.0);
    CHECK(row.loss.active_fraction <= 1.0);
  }
  const double first = window_mean(r.log, 0, 8);
  const double last = window_mean(r.log, 56, 8);
  MESSAGE("L_tri first 8 mean " << first << ", last 8 mean " << last);
  CHECK(last < first);
}

TEST_CASE("resumed training matches an uninterrupted run") {
  TempDir straight("straight"), split("split");
  RunConfig c = small_run();
  c.train.iterations = 10;
  c.train.checkpoint_every = 4;
  const ModelConfig mc = workflow::model_for(c, small_dataset());

  c.train.out_dir = straight.path;
  TriGaitModel a(mc, 7);
  train(a, small_dataset(), c.train);

  c.train.out_dir = split.path;
  c.train.iterations = 6;
  TriGaitModel b(mc, 7);
  const auto first = train(b, small_dataset(), c.train);
  CHECK(first.end_iteration == 6);

  TriGaitModel resumed(mc, 99);
  const auto records = read_checkpoint(split.path / kCheckpointFile);
  CHECK(checkpoint_meta(records, "split").iteration == 6);
  restore_model(resumed, records, "split");
  c.train.iterations = 10;
  const auto second = train(resumed, small_dataset(), c.train, 6);
  CHECK(second.first_iteration == 6);
  CHECK(second.log.front().iteration == 6);

  const auto x = read_checkpoint(straight.path / kCheckpointFile);
  const auto y = read_checkpoint(split.path / kCheckpointFile);
  REQUIRE(x.size() == y.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(x[i].name == y[i].name);
    CHECK(x[i].data == y[i].data);
  }
  CHECK(io::read_file(straight.path / kTrainLogFile) == io::read_file(split.path / kTrainLogFile));
  const auto rows = parse_train_log(io::read_file(split.path / kTrainLogFile));
  REQUIRE(rows.size() == 10);
  for (long i = 0; i < 10; ++i) CHECK(rows[static_cast<std::size_t>(i)].iteration == i);
}

TEST_CASE("train log rows round trip") {
  LogRow row{123, 1e-4, {}};
  row.loss.l_tri = 1.0 / 3.0;
  row.loss.l_ce = std::exp(1.0);
  row.loss.l = row.loss.l_tri + row.loss.l_ce;
  row.loss.active_fraction = 0.125;
  const std::string text = std::string(kTrainLogHeader) + "\n" + format_log_row(row) + "\n";
  const auto back = parse_train_log(text);
  REQUIRE(back.size() == 1);
  CHECK(back[0].iteration == 123);
  CHECK(back[0].lr == row.lr);
  CHECK(back[0].loss.l_tri == row.loss.l_tri);
  CHECK(back[0].loss.l_ce == row.loss.l_ce);
  CHECK(back[0].loss.l == row.loss.l);
  CHECK(back[0].loss.active_fraction == row.loss.active_fraction);
  CHECK_THROWS_WITH_AS(parse_train_log("1\t2\tx\n"), "train log line 1: malformed row", Error);
}

TEST_CASE("checkpoint from another configuration is rejected") {
  RunConfig c = small_run();
  const ModelConfig mc = workflow::model_for(c, small_dataset());
  TriGaitModel source(mc, 1);
  const auto records = model_checkpoint(source, 5);

  ModelConfig other = mc;
  other.embed_dim = 32;
  TriGaitModel target(other, 1);
  try {
    restore_model(target, records, "ck");
    FAIL("mismatch accepted");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find(hash_hex(model_config_hash(mc))) != std::string::npos);
    CHECK(msg.find(hash_hex(model_config_hash(other))) != std::string::npos);
  }

  ModelConfig more_classes = mc;
  more_classes.num_classes = mc.num_classes + 1;
  TriGaitModel wider(more_classes, 1);
  CHECK_THROWS_AS(restore_model(wider, records, "ck"), Error);

  TriGaitModel same(mc, 2);
  restore_model(same, records, "ck");
  const auto again = model_checkpoint(same, 5);
  REQUIRE(again.size() == records.size());
  for (std::size_t i = 0; i < records.size(); ++i) CHECK(again[i].data == records[i].data);
}

TEST_CASE("divergent training stops with the iteration number") {
  RunConfig c = small_run();
  c.train.iterations = 20;
  c.train.schedule.base = 1e150;
  TriGaitModel model(workflow::model_for(c, small_dataset()), 3);
  CHECK_THROWS_WITH_AS(train(model, small_dataset(), c.train), doctest::Contains("training diverged"), Error);
}

TEST_CASE("classifier narrower than the dataset is rejected") {
  RunConfig c = small_run();
  ModelConfig mc = workflow::model_for(c, small_dataset());
  CHECK(mc.num_classes == 4);
  mc.num_classes = 3;
  TriGaitModel model(mc, 1);
  c.train.iterations = 1;
  CHECK_THROWS_AS(train(model, small_dataset(), c.train), Error);
}
