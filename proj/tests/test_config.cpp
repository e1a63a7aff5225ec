#include <algorithm>

#include "doctest.h"
#include "trigait/config.hpp"

using namespace trigait;

namespace {

std::vector<std::string> problems_of(const Assignments& a, bool miniature = false) {
  try {
    build_config(a, miniature);
  } catch (const ConfigError& e) {
    return e.problems;
  }
  return {};
}

bool mentions(const std::vector<std::string>& problems, const std::string& needle) {
  return std::any_of(problems.begin(), problems.end(), [&](const std::string& p) { return p.find(needle) != std::string::npos; });
}

}  // namespace

TEST_CASE("full-size hyperparameters are the defaults") {
  const RunConfig c = default_config();
  CHECK(c.model.frame_size == 64);
  CHECK(c.model.silhouette.channels == std::array<std::size_t, 4>{32, 64, 128, 128});
  CHECK(c.model.silhouette.parts == 8);
  CHECK(c.model.silhouette.reduction == 16);
  CHECK(c.model.skeleton.heads == 8);
  CHECK(c.model.fusion_heads == 8);
  CHECK(c.model.embed_dim == 256);
  CHECK(c.model.total_parts() == 23);
  CHECK(c.train.margin == 0.2);
  CHECK(c.train.schedule.base == 1e-4);
  CHECK(c.train.schedule.boundary == 30000);
  CHECK(c.train.iterations == 60000);
  CHECK(c.train.batch.subjects_per_batch == 8);
  CHECK(c.train.batch.sequences_per_subject == 16);
  CHECK(c.train.batch.frames_per_sequence == 30);
  CHECK(validate_config(c).empty());
}

TEST_CASE("miniature shapes validate and keep the part layout") {
  const RunConfig m = build_config({}, true);
  CHECK(m.miniature);
  CHECK(m.model.frame_size == 16);
  CHECK(m.model.skeleton.parts == m.model.feature_rows());
  CHECK(validate_config(m).empty());
  CHECK(build_config({{"miniature", "true"}}).model.frame_size == 16);
  CHECK(build_config({{"miniature", "false"}}, true).model.frame_size == 64);
}

TEST_CASE("unknown keys and bad values are all reported together") {
  const auto p = problems_of({{"nope", "1"}, {"lr", "fast"}, {"margin", "-1"}, {"frame_size", "63"}});
  CHECK(p.size() >= 4);
  CHECK(mentions(p, "unknown key 'nope'"));
  CHECK(mentions(p, "key 'lr': expected a number, got 'fast'"));
  CHECK(mentions(p, "margin must be positive"));
  try {
    build_config({{"nope", "1"}, {"other", "2"}});
    FAIL("accepted unknown keys");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("'nope'") != std::string::npos);
    CHECK(msg.find("'other'") != std::string::npos);
  }
}

TEST_CASE("config file syntax errors name the line") {
  CHECK(parse_config_text("# c\nlr = 0.5 # trailing\n\n  seed=3\n").size() == 2);
  try {
    parse_config_text("lr 0.5\n= 3\n", "f.cfg");
    FAIL("accepted bad syntax");
  } catch (const ConfigError& e) {
    REQUIRE(e.problems.size() == 2);
    CHECK(e.problems[0] == "f.cfg:1: expected 'key = value'");
    CHECK(e.problems[1] == "f.cfg:2: missing key");
  }
}

TEST_CASE("later assignments override earlier ones") {
  const RunConfig c = build_config({{"seed", "1"}, {"lr", "0.5"}, {"seed", "9"}});
  CHECK(c.train.seed == 9);
  CHECK(c.train.schedule.base == 0.5);
  // Miniature values sit under explicit assignments.
  const RunConfig m = build_config({{"iterations", "7"}}, true);
  CHECK(m.train.iterations == 7);
  CHECK(m.model.embed_dim == 64);
}

TEST_CASE("config text round trips") {
  for (bool mini : {false, true}) {
    RunConfig c = build_config({{"lr", "0.0123"}, {"alpha_init", "0.3333333333333333"}, {"seed", "42"}}, mini);
    const std::string text = config_text(c);
    const RunConfig back = build_config(parse_config_text(text));
    CHECK(config_text(back) == text);
    CHECK(back.train.schedule.base == 0.0123);
    CHECK(back.model.alpha_init == c.model.alpha_init);
    CHECK(model_config_hash(back.model) == model_config_hash(c.model));
  }
  for (const auto& key : config_keys()) CHECK(config_text(default_config()).find(key + " = ") != std::string::npos);
}
