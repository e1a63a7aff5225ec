#include "trigait/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

namespace trigait {

namespace {

std::string join_problems(const std::vector<std::string>& problems) {
  std::string out = "invalid configuration:";
  for (const auto& p : problems) out += "\n  - " + p;
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_u64(const std::string& s, std::uint64_t& out) {
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

bool parse_i64(const std::string& s, long& out) {
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

bool parse_f64(const std::string& s, double& out) {
  if (s.empty()) return false;
  std::size_t used = 0;
  try {
    out = std::stod(s, &used);
  } catch (const std::exception&) {
    return false;
  }
  return used == s.size();
}

bool parse_bool(const std::string& s, bool& out) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return out = true, true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return out = false, true;
  return false;
}

template <std::size_t N>
bool parse_list(const std::string& s, std::array<std::size_t, N>& out) {
  std::array<std::size_t, N> v{};
  std::size_t i = 0, start = 0;
  while (true) {
    const auto comma = s.find(',', start);
    std::uint64_t x = 0;
    if (i >= N || !parse_u64(trim(s.substr(start, comma - start)), x)) return false;
    v[i++] = x;
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (i != N) return false;
  out = v;
  return true;
}

template <std::size_t N>
std::string list_text(const std::array<std::size_t, N>& v) {
  std::string s;
  for (std::size_t i = 0; i < N; ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string number_text(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Key {
  std::string name;
  std::function<bool(RunConfig&, const std::string&)> set;  // false: malformed
  std::function<std::string(const RunConfig&)> get;
  const char* expected;
};

template <typename Ref>
Key count_key(std::string name, Ref ref) {
  return {std::move(name),
          [ref](RunConfig& c, const std::string& v) {
            std::uint64_t x = 0;
            if (!parse_u64(v, x)) return false;
            ref(c) = static_cast<std::remove_reference_t<decltype(ref(c))>>(x);
            return true;
          },
          [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); }, "a non-negative integer"};
}

template <typename Ref>
Key real_key(std::string name, Ref ref) {
  return {std::move(name),
          [ref](RunConfig& c, const std::string& v) { return parse_f64(v, ref(c)); },
          [ref](const RunConfig& c) { return number_text(ref(const_cast<RunConfig&>(c))); }, "a number"};
}

template <typename Ref>
Key long_key(std::string name, Ref ref) {
  return {std::move(name),
          [ref](RunConfig& c, const std::string& v) { return parse_i64(v, ref(c)); },
          [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); }, "an integer"};
}

template <std::size_t N, typename Ref>
Key list_key(std::string name, Ref ref) {
  return {std::move(name),
          [ref](RunConfig& c, const std::string& v) { return parse_list<N>(v, ref(c)); },
          [ref](const RunConfig& c) { return list_text<N>(ref(const_cast<RunConfig&>(c))); },
          N == 4 ? "4 comma-separated integers" : "3 comma-separated integers"};
}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = [] {
    std::vector<Key> k;
    k.push_back({"seed", [](RunConfig& c, const std::string& v) { return parse_u64(v, c.train.seed); },
                 [](const RunConfig& c) { return std::to_string(c.train.seed); }, "a non-negative integer"});
    k.push_back({"threads",
                 [](RunConfig& c, const std::string& v) {
                   long x = 0;
                   if (!parse_i64(v, x) || x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
                     return false;
                   }
                   c.threads = static_cast<int>(x);
                   return true;
                 },
                 [](const RunConfig& c) { return std::to_string(c.threads); }, "an integer"});
    k.push_back({"miniature", [](RunConfig& c, const std::string& v) { return parse_bool(v, c.miniature); },
                 [](const RunConfig& c) { return std::string(c.miniature ? "true" : "false"); }, "true or false"});
    k.push_back({"dataset", [](RunConfig& c, const std::string& v) { return c.dataset = v, true; },
                 [](const RunConfig& c) { return c.dataset.string(); }, "a path"});
    k.push_back({"out", [](RunConfig& c, const std::string& v) { return c.out = v, true; },
                 [](const RunConfig& c) { return c.out.string(); }, "a path"});
    k.push_back(long_key("iterations", [](RunConfig& c) -> long& { return c.train.iterations; }));
    k.push_back(long_key("log_every", [](RunConfig& c) -> long& { return c.train.log_every; }));
    k.push_back(long_key("checkpoint_every", [](RunConfig& c) -> long& { return c.train.checkpoint_every; }));
    k.push_back(count_key("batch_subjects", [](RunConfig& c) -> std::size_t& { return c.train.batch.subjects_per_batch; }));
    k.push_back(
        count_key("batch_sequences", [](RunConfig& c) -> std::size_t& { return c.train.batch.sequences_per_subject; }));
    k.push_back(count_key("batch_frames", [](RunConfig& c) -> std::size_t& { return c.train.batch.frames_per_sequence; }));
    k.push_back(real_key("lr", [](RunConfig& c) -> double& { return c.train.schedule.base; }));
    k.push_back(real_key("lr_factor", [](RunConfig& c) -> double& { return c.train.schedule.factor; }));
    k.push_back(long_key("lr_boundary", [](RunConfig& c) -> long& { return c.train.schedule.boundary; }));
    k.push_back(real_key("momentum", [](RunConfig& c) -> double& { return c.train.momentum; }));
    k.push_back(real_key("weight_decay", [](RunConfig& c) -> double& { return c.train.weight_decay; }));
    k.push_back(real_key("margin", [](RunConfig& c) -> double& { return c.train.margin; }));
    k.push_back({"partition_mode",
                 [](RunConfig& c, const std::string& v) {
                   if (v != "motion" && v != "uniform") return false;
                   c.model.partition = parse_partition_mode(v);
                   return true;
                 },
                 [](const RunConfig& c) { return partition_mode_name(c.model.partition); }, "motion or uniform"});
    k.push_back(count_key("frame_size", [](RunConfig& c) -> std::size_t& { return c.model.frame_size; }));
    k.push_back(list_key<4>("sil_channels", [](RunConfig& c) -> std::array<std::size_t, 4>& {
      return c.model.silhouette.channels;
    }));
    k.push_back(count_key("sil_parts", [](RunConfig& c) -> std::size_t& { return c.model.silhouette.parts; }));
    k.push_back(count_key("sil_reduction", [](RunConfig& c) -> std::size_t& { return c.model.silhouette.reduction; }));
    k.push_back(list_key<3>("sil_dilations", [](RunConfig& c) -> std::array<std::size_t, 3>& {
      return c.model.silhouette.dilations;
    }));
    k.push_back(real_key("gem_p_init", [](RunConfig& c) -> double& { return c.model.silhouette.gem_p_init; }));
    k.push_back(list_key<4>("ske_channels", [](RunConfig& c) -> std::array<std::size_t, 4>& {
      return c.model.skeleton.channels;
    }));
    k.push_back(count_key("ske_heads", [](RunConfig& c) -> std::size_t& { return c.model.skeleton.heads; }));
    k.push_back(real_key("coord_scale", [](RunConfig& c) -> double& { return c.model.skeleton.coord_scale; }));
    k.push_back(count_key("fusion_heads", [](RunConfig& c) -> std::size_t& { return c.model.fusion_heads; }));
    k.push_back(count_key("fusion_layers", [](RunConfig& c) -> std::size_t& { return c.model.fusion_layers; }));
    k.push_back(count_key("embed_dim", [](RunConfig& c) -> std::size_t& { return c.model.embed_dim; }));
    k.push_back(real_key("alpha_init", [](RunConfig& c) -> double& { return c.model.alpha_init; }));
    return k;
  }();
  return table;
}

const Key* find_key(const std::string& name) {
  for (const auto& k : keys())
    if (k.name == name) return &k;
  return nullptr;
}

}  // namespace

ConfigError::ConfigError(const std::vector<std::string>& p) : Error(join_problems(p)), problems(p) {}

RunConfig default_config() {
  RunConfig c;
  c.model.skeleton.parts = c.model.feature_rows();
  return c;
}

void apply_miniature(RunConfig& c) {
  c.miniature = true;
  c.model.frame_size = 16;
  c.model.silhouette.channels = {8, 16, 16, 16};
  c.model.silhouette.parts = 2;
  c.model.silhouette.reduction = 4;
  c.model.skeleton.channels = {16, 16, 32, 32};
  c.model.skeleton.heads = 4;
  c.model.fusion_heads = 4;
  c.model.embed_dim = 64;
  c.model.skeleton.parts = c.model.feature_rows();
  c.train.batch = {8, 2, 20};
  c.train.iterations = 600;
  c.train.schedule = {0.01, 0.1, 400};
  c.train.log_every = 1;
  c.train.checkpoint_every = 100;
}

Assignments parse_config_text(const std::string& text, const std::string& origin) {
  Assignments out;
  std::vector<std::string> problems;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string where = origin + ":" + std::to_string(line_no);
    if (eq == std::string::npos) {
      problems.push_back(where + ": expected 'key = value'");
      continue;
    }
    const std::string key = trim(body.substr(0, eq));
    if (key.empty()) {
      problems.push_back(where + ": missing key");
      continue;
    }
    out.emplace_back(key, trim(body.substr(eq + 1)));
  }
  if (!problems.empty()) throw ConfigError(problems);
  return out;
}

Assignments read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(path.string() + ": cannot open config file");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path.string());
}

std::vector<std::string> validate_config(const RunConfig& c) {
  std::vector<std::string> p = c.model.problems();
  const auto& t = c.train;
  if (c.threads < 1) p.push_back("threads must be at least 1");
  if (t.iterations < 0) p.push_back("iterations must be non-negative");
  if (t.log_every < 1) p.push_back("log_every must be positive");
  if (t.checkpoint_every < 1) p.push_back("checkpoint_every must be positive");
  if (t.batch.subjects_per_batch < 2) p.push_back("batch_subjects must be at least 2");
  if (t.batch.sequences_per_subject < 2) p.push_back("batch_sequences must be at least 2");
  if (t.batch.frames_per_sequence < 5) p.push_back("batch_frames must be at least 5");
  if (!(t.schedule.base > 0.0) || !std::isfinite(t.schedule.base)) p.push_back("lr must be positive and finite");
  if (!(t.schedule.factor > 0.0 && t.schedule.factor <= 1.0)) p.push_back("lr_factor must be in (0, 1]");
  if (t.schedule.boundary < 0) p.push_back("lr_boundary must be non-negative");
  if (!(t.momentum >= 0.0 && t.momentum < 1.0)) p.push_back("momentum must be in [0, 1)");
  if (!(t.weight_decay >= 0.0) || !std::isfinite(t.weight_decay)) p.push_back("weight_decay must be non-negative");
  if (!(t.margin > 0.0) || !std::isfinite(t.margin)) p.push_back("margin must be positive");
  return p;
}

RunConfig build_config(const Assignments& assignments, bool miniature) {
  for (const auto& [key, value] : assignments) {
    bool flag = false;
    if (key == "miniature" && parse_bool(value, flag)) miniature = flag;
  }
  RunConfig c = default_config();
  if (miniature) apply_miniature(c);
  std::vector<std::string> problems;
  for (const auto& [key, value] : assignments) {
    const Key* k = find_key(key);
    if (!k) {
      problems.push_back("unknown key '" + key + "'");
      continue;
    }
    if (!k->set(c, value)) problems.push_back("key '" + key + "': expected " + k->expected + ", got '" + value + "'");
  }
  c.miniature = miniature;
  // The skeleton strips always match the silhouette feature height.
  if (c.model.frame_size >= 4) c.model.skeleton.parts = c.model.feature_rows();
  for (auto& q : validate_config(c)) problems.push_back(std::move(q));
  if (!problems.empty()) throw ConfigError(problems);
  return c;
}

std::string config_text(const RunConfig& c) {
  std::string out;
  for (const auto& k : keys()) out += k.name + " = " + k.get(c) + "\n";
  return out;
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& k : keys()) n.push_back(k.name);
    return n;
  }();
  return names;
}

}  // namespace trigait
