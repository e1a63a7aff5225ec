#include "trigait/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

namespace trigait {

using synth::Condition;

std::vector<Embedding> embed_all(TriGaitModel& model, const data::DatasetReader& dataset) {
  NoGradGuard no_grad;
  std::vector<Embedding> out;
  out.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto seq = dataset.load(i);
    const ModelOutput o = model.forward(prepare_inputs({seq}, model.config), NormMode::Eval);
    Embedding e;
    e.meta = dataset.entries()[i].meta;
    e.dim = o.embedding.dim(1);
    e.parts = o.embedding.dim(2);
    e.values = o.embedding.values();
    out.push_back(std::move(e));
  }
  return out;
}

double part_distance(const Embedding& a, const Embedding& b) {
  if (a.dim != b.dim || a.parts != b.parts || a.values.size() != b.values.size()) {
    throw Error("part_distance: embeddings differ in shape");
  }
  double total = 0.0;
  for (std::size_t p = 0; p < a.parts; ++p) {
    double acc = 0.0;
    for (std::size_t c = 0; c < a.dim; ++c) {
      const double d = a.values[c * a.parts + p] - b.values[c * b.parts + p];
      acc += d * d;
    }
    total += std::sqrt(acc);
  }
  return total;
}

bool is_gallery(const synth::SequenceMeta& m) { return m.condition == Condition::NM && m.seq_index < 4; }

const EvalCell& EvalReport::cell(std::size_t c, std::size_t pv, std::size_t gv) const {
  return cells.at(c).at(pv * views.size() + gv);
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool has_cross_view(const EvalReport& r, std::size_t c) {
  for (std::size_t p = 0; p < r.views.size(); ++p)
    for (std::size_t g = 0; g < r.views.size(); ++g)
      if (p != g && r.cell(c, p, g).present()) return true;
  return false;
}

// Identical-view cells only count when the report has no cross-view cell at all.
bool counts(const EvalReport& r, std::size_t c, std::size_t p, std::size_t g, bool cross) {
  return r.cell(c, p, g).present() && (cross ? p != g : p == g);
}

}  // namespace

double EvalReport::probe_view_mean(std::size_t c, std::size_t p) const {
  const bool cross = has_cross_view(*this, c);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t g = 0; g < views.size(); ++g) {
    if (!counts(*this, c, p, g, cross)) continue;
    sum += cell(c, p, g).accuracy();
    ++n;
  }
  return n ? sum / static_cast<double>(n) : kNaN;
}

std::size_t EvalReport::counted_cells(std::size_t c) const {
  const bool cross = has_cross_view(*this, c);
  std::size_t n = 0;
  for (std::size_t p = 0; p < views.size(); ++p)
    for (std::size_t g = 0; g < views.size(); ++g) n += counts(*this, c, p, g, cross);
  return n;
}

double EvalReport::condition_mean(std::size_t c) const {
  const bool cross = has_cross_view(*this, c);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < views.size(); ++p)
    for (std::size_t g = 0; g < views.size(); ++g) {
      if (!counts(*this, c, p, g, cross)) continue;
      sum += cell(c, p, g).accuracy();
      ++n;
    }
  return n ? sum / static_cast<double>(n) : kNaN;
}

double EvalReport::overall_mean() const {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < kConditions; ++c) {
    const double m = condition_mean(c);
    if (std::isnan(m)) continue;
    sum += m;
    ++n;
  }
  return n ? sum / static_cast<double>(n) : kNaN;
}

EvalReport rank1(const std::vector<Embedding>& gallery, const std::vector<Embedding>& probes, const RankOptions& options) {
  EvalReport r;
  for (const auto* set : {&gallery, &probes})
    for (const auto& e : *set) r.views.push_back(e.meta.view);
  std::sort(r.views.begin(), r.views.end());
  r.views.erase(std::unique(r.views.begin(), r.views.end()), r.views.end());
  const std::size_t nv = r.views.size();
  for (auto& c : r.cells) c.assign(nv * nv, EvalCell{});
  auto view_index = [&](std::uint32_t v) {
    return static_cast<std::size_t>(std::lower_bound(r.views.begin(), r.views.end(), v) - r.views.begin());
  };

  std::vector<std::vector<std::size_t>> by_view(nv);
  for (std::size_t i = 0; i < gallery.size(); ++i) by_view[view_index(gallery[i].meta.view)].push_back(i);

  for (const auto& probe : probes) {
    const std::size_t c = static_cast<std::size_t>(probe.meta.condition);
    if (c >= kConditions) throw Error("rank1: probe has an unknown condition");
    const std::size_t pv = view_index(probe.meta.view);
    for (std::size_t gv = 0; gv < nv; ++gv) {
      if (by_view[gv].empty()) continue;  // absent cell
      if (!options.cross_view && gv != pv) continue;
      double best = std::numeric_limits<double>::infinity();
      std::size_t best_at = by_view[gv].front();
      for (std::size_t gi : by_view[gv]) {
        const double d = part_distance(probe, gallery[gi]);
        if (d < best) {  // strict: earlier gallery entries win ties
          best = d;
          best_at = gi;
        }
      }
      EvalCell& cell = r.cells[c][pv * nv + gv];
      ++cell.probes;
      cell.correct += gallery[best_at].meta.subject_id == probe.meta.subject_id;
    }
  }
  return r;
}

namespace {

const char* kConditionLabel[kConditions] = {"NM", "BG", "CL"};

std::string percent(double v) {
  if (std::isnan(v)) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", 100.0 * v);
  return buf;
}

}  // namespace

std::string report_tsv(const EvalReport& r) {
  std::ostringstream os;
  os << "condition\tprobe_view\tgallery_view\tprobes\tcorrect\taccuracy\n";
  char acc[64];
  for (std::size_t c = 0; c < kConditions; ++c)
    for (std::size_t p = 0; p < r.views.size(); ++p)
      for (std::size_t g = 0; g < r.views.size(); ++g) {
        const EvalCell& cell = r.cell(c, p, g);
        if (!cell.present()) continue;
        std::snprintf(acc, sizeof acc, "%.17g", cell.accuracy());
        os << kConditionLabel[c] << '\t' << r.views[p] << '\t' << r.views[g] << '\t' << cell.probes << '\t'
           << cell.correct << '\t' << acc << '\n';
      }
  return os.str();
}

EvalReport parse_report_tsv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  struct Row {
    std::size_t c;
    std::uint32_t pv, gv;
    EvalCell cell;
  };
  std::vector<Row> rows;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line.rfind("condition\t", 0) == 0) continue;
    std::istringstream f(line);
    std::string cond;
    Row row{};
    double accuracy = 0.0;
    if (!(f >> cond >> row.pv >> row.gv >> row.cell.probes >> row.cell.correct >> accuracy) ||
        row.cell.correct > row.cell.probes) {
      throw Error("report line " + std::to_string(line_no) + ": malformed row");
    }
    const auto* it = std::find(std::begin(kConditionLabel), std::end(kConditionLabel), cond);
    if (it == std::end(kConditionLabel)) throw Error("report line " + std::to_string(line_no) + ": unknown condition");
    row.c = static_cast<std::size_t>(it - std::begin(kConditionLabel));
    rows.push_back(row);
  }
  EvalReport r;
  for (const auto& row : rows) {
    r.views.push_back(row.pv);
    r.views.push_back(row.gv);
  }
  std::sort(r.views.begin(), r.views.end());
  r.views.erase(std::unique(r.views.begin(), r.views.end()), r.views.end());
  const std::size_t nv = r.views.size();
  for (auto& c : r.cells) c.assign(nv * nv, EvalCell{});
  auto index = [&](std::uint32_t v) { return std::lower_bound(r.views.begin(), r.views.end(), v) - r.views.begin(); };
  for (const auto& row : rows) r.cells[row.c][index(row.pv) * nv + index(row.gv)] = row.cell;
  return r;
}

std::string report_markdown(const EvalReport& r) {
  std::ostringstream os;
  os << "# Rank-1 accuracy (%)\n\n";
  os << "Columns are probe views; each value averages the gallery views other than the probe view.\n";
  for (std::size_t c = 0; c < kConditions; ++c) {
    os << "\n## " << kConditionLabel[c] << "\n\n| Probe |";
    for (auto v : r.views) os << ' ' << v << " |";
    os << " Mean |\n|---|";
    for (std::size_t i = 0; i <= r.views.size(); ++i) os << "---:|";
    os << "\n| " << kConditionLabel[c] << " |";
    for (std::size_t p = 0; p < r.views.size(); ++p) os << ' ' << percent(r.probe_view_mean(c, p)) << " |";
    os << ' ' << percent(r.condition_mean(c)) << " |\n";
  }
  os << "\n## Summary\n\n| Condition | Mean |\n|---|---:|\n";
  for (std::size_t c = 0; c < kConditions; ++c) os << "| " << kConditionLabel[c] << " | " << percent(r.condition_mean(c)) << " |\n";
  os << "\nMean over conditions: " << percent(r.overall_mean()) << "\n";
  return os.str();
}

std::string report_summary(const EvalReport& r) {
  std::ostringstream os;
  for (std::size_t c = 0; c < kConditions; ++c) os << kConditionLabel[c] << ' ' << percent(r.condition_mean(c)) << '\n';
  os << "Mean " << percent(r.overall_mean()) << '\n';
  return os.str();
}

}  // namespace trigait
