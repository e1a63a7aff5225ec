#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "trigait/checks.hpp"
#include "trigait/fusion.hpp"
#include "trigait/silhouette.hpp"
#include "trigait/workflow.hpp"

namespace py = pybind11;
using namespace trigait;

namespace {

// Values may be any Python object; str() gives the config text form, with bools lowered.
Assignments to_assignments(const py::dict& settings) {
  Assignments a;
  for (const auto& [k, v] : settings) {
    std::string value = py::isinstance<py::bool_>(v) ? (v.cast<bool>() ? "true" : "false") : py::str(v).cast<std::string>();
    a.emplace_back(py::str(k).cast<std::string>(), value);
  }
  return a;
}

py::dict log_row(const LogRow& r) {
  py::dict d;
  d["iteration"] = r.iteration;
  d["lr"] = r.lr;
  d["L_tri"] = r.loss.l_tri;
  d["L_ce"] = r.loss.l_ce;
  d["L"] = r.loss.l;
  d["active_fraction"] = r.loss.active_fraction;
  return d;
}

py::dict meta_dict(const synth::SequenceMeta& m) {
  py::dict d;
  d["subject"] = m.subject_id;
  d["condition"] = synth::condition_name(m.condition);
  d["view"] = m.view;
  d["seq_index"] = m.seq_index;
  return d;
}

RunConfig with_paths(RunConfig c, const std::filesystem::path& dataset, const std::filesystem::path& out) {
  c.dataset = dataset;
  c.out = out;
  return c;
}

}  // namespace

PYBIND11_MODULE(_trigait, m) {
  m.doc() = "Tri-branch gait recognition: synthetic data, training and rank-1 evaluation";

  static py::exception<ConfigError> config_error(m, "ConfigError", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ConfigError& e) {
      config_error(e.what());
    } catch (const Error& e) {
      PyErr_SetString(PyExc_RuntimeError, e.what());
    }
  });

  py::class_<RunConfig>(m, "Config")
      .def(py::init([](bool miniature, const py::dict& settings) { return build_config(to_assignments(settings), miniature); }),
           py::arg("miniature") = false, py::arg("settings") = py::dict())
      .def_property_readonly("text", &config_text)
      .def_property_readonly("hash", [](const RunConfig& c) { return hash_hex(model_config_hash(c.model)); })
      .def_readonly("miniature", &RunConfig::miniature)
      .def_readonly("threads", &RunConfig::threads)
      .def_property_readonly("iterations", [](const RunConfig& c) { return c.train.iterations; })
      .def_property_readonly("frame_size", [](const RunConfig& c) { return c.model.frame_size; })
      .def_property_readonly("embed_dim", [](const RunConfig& c) { return c.model.embed_dim; })
      .def_property_readonly("parts", [](const RunConfig& c) { return c.model.total_parts(); })
      .def("__repr__", [](const RunConfig& c) {
        return "<trigait.Config " + hash_hex(model_config_hash(c.model)) + (c.miniature ? " miniature>" : ">");
      });

  m.def("config_keys", &config_keys, "Every key accepted by Config settings and config files.");

  m.def(
      "synthesize",
      [](const std::filesystem::path& out, std::uint32_t subjects, std::uint32_t views, std::uint32_t seqs_per_view,
         std::size_t frames, std::uint64_t seed) {
        data::SynthOptions o{subjects, views, seqs_per_view, frames, seed};
        py::gil_scoped_release release;
        return workflow::synthesize(out, o).sequences;
      },
      py::arg("out"), py::arg("subjects") = 8, py::arg("views") = 11, py::arg("seqs_per_view") = 10,
      py::arg("frames") = 40, py::arg("seed") = 0, "Writes a synthetic dataset; returns the number of sequences.");

  m.def(
      "train",
      [](const RunConfig& config, const std::filesystem::path& dataset, const std::filesystem::path& out, bool resume,
         const std::function<void(py::dict)>& on_log) {
        const RunConfig c = with_paths(config, dataset, out);
        workflow::TrainSummary s;
        {
          py::gil_scoped_release release;
          s = workflow::run_training(c, resume, [&](const LogRow& r) {
            if (!on_log) return;
            py::gil_scoped_acquire acquire;
            on_log(log_row(r));
          });
        }
        py::list rows;
        for (const auto& r : s.log) rows.append(log_row(r));
        return rows;
      },
      py::arg("config"), py::arg("dataset"), py::arg("out"), py::arg("resume") = false, py::arg("on_log") = nullptr,
      "Trains into `out` (checkpoint.tgck, train_log.tsv); returns the logged rows.");

  m.def(
      "evaluate",
      [](const RunConfig& config, const std::filesystem::path& dataset, std::optional<std::filesystem::path> out,
         std::optional<std::filesystem::path> checkpoint, std::optional<std::filesystem::path> report_dir,
         bool gallery_as_probe) {
        if (!out && !checkpoint) throw Error("evaluate: give the training output directory or a checkpoint");
        workflow::EvalOptions o{checkpoint.value_or(""), report_dir.value_or(""), gallery_as_probe};
        workflow::EvalSummary s;
        {
          py::gil_scoped_release release;
          s = workflow::run_evaluation(with_paths(config, dataset, out.value_or("")), o);
        }
        py::dict d;
        d["gallery"] = s.gallery;
        d["probes"] = s.probes;
        const char* names[] = {"NM", "BG", "CL"};
        for (std::size_t c = 0; c < kConditions; ++c) d[names[c]] = s.report.condition_mean(c);
        d["mean"] = s.report.overall_mean();
        d["tsv"] = report_tsv(s.report);
        d["markdown"] = report_markdown(s.report);
        return d;
      },
      py::arg("config"), py::arg("dataset"), py::arg("out") = py::none(), py::arg("checkpoint") = py::none(),
      py::arg("report_dir") = py::none(),
      py::arg("gallery_as_probe") = false,
      "Rank-1 evaluation. Condition means are fractions in [0, 1]; NaN marks an absent condition.");

  m.def(
      "embed",
      [](const RunConfig& config, const std::filesystem::path& dataset, const std::filesystem::path& checkpoint) {
        std::vector<Embedding> all;
        {
          py::gil_scoped_release release;
          const data::Dataset ds = data::read_dataset(dataset);
          TriGaitModel model = workflow::load_model(config, checkpoint);
          all = embed_all(model, ds);
        }
        const std::size_t dim = all.empty() ? 0 : all[0].dim, parts = all.empty() ? 0 : all[0].parts;
        py::array_t<double> values({all.size(), dim, parts});
        auto v = values.mutable_unchecked<3>();
        py::list metas;
        for (std::size_t i = 0; i < all.size(); ++i) {
          for (std::size_t d = 0; d < dim; ++d)
            for (std::size_t p = 0; p < parts; ++p) v(i, d, p) = all[i].values[d * parts + p];
          metas.append(meta_dict(all[i].meta));
        }
        return py::make_tuple(values, metas);
      },
      py::arg("config"), py::arg("dataset"), py::arg("checkpoint"),
      "Eval-mode embeddings [n, dim, parts] of every sequence, with per-sequence metadata.");

  m.def(
      "run_checks",
      [](const std::vector<std::string>& groups) {
        std::vector<CheckResult> results;
        {
          py::gil_scoped_release release;
          results = run_checks(groups);
        }
        py::list out;
        for (const auto& r : results) out.append(py::make_tuple(r.group, r.name, r.passed, r.detail));
        return out;
      },
      py::arg("groups") = std::vector<std::string>{}, "Built-in property checks as (group, name, passed, detail).");

  m.def(
      "gem_pool",
      [](const std::vector<double>& values, double p) {
        return gem_pool(Tensor({values.size()}, values), Tensor({1}, {p})).item();
      },
      py::arg("values"), py::arg("p"), "Generalized mean (mean of x^p)^(1/p) of non-negative values.");

  m.def(
      "motion_ranges",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> joints, std::size_t rows) {
        if (joints.ndim() != 3 || joints.shape(1) != static_cast<py::ssize_t>(synth::kNumJoints) || joints.shape(2) != 2) {
          throw Error("motion_ranges: expected joints of shape [T, 17, 2]");
        }
        const std::size_t frames = static_cast<std::size_t>(joints.shape(0));
        const std::vector<double> flat(joints.data(), joints.data() + joints.size());
        const auto ranges = motion_ranges(neck_normalize(flat, frames), frames, body_parts(), rows);
        py::list out;
        for (std::size_t i = 0; i < ranges.size(); ++i) {
          py::dict d;
          d["part"] = body_parts()[i].name;
          d["H_f"] = ranges[i].h_f;
          d["H_e"] = ranges[i].h_e;
          d["rows"] = py::make_tuple(ranges[i].row_lo, ranges[i].row_hi);
          out.append(d);
        }
        return out;
      },
      py::arg("joints"), py::arg("rows"), "Per-part flexion/extension extents and the feature rows they cover.");
}
