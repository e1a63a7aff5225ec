#include "trigait/checks.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>

#include "trigait/eval.hpp"
#include "trigait/fusion.hpp"
#include "trigait/gradcheck.hpp"
#include "trigait/model.hpp"
#include "trigait/silhouette.hpp"
#include "trigait/skeleton.hpp"
#include "trigait/synth.hpp"

namespace trigait {

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(shape, std::move(v));
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

struct Recorder {
  std::string group;
  std::vector<CheckResult>* out;
  void operator()(const std::string& name, bool ok, const std::string& detail = {}) const {
    out->push_back({group, name, ok, detail});
  }
};

void grad_checks(const Recorder& rec) {
  Rng rng(11);
  GradCheckOptions opt;
  opt.max_coords = 24;
  using V = const std::vector<Tensor>&;
  auto run = [&](const std::string& name, const std::function<Tensor(V)>& f, const std::vector<Tensor>& inputs) {
    for (Tensor t : inputs) t.set_requires_grad(true);
    const auto r = gradcheck(f, inputs, opt);
    rec(name, r.max_rel_error < 1e-4, "max rel err " + fmt(r.max_rel_error));
  };
  auto rt = [&](const Shape& shape, double lo = -1.0, double hi = 1.0) { return random_tensor(shape, rng, lo, hi); };
  run("add", [](V t) { return add(t[0], t[1]); }, {rt({3, 4}), rt({4})});
  run("sub", [](V t) { return sub(t[0], t[1]); }, {rt({2, 1, 3}), rt({4, 1})});
  run("mul", [](V t) { return mul(t[0], t[1]); }, {rt({3, 4}), rt({3, 1})});
  run("div", [](V t) { return div(t[0], t[1]); }, {rt({3, 4}), rt({4}, 0.5, 1.5)});
  run("add_scalar", [](V t) { return add_scalar(t[0], 0.7); }, {rt({4})});
  run("mul_scalar", [](V t) { return mul_scalar(t[0], -1.3); }, {rt({4})});
  run("neg", [](V t) { return neg(t[0]); }, {rt({4})});
  run("exp", [](V t) { return exp(t[0]); }, {rt({5})});
  run("log", [](V t) { return log(t[0]); }, {rt({5}, 0.2, 1.0)});
  run("sigmoid", [](V t) { return sigmoid(t[0]); }, {rt({7})});
  run("relu", [](V t) { return relu(t[0]); }, {rt({6})});
  run("leaky_relu", [](V t) { return leaky_relu(t[0]); }, {rt({9})});
  run("softplus", [](V t) { return softplus(t[0]); }, {rt({6})});
  run("pow", [](V t) { return pow_scalar(t[0], 2.5); }, {rt({6}, 0.1, 1.0)});
  run("sum", [](V t) { return sum(t[0], {0, 2}); }, {rt({2, 3, 4})});
  run("sum_all", [](V t) { return sum_all(t[0]); }, {rt({2, 3})});
  run("mean", [](V t) { return mean(t[0], {1}, true); }, {rt({2, 3, 4})});
  run("mean_all", [](V t) { return mean_all(t[0]); }, {rt({2, 3})});
  run("max", [](V t) { return max(t[0], {-1}); }, {rt({3, 6})});
  run("avg_pool", [](V t) { return pool(t[0], {0, 2}, PoolKind::Avg); }, {rt({3, 2, 4})});
  run("max_pool", [](V t) { return pool(t[0], {1}, PoolKind::Max); }, {rt({3, 6})});
  run("reshape", [](V t) { return reshape(t[0], {6, 2}); }, {rt({3, 4})});
  run("permute", [](V t) { return permute(t[0], {2, 0, 1}); }, {rt({2, 3, 4})});
  run("narrow", [](V t) { return narrow(t[0], 1, 1, 2); }, {rt({2, 4, 3})});
  run("concat", [](V t) { return concat({t[0], t[1]}, 1); }, {rt({2, 2, 3}), rt({2, 1, 3})});
  run("stack", [](V t) { return stack({t[0], t[1]}, 0); }, {rt({2, 3}), rt({2, 3})});
  run("index_select", [](V t) { return index_select(t[0], 1, {3, 0, 3}); }, {rt({2, 4})});
  run("unsqueeze", [](V t) { return unsqueeze(t[0], 1); }, {rt({2, 3})});
  run("matmul", [](V t) { return matmul(t[0], t[1]); }, {rt({2, 3, 4}), rt({2, 4, 5})});
  run("matmul_shared", [](V t) { return matmul(t[0], t[1]); }, {rt({2, 3, 4}), rt({4, 2})});
  run("linear", [](V t) { return linear(t[0], t[1], t[2]); }, {rt({3, 4}), rt({4, 2}), rt({2})});
  run("conv1d", [](V t) { return conv(t[0], t[1], t[2], {{1}, {2}, {2}}); }, {rt({2, 2, 7}), rt({3, 2, 3}), rt({3})});
  run("conv2d_strided", [](V t) { return conv(t[0], t[1], {}, {{2, 1}, {1, 2}, {1, 1}}); },
      {rt({2, 2, 6, 5}), rt({2, 2, 3, 2})});
  run("conv3d", [](V t) { return conv(t[0], t[1], t[2], {{1, 1, 1}, {1, 2, 1}, {1, 2, 1}}); },
      {rt({2, 2, 4, 5, 5}), rt({3, 2, 3, 3, 3}), rt({3})});
  run("softmax", [](V t) { return softmax(t[0], 1); }, {rt({3, 5})});
  run("log_softmax", [](V t) { return log_softmax(t[0], -1); }, {rt({3, 4})});
  run("layer_norm", [](V t) { return layer_norm(t[0], t[1], t[2]); }, {rt({3, 6}), rt({6}), rt({6})});
  auto stats = std::make_shared<RunningStats>(3);
  run("batch_norm_train", [stats](V t) { return batch_norm(t[0], t[1], t[2], *stats, NormMode::Train); },
      {rt({4, 3, 5}), rt({3}), rt({3})});
  run("batch_norm_eval", [stats](V t) { return batch_norm(t[0], t[1], t[2], *stats, NormMode::Eval); },
      {rt({4, 3, 5}), rt({3}), rt({3})});
  run("gem", [](V t) { return gem_pool(t[0], gem_exponent(t[1])); }, {rt({3, 5}, 0.2, 2.0), Tensor({1}, {gem_raw_for(2.5)})});
  run("adaptive_avg_pool", [](V t) { return adaptive_avg_pool_last(t[0], 16); }, {rt({2, 3, 17})});
  run("part_pool", [](V t) { return part_pool(t[0], {{{0, 1}, {1, 3}}, {{2, 2}, {0, 3}}}); }, {rt({2, 2, 3, 4, 2})});
  run("pairwise_distance", [](V t) { return pairwise_distance(t[0]); }, {rt({2, 4, 3})});
  const std::vector<std::uint32_t> labels = {0, 0, 1, 1, 2, 2};
  run("triplet_ba", [labels](V t) { return triplet_ba_loss(t[0], labels, 0.2).loss; }, {rt({6, 3, 2})});
  run("cross_entropy", [labels, &rng](V t) {
        Linear cls("check.cls", 3, 3, rng, false);
        cls.weight.value = t[1];
        return ce_loss(t[0], labels, cls);
      },
      {rt({6, 3, 2}), rt({3, 3})});
}

// Key biases cancel inside the softmax and value biases inside the next train-mode
// batch norm; their true gradient is zero and finite differences see only rounding.
std::vector<Tensor> live_parameters(Module& m) {
  std::vector<Tensor> out;
  for (Parameter* p : m.parameters()) {
    if (p->name.ends_with("key.bias") || p->name.ends_with("value.bias")) continue;
    out.push_back(p->value);
  }
  return out;
}

Tensor detached(const Tensor& t) { return Tensor(t.shape(), t.values(), true); }

// Miniature shapes: T=5, 16x16 silhouettes, 17 joints, two subjects with two sequences each.
void branch_checks(const Recorder& rec) {
  ModelConfig config;
  config.frame_size = 16;
  config.silhouette.channels = {8, 16, 16, 16};
  config.silhouette.parts = 2;
  config.silhouette.reduction = 4;
  config.skeleton.channels = {16, 16, 32, 32};
  config.skeleton.heads = 4;
  config.skeleton.parts = config.feature_rows();
  config.fusion_heads = 4;
  config.embed_dim = 64;
  config.num_classes = 2;
  TriGaitModel model(config, 31);

  std::vector<synth::RenderedSequence> batch;
  for (std::uint32_t i = 0; i < 4; ++i) {
    const std::uint32_t s = i / 2;
    auto seq = synth::render_sequence(synth::synth_subject(40 + s), synth::Condition::NM, 36 * i, 5, i);
    seq.silhouette.meta.subject_id = seq.skeleton.meta.subject_id = s;
    batch.push_back(seq);
  }
  ModelInputs in = prepare_inputs(batch, config);
  // Binary frames leave flat regions where max pooling ties; continuous values keep maxima unique.
  Rng rng(32);
  in.silhouettes = random_tensor(in.silhouettes.shape(), rng, 0.0, 1.0);
  in.silhouettes.set_requires_grad(true);
  in.skeletons.set_requires_grad(true);

  GradCheckOptions opt;
  opt.max_coords = 6;
  opt.retry_steps = {1e-6, 1e-7};
  opt.retry_above = 1e-4;
  auto run = [&](const std::string& name, const std::function<Tensor(const std::vector<Tensor>&)>& f,
                 const std::vector<Tensor>& inputs) {
    const auto r = gradcheck(f, inputs, opt);
    rec(name, r.max_rel_error < 1e-3,
        "max rel err " + fmt(r.max_rel_error) + " over " + std::to_string(r.coords_checked) + " coords");
  };

  std::vector<Tensor> sil_inputs = {in.silhouettes};
  for (const Tensor& p : live_parameters(model.sil)) sil_inputs.push_back(p);
  run("silhouette branch", [&](const std::vector<Tensor>& x) { return model.sil.forward(x[0], NormMode::Train).gait; },
      sil_inputs);

  std::vector<Tensor> ske_inputs = {in.skeletons};
  for (const Tensor& p : live_parameters(model.ske)) ske_inputs.push_back(p);
  run("skeleton branch", [&](const std::vector<Tensor>& x) { return model.ske.forward(x[0], NormMode::Train).gait; },
      ske_inputs);

  const ModelOutput out = model.forward(in, NormMode::Train);
  std::vector<Tensor> fuse_inputs = {detached(out.sil.f_x), detached(out.ske.f_y)};
  for (const Tensor& p : live_parameters(model.fuse)) fuse_inputs.push_back(p);
  run("fusion branch", [&](const std::vector<Tensor>& x) {
        return model.fuse.forward(cross_modal_tokens(x[0], x[1], in.ranges, body_parts()));
      },
      fuse_inputs);

  std::vector<Tensor> model_inputs = {in.silhouettes, in.skeletons};
  for (const Tensor& p : live_parameters(model)) model_inputs.push_back(p);
  opt.max_coords = 3;
  run("full model", [&](const std::vector<Tensor>& x) {
        ModelInputs m = in;
        m.silhouettes = x[0];
        m.skeletons = x[1];
        return model.forward(m, NormMode::Train).embedding;
      },
      model_inputs);

  const std::vector<std::uint32_t> labels = {0, 0, 1, 1};
  opt.max_coords = 24;
  const Tensor embedding = detached(out.embedding);
  run("combined loss", [&](const std::vector<Tensor>& x) {
        return combined_loss(x[0], labels, model.classifier, 0.2).total;
      },
      {embedding, model.classifier.weight.value});
}

void softmax_checks(const Recorder& rec) {
  Rng rng(5);
  const Tensor x = random_tensor({6, 9}, rng, -20.0, 20.0);
  const auto p = softmax(x, 1).values();
  const auto q = softmax(x + 13.5, 1).values();
  double norm_err = 0.0, shift_err = 0.0;
  bool in_range = true;
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 9; ++c) {
      const double v = p[r * 9 + c];
      s += v;
      in_range = in_range && v > 0.0 && v <= 1.0;
      shift_err = std::max(shift_err, std::abs(v - q[r * 9 + c]));
    }
    norm_err = std::max(norm_err, std::abs(s - 1.0));
  }
  rec("rows sum to 1", norm_err <= 1e-12, "max err " + fmt(norm_err));
  rec("shift invariance", shift_err <= 1e-12, "max err " + fmt(shift_err));
  rec("entries in (0, 1]", in_range);
  const auto e = softmax(Tensor({2}, {0.0, std::log(3.0)}), 0).values();
  rec("[0, ln 3] -> [0.25, 0.75]", std::abs(e[0] - 0.25) < 1e-12 && std::abs(e[1] - 0.75) < 1e-12);
}

void sigmoid_checks(const Recorder& rec) {
  const auto v = sigmoid(Tensor({4}, {0.0, 30.0, 1.0, -30.0})).values();
  rec("sigmoid(0) = 0.5", v[0] == 0.5);
  rec("sigmoid(30) ~ 1", std::abs(v[1] - 1.0) < 1e-9);
  rec("sigmoid(1)", std::abs(v[2] - 1.0 / (1.0 + std::exp(-1.0))) < 1e-15);
  rec("range (0, 1)", v[3] > 0.0 && v[1] < 1.0);
}

void gem_checks(const Recorder& rec) {
  auto gem = [](std::vector<double> xs, double p) {
    const std::size_t n = xs.size();
    return gem_pool(Tensor({n}, std::move(xs)), Tensor({1}, {p})).item();
  };
  rec("p=1 on [1,3] = 2", std::abs(gem({1, 3}, 1.0) - 2.0) < 1e-12);
  rec("p=2 on [1,2,2] = sqrt 3", std::abs(gem({1, 2, 2}, 2.0) - std::sqrt(3.0)) < 1e-12);
  rec("p=64 on [1,3] near max", std::abs(gem({1, 3}, 64.0) - 3.0 * std::pow(2.0, -1.0 / 64.0)) < 1e-12);
  Rng rng(3);
  const Tensor x = random_tensor({5, 8}, rng, 0.0, 2.0);
  const auto avg = mean(x, {1}).values();
  const auto g1 = gem_pool(x, Tensor({1}, {1.0})).values();
  double err = 0.0;
  for (std::size_t i = 0; i < avg.size(); ++i) err = std::max(err, std::abs(avg[i] - g1[i]));
  rec("p=1 equals average", err <= 1e-12, "max err " + fmt(err));
  bool monotone = true;
  std::vector<double> prev = g1;
  for (double p : {2.0, 4.0, 8.0}) {
    const auto cur = gem_pool(x, Tensor({1}, {p})).values();
    for (std::size_t i = 0; i < cur.size(); ++i) monotone = monotone && cur[i] >= prev[i];
    prev = cur;
  }
  rec("non-decreasing in p", monotone);
}

void jsa_checks(const Recorder& rec) {
  Rng rng(9);
  JointSelfAttention jsa("check.jsa", 3, 8, 2, rng);
  Tensor probs;
  jsa.forward(random_tensor({2, 3, 4, 17}, rng), &probs);
  const auto& p = probs.values();
  double err = 0.0;
  for (std::size_t r = 0; r < p.size() / 17; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < 17; ++j) s += p[r * 17 + j];
    err = std::max(err, std::abs(s - 1.0));
  }
  rec("attention rows sum to 1", err <= 1e-12, "max err " + fmt(err));

  // Identical joints: every query sees the same keys, so attention is uniform.
  std::vector<double> same(3 * 2 * 17);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t t = 0; t < 2; ++t)
      for (std::size_t k = 0; k < 17; ++k) same[(c * 2 + t) * 17 + k] = 0.3 * static_cast<double>(c + 1) - 0.2 * t;
  jsa.forward(Tensor({1, 3, 2, 17}, same), &probs);
  double uerr = 0.0;
  for (double v : probs.values()) uerr = std::max(uerr, std::abs(v - 1.0 / 17.0));
  rec("identical joints give uniform attention", uerr <= 1e-12, "max err " + fmt(uerr));

  // K=2, d_k=1: q=[1,0], k=[1,0], v=[2,4] gives softmax(1,0) . v for the first joint.
  JointSelfAttention tiny("check.tiny", 2, 1, 1, rng);
  fill_parameter(tiny.query.weight, 0.0);
  fill_parameter(tiny.key.weight, 0.0);
  fill_parameter(tiny.value.weight, 0.0);
  for (auto* b : {&*tiny.query.bias, &*tiny.key.bias, &*tiny.value.bias}) fill_parameter(*b, 0.0);
  tiny.query.weight.value.data()[0] = 1.0;
  tiny.key.weight.value.data()[0] = 1.0;
  tiny.value.weight.value.data()[1] = 1.0;
  const Tensor out = tiny.forward(Tensor({1, 2, 1, 2}, {1.0, 0.0, 2.0, 4.0}));
  const double expected = (2.0 * std::exp(1.0) + 4.0) / (std::exp(1.0) + 1.0);
  rec("two-joint example", std::abs(out.values()[0] - expected) < 1e-12, "got " + fmt(out.values()[0]));
}

void attention_checks(const Recorder& rec) {
  Rng rng(13);
  SilhouetteConfig config;
  config.channels = {8, 16, 16, 16};
  config.parts = 2;
  config.reduction = 4;
  SilhouetteBranch branch(config, rng);
  const auto out = branch.forward(random_tensor({2, 1, 5, 16, 16}, rng, 0.0, 1.0), NormMode::Train);
  auto open_unit = [](const Tensor& t) {
    const auto& v = t.values();
    return std::all_of(v.begin(), v.end(), [](double x) { return x > 0.0 && x < 1.0; });
  };
  rec("spatial attention in (0, 1)", open_unit(out.s_a));
  rec("temporal attention in (0, 1)", open_unit(out.s_t));

  SpatialRefine refine("check.refine", 16, 4, rng);
  for (Conv* c : {&refine.reduce, &refine.dilated0, &refine.dilated1, &refine.expand}) fill_parameter(c->weight, 0.0);
  const Tensor f_s = random_tensor({2, 16, 4, 4}, rng);
  const auto half = refine.forward(f_s, NormMode::Train);
  const auto& a = half.attention.values();
  rec("zero refine convolutions give S_A = 1/2", std::all_of(a.begin(), a.end(), [](double x) { return x == 0.5; }));
  fill_parameter(refine.bn.beta, -1000.0);
  rec("spatial refine bypass is the identity", refine.forward(f_s, NormMode::Train).refined.values() == f_s.values());

  JsaTcBlock block("check.block", 16, 16, 4, rng);
  for (Conv* c : {&block.jsa.query, &block.jsa.key, &block.jsa.value}) {
    fill_parameter(c->weight, 0.0);
    if (c->bias) fill_parameter(*c->bias, 0.0);
  }
  fill_parameter(block.tc.weight, 0.0);
  const Tensor x = random_tensor({2, 16, 5, synth::kNumJoints}, rng);
  rec("JSA-TC residual bypass is the identity", block.forward(x, NormMode::Train).values() == x.values());
}

void alignment_checks(const Recorder& rec) {
  const auto subject = synth::synth_subject(21);
  for (std::size_t rows : {7u, 14u, 16u, 64u}) {
    const auto seq = synth::render_sequence(subject, synth::Condition::NM, 54, 12, 4).skeleton;
    const auto y = neck_normalize(seq.joints, seq.frames);
    const auto ranges = motion_ranges(y, seq.frames, body_parts(), rows);
    double gmin = std::numeric_limits<double>::infinity(), gmax = -gmin;
    for (std::size_t i = 1; i < y.size(); i += 2) {
      gmin = std::min(gmin, y[i]);
      gmax = std::max(gmax, y[i]);
    }
    bool ok = ranges.size() == body_parts().size();
    for (std::size_t p = 0; ok && p < ranges.size(); ++p) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (std::size_t t = 0; t < seq.frames; ++t)
        for (std::size_t k : body_parts()[p].joints) {
          lo = std::min(lo, y[(t * synth::kNumJoints + k) * 2 + 1]);
          hi = std::max(hi, y[(t * synth::kNumJoints + k) * 2 + 1]);
        }
      // Row r sits at gmin + r / (rows - 1) * span; take the tightest row cover of [lo, hi].
      std::size_t row_lo = 0, row_hi = rows - 1;
      for (std::size_t r = 0; r < rows; ++r) {
        const double at = gmin + static_cast<double>(r) / static_cast<double>(rows - 1) * (gmax - gmin);
        if (at <= lo + 1e-9 * (gmax - gmin)) row_lo = r;
      }
      for (std::size_t r = rows; r-- > 0;) {
        const double at = gmin + static_cast<double>(r) / static_cast<double>(rows - 1) * (gmax - gmin);
        if (at >= hi - 1e-9 * (gmax - gmin)) row_hi = r;
      }
      ok = ranges[p].h_f == lo && ranges[p].h_e == hi && ranges[p].row_lo == row_lo && ranges[p].row_hi == row_hi;
    }
    rec("motion ranges, " + std::to_string(rows) + " rows", ok);
  }
}

void triplet_checks(const Recorder& rec) {
  Rng rng(17);
  bool all = true;
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 4 + rng.below(9), e = 3, parts = 2;
    std::vector<std::uint32_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<std::uint32_t>(i % 3);
    const Tensor x = random_tensor({n, e, parts}, rng);
    const auto r = triplet_ba_loss(x, labels, 0.2);
    const auto& v = x.values();
    double total = 0.0;
    for (std::size_t p = 0; p < parts; ++p) {
      auto dist = [&](std::size_t i, std::size_t j) {
        double s = 0.0;
        for (std::size_t c = 0; c < e; ++c) s += std::pow(v[(i * e + c) * parts + p] - v[(j * e + c) * parts + p], 2);
        return std::sqrt(s);
      };
      double sum = 0.0;
      std::size_t active = 0;
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t q = 0; q < n; ++q)
          for (std::size_t m = 0; m < n; ++m) {
            if (q == a || labels[q] != labels[a] || labels[m] == labels[a]) continue;
            const double h = std::max(0.0, 0.2 + dist(a, q) - dist(a, m));
            if (h > 0.0) {
              sum += h;
              ++active;
            }
          }
      total += active ? sum / static_cast<double>(active) : 0.0;
    }
    const double err = std::abs(r.loss.item() - total / static_cast<double>(parts));
    worst = std::max(worst, err);
    all = all && err <= 1e-9;
  }
  rec("BA+ equals exhaustive enumeration", all, "max err " + fmt(worst));
}

void rank1_checks(const Recorder& rec) {
  Rng rng(23);
  std::vector<Embedding> gallery, probes;
  for (std::uint32_t s = 0; s < 4; ++s)
    for (std::uint32_t view : {0u, 36u, 90u})
      for (std::uint32_t i = 0; i < 6; ++i) {
        Embedding e;
        e.meta = {s, i < 4 ? synth::Condition::NM : synth::Condition::BG, view, i};
        e.dim = 2;
        e.parts = 3;
        for (int k = 0; k < 6; ++k) e.values.push_back(rng.uniform(-1.0, 1.0) + 0.5 * s);
        (i < 4 ? gallery : probes).push_back(e);
      }
  const EvalReport r = rank1(gallery, probes);
  bool ok = true;
  for (std::size_t pv = 0; pv < r.views.size(); ++pv)
    for (std::size_t gv = 0; gv < r.views.size(); ++gv) {
      std::size_t n = 0, correct = 0;
      for (const auto& p : probes) {
        if (p.meta.view != r.views[pv] || p.meta.condition != synth::Condition::BG) continue;
        double best = std::numeric_limits<double>::infinity();
        std::uint32_t who = 0;
        for (const auto& g : gallery) {
          if (g.meta.view != r.views[gv]) continue;
          double d = 0.0;
          for (std::size_t part = 0; part < 3; ++part) {
            double s = 0.0;
            for (std::size_t c = 0; c < 2; ++c) s += std::pow(p.values[c * 3 + part] - g.values[c * 3 + part], 2);
            d += std::sqrt(s);
          }
          if (d < best) {
            best = d;
            who = g.meta.subject_id;
          }
        }
        ++n;
        correct += who == p.meta.subject_id;
      }
      const EvalCell& cell = r.cell(1, pv, gv);
      ok = ok && cell.probes == n && cell.correct == correct;
    }
  rec("rank-1 equals exhaustive nearest neighbour", ok);
  rec("identical-view cells excluded", r.counted_cells(1) == 6);
}

const std::vector<std::pair<std::string, std::function<void(const Recorder&)>>>& registry() {
  static const std::vector<std::pair<std::string, std::function<void(const Recorder&)>>> r = {
      {"grad", grad_checks},           {"branches", branch_checks}, {"softmax", softmax_checks}, {"sigmoid", sigmoid_checks},
      {"gem", gem_checks},             {"jsa", jsa_checks},         {"attention", attention_checks},         {"alignment", alignment_checks},
      {"triplet", triplet_checks},     {"rank1", rank1_checks},
  };
  return r;
}

}  // namespace

const std::vector<std::string>& check_groups() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& [name, fn] : registry()) n.push_back(name);
    return n;
  }();
  return names;
}

std::vector<CheckResult> run_checks(const std::vector<std::string>& only) {
  for (const auto& g : only) {
    if (std::find(check_groups().begin(), check_groups().end(), g) == check_groups().end()) {
      throw Error("unknown check group '" + g + "'");
    }
  }
  std::vector<CheckResult> out;
  for (const auto& [name, fn] : registry()) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    try {
      fn(Recorder{name, &out});
    } catch (const std::exception& e) {
      out.push_back({name, "completed without error", false, e.what()});
    }
  }
  return out;
}

}  // namespace trigait
