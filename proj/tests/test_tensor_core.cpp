#include <cmath>
#include <cstring>
#include <filesystem>
#include <numbers>

#include "doctest.h"
#include "trigait/binary_io.hpp"
#include "trigait/checkpoint.hpp"
#include "trigait/gradcheck.hpp"
#include "trigait/nn.hpp"
#include "trigait/ops.hpp"
#include "trigait/optim.hpp"
#include "trigait/rng.hpp"

using namespace trigait;

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, bool grad = true, double lo = -1.0, double hi = 1.0) {
  std::vector<double> d(shape_numel(shape));
  for (double& v : d) v = rng.uniform(lo, hi);
  return Tensor(shape, std::move(d), grad);
}

// Direct sliding-window 2-D cross-correlation, written independently of conv().
std::vector<double> naive_conv2d(const Tensor& x, const Tensor& k, std::size_t sh, std::size_t sw,
                                 std::size_t dh, std::size_t dw, std::size_t ph, std::size_t pw,
                                 std::size_t& oh, std::size_t& ow) {
  const auto& xs = x.shape();
  const auto& ks = k.shape();
  const long H = static_cast<long>(xs[2]), W = static_cast<long>(xs[3]);
  oh = static_cast<std::size_t>((H + 2 * static_cast<long>(ph) - static_cast<long>(dh * (ks[2] - 1)) - 1) / static_cast<long>(sh) + 1);
  ow = static_cast<std::size_t>((W + 2 * static_cast<long>(pw) - static_cast<long>(dw * (ks[3] - 1)) - 1) / static_cast<long>(sw) + 1);
  std::vector<double> out(xs[0] * ks[0] * oh * ow, 0.0);
  for (std::size_t n = 0; n < xs[0]; ++n)
    for (std::size_t co = 0; co < ks[0]; ++co)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t z = 0; z < ow; ++z) {
          double acc = 0.0;
          for (std::size_t ci = 0; ci < xs[1]; ++ci)
            for (std::size_t a = 0; a < ks[2]; ++a)
              for (std::size_t b = 0; b < ks[3]; ++b) {
                const long iy = static_cast<long>(y * sh + a * dh) - static_cast<long>(ph);
                const long iz = static_cast<long>(z * sw + b * dw) - static_cast<long>(pw);
                if (iy < 0 || iy >= H || iz < 0 || iz >= W) continue;
                acc += x.at({n, ci, static_cast<std::size_t>(iy), static_cast<std::size_t>(iz)}) *
                       k.at({co, ci, a, b});
              }
          out[((n * ks[0] + co) * oh + y) * ow + z] = acc;
        }
  return out;
}

}  // namespace

TEST_CASE("conv: 1-D sliding window example") {
  Tensor x({1, 1, 3}, {1, 2, 3});
  Tensor k({1, 1, 2}, {1, 1});
  Tensor y = conv(x, k);
  CHECK(y.shape() == Shape{1, 1, 2});
  CHECK(y.values() == std::vector<double>{3, 5});
}

TEST_CASE("conv: zero kernel gives zeros, unit 1x1 kernel is the identity bit-for-bit") {
  Rng rng(3);
  Tensor x = random_tensor({2, 1, 5, 4}, rng, false);
  Tensor z = conv(x, Tensor::zeros({3, 1, 3, 3}), {}, {{}, {}, {1, 1}});
  CHECK(z.shape() == Shape{2, 3, 5, 4});
  for (double v : z.values()) CHECK(v == 0.0);
  Tensor id = conv(x, Tensor::ones({1, 1, 1, 1}));
  CHECK(id.values() == x.values());
  Tensor x3 = random_tensor({1, 1, 3, 4, 4}, rng, false);
  CHECK(conv(x3, Tensor::ones({1, 1, 1, 1, 1})).values() == x3.values());
}

TEST_CASE("conv: matches the naive oracle across stride, dilation and padding") {
  Rng rng(11);
  struct Case { std::size_t sh, sw, dh, dw, ph, pw, kh, kw; };
  for (Case c : {Case{1, 1, 1, 1, 0, 0, 3, 3}, Case{2, 1, 1, 2, 1, 2, 3, 2}, Case{1, 2, 2, 1, 2, 0, 2, 3},
                 Case{3, 3, 1, 1, 1, 1, 3, 3}}) {
    Tensor x = random_tensor({2, 3, 7, 8}, rng, false);
    Tensor k = random_tensor({4, 3, c.kh, c.kw}, rng, false);
    std::size_t oh = 0, ow = 0;
    auto expect = naive_conv2d(x, k, c.sh, c.sw, c.dh, c.dw, c.ph, c.pw, oh, ow);
    Tensor y = conv(x, k, {}, {{c.sh, c.sw}, {c.dh, c.dw}, {c.ph, c.pw}});
    REQUIRE(y.shape() == Shape{2, 4, oh, ow});
    for (std::size_t i = 0; i < expect.size(); ++i) CHECK(y.values()[i] == doctest::Approx(expect[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv: rejects mismatched channels naming both shapes") {
  Tensor x = Tensor::zeros({1, 2, 4, 4});
  Tensor k = Tensor::zeros({1, 3, 3, 3});
  try {
    conv(x, k);
    FAIL("expected rejection");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[1,2,4,4]") != std::string::npos);
    CHECK(msg.find("[1,3,3,3]") != std::string::npos);
  }
}

TEST_CASE("linear examples") {
  Tensor x({1, 2}, {1, 2});
  CHECK(linear(x, Tensor({2, 2}, {1, 0, 1, 1}), Tensor({2}, {0, 1})).values() == std::vector<double>{3, 3});
  CHECK(linear(x, Tensor({2, 2}, {1, 0, 0, 1}), Tensor::zeros({2})).values() == x.values());
  Tensor rows = linear(Tensor({3, 2}, {1, 2, 3, 4, 5, 6}), Tensor::zeros({2, 2}), Tensor({2}, {7, -1}));
  CHECK(rows.values() == std::vector<double>{7, -1, 7, -1, 7, -1});
  CHECK_THROWS_AS(linear(x, Tensor::zeros({3, 2})), Error);
}

TEST_CASE("batch_norm examples") {
  RunningStats stats(1);
  Tensor g = Tensor::ones({1});
  Tensor b = Tensor::zeros({1});
  Tensor constant = Tensor::full({4, 1, 3}, 2.5);
  const Tensor normalized = batch_norm(constant, g, b, stats, NormMode::Train);
  for (double v : normalized.values()) CHECK(v == 0.0);

  RunningStats s2(1);
  Tensor pair({2, 1}, {0, 2});
  Tensor y = batch_norm(pair, g, b, s2, NormMode::Train, 0.1, 0.0);
  CHECK(y.values()[0] == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(y.values()[1] == doctest::Approx(1.0).epsilon(1e-15));
  // Running stats: mean 0.9*0 + 0.1*1, var 0.9*1 + 0.1*2 (unbiased 2).
  CHECK(s2.mean[0] == doctest::Approx(0.1));
  CHECK(s2.var[0] == doctest::Approx(1.1));

  RunningStats s3(1);
  Rng rng(1);
  Tensor any = random_tensor({5, 1, 2}, rng, false);
  const Tensor flat = batch_norm(any, Tensor::zeros({1}), Tensor({1}, {3.25}), s3, NormMode::Train);
  for (double v : flat.values()) CHECK(v == 3.25);

  RunningStats s4(1);
  CHECK_THROWS_AS(batch_norm(Tensor::zeros({0, 1}), g, b, s4, NormMode::Train), Error);
  // Eval mode uses the running statistics.
  RunningStats s5(1);
  s5.mean[0] = 1.0;
  s5.var[0] = 4.0;
  Tensor e = batch_norm(Tensor({1, 1}, {5.0}), g, b, s5, NormMode::Eval, 0.1, 0.0);
  CHECK(e.item() == doctest::Approx(2.0));
}

TEST_CASE("softmax examples and invariants") {
  CHECK(softmax(Tensor({2}, {1, 1}), 0).values() == std::vector<double>{0.5, 0.5});
  CHECK(softmax(Tensor({1}, {-3.0}), 0).item() == 1.0);
  Tensor s = softmax(Tensor({2}, {0, std::log(3.0)}), 0);
  CHECK(s.values()[0] == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(s.values()[1] == doctest::Approx(0.75).epsilon(1e-14));

  Rng rng(5);
  Tensor x = random_tensor({4, 6, 3}, rng, false, -5, 5);
  Tensor y = softmax(x, 1);
  Tensor shifted = softmax(add(x, Tensor({4, 1, 3}, std::vector<double>(12, 17.5))), 1);
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t c = 0; c < 3; ++c) {
      double total = 0;
      for (std::size_t k = 0; k < 6; ++k) {
        const double v = y.at({a, k, c});
        CHECK(v > 0.0);
        CHECK(v <= 1.0);
        CHECK(std::abs(v - shifted.at({a, k, c})) < 1e-12);
        total += v;
      }
      CHECK(std::abs(total - 1.0) < 1e-12);
    }
}

TEST_CASE("sigmoid examples") {
  CHECK(sigmoid(Tensor::scalar(0)).item() == 0.5);
  CHECK(std::abs(sigmoid(Tensor::scalar(30)).item() - 1.0) < 1e-9);
  CHECK(sigmoid(Tensor::scalar(1)).item() == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-15));
  CHECK(sigmoid(Tensor::scalar(1)).item() == doctest::Approx(0.7310585786300049));
  Tensor big = sigmoid(Tensor({3}, {-800, 800, -40}));
  for (double v : big.values()) CHECK(std::isfinite(v));
}

TEST_CASE("pool examples and max tie-break") {
  CHECK(pool(Tensor({3}, {1, 3, 2}), {0}, PoolKind::Max).item() == 3.0);
  CHECK(pool(Tensor({2}, {1, 3}), {0}, PoolKind::Avg).item() == 2.0);
  Tensor x({3}, {1, 3, 3}, true);
  pool(x, {0}, PoolKind::Max).backward();
  CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{0, 1, 0});

  Tensor m({2, 2, 2}, {5, 1, 5, 5, 0, 2, 2, 1}, true);
  sum_all(max(m, {1, 2})).backward();
  CHECK(std::vector<double>(m.grad().begin(), m.grad().end()) == std::vector<double>{1, 0, 0, 0, 0, 1, 0, 0});
}

TEST_CASE("backward examples") {
  Tensor x = Tensor::scalar(0.0, true);
  sigmoid(x).backward();
  CHECK(x.grad()[0] == doctest::Approx(0.25).epsilon(1e-15));

  Tensor v({4}, {1, -2, 3, 0.5}, true);
  sum_all(v).backward();
  for (double g : v.grad()) CHECK(g == 1.0);
  // Repeated backward accumulates until zero_grad.
  sum_all(v).backward();
  for (double g : v.grad()) CHECK(g == 2.0);
  v.zero_grad();
  for (double g : v.grad()) CHECK(g == 0.0);

  CHECK_THROWS_AS(v.backward(), Error);
  CHECK_THROWS_AS(mul_scalar(v, 2.0).backward(), Error);
}

TEST_CASE("gradient check: every differentiable op") {
  Rng rng(2024);
  GradCheckOptions opt;
  auto check = [&](const char* name, auto f, std::vector<Tensor> in) {
    const auto r = gradcheck(f, in, opt);
    INFO(name << " " << r.worst);
    CHECK(r.max_rel_error < 1e-4);
    CHECK(r.coords_checked > 0);
  };
  using V = const std::vector<Tensor>&;
  check("add", [](V t) { return add(t[0], t[1]); }, {random_tensor({3, 4}, rng), random_tensor({4}, rng)});
  check("sub", [](V t) { return sub(t[0], t[1]); }, {random_tensor({2, 1, 3}, rng), random_tensor({4, 1}, rng)});
  check("mul", [](V t) { return mul(t[0], t[1]); }, {random_tensor({3, 4}, rng), random_tensor({3, 1}, rng)});
  check("div", [](V t) { return div(t[0], t[1]); }, {random_tensor({3, 4}, rng), random_tensor({4}, rng, true, 0.5, 1.5)});
  check("exp", [](V t) { return exp(t[0]); }, {random_tensor({5}, rng)});
  check("log", [](V t) { return log(t[0]); }, {random_tensor({5}, rng, true, 0.2, 1.0)});
  check("sigmoid", [](V t) { return sigmoid(t[0]); }, {random_tensor({6}, rng)});
  check("relu", [](V t) { return relu(t[0]); }, {random_tensor({6}, rng)});
  check("leaky_relu", [](V t) { return leaky_relu(t[0], 0.01); }, {random_tensor({6}, rng)});
  check("softplus", [](V t) { return softplus(t[0]); }, {random_tensor({6}, rng)});
  check("pow", [](V t) { return pow_scalar(t[0], 2.5); }, {random_tensor({6}, rng, true, 0.1, 1.0)});
  check("sum", [](V t) { return sum(t[0], {0, 2}); }, {random_tensor({2, 3, 4}, rng)});
  check("mean", [](V t) { return mean(t[0], {1}, true); }, {random_tensor({2, 3, 4}, rng)});
  check("max", [](V t) { return max(t[0], {-1}); }, {random_tensor({3, 5}, rng)});
  check("reshape", [](V t) { return reshape(t[0], {6, 2}); }, {random_tensor({3, 4}, rng)});
  check("permute", [](V t) { return permute(t[0], {2, 0, 1}); }, {random_tensor({2, 3, 4}, rng)});
  check("narrow", [](V t) { return narrow(t[0], 1, 1, 2); }, {random_tensor({2, 4, 3}, rng)});
  check("concat", [](V t) { return concat({t[0], t[1]}, 1); }, {random_tensor({2, 2, 3}, rng), random_tensor({2, 1, 3}, rng)});
  check("index_select", [](V t) { return index_select(t[0], 1, {3, 0, 3}); }, {random_tensor({2, 4}, rng)});
  check("matmul", [](V t) { return matmul(t[0], t[1]); }, {random_tensor({2, 3, 4}, rng), random_tensor({2, 4, 5}, rng)});
  check("matmul_shared", [](V t) { return matmul(t[0], t[1]); }, {random_tensor({2, 3, 4}, rng), random_tensor({4, 2}, rng)});
  check("linear", [](V t) { return linear(t[0], t[1], t[2]); }, {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng), random_tensor({2}, rng)});
  check("conv1d", [](V t) { return conv(t[0], t[1], t[2], {{1}, {2}, {2}}); },
        {random_tensor({2, 2, 7}, rng), random_tensor({3, 2, 3}, rng), random_tensor({3}, rng)});
  check("conv2d_strided", [](V t) { return conv(t[0], t[1], {}, {{2, 1}, {1, 2}, {1, 1}}); },
        {random_tensor({2, 2, 6, 5}, rng), random_tensor({2, 2, 3, 2}, rng)});
  check("conv3d", [](V t) { return conv(t[0], t[1], {}, {{}, {}, {1, 1, 1}}); },
        {random_tensor({1, 2, 3, 4, 4}, rng), random_tensor({2, 2, 3, 3, 3}, rng)});
  check("softmax", [](V t) { return softmax(t[0], 1); }, {random_tensor({3, 4, 2}, rng)});
  check("log_softmax", [](V t) { return log_softmax(t[0], -1); }, {random_tensor({3, 4}, rng)});
  check("layer_norm", [](V t) { return layer_norm(t[0], t[1], t[2]); },
        {random_tensor({3, 5}, rng), random_tensor({5}, rng), random_tensor({5}, rng)});
  auto stats = std::make_shared<RunningStats>(3);
  check("batch_norm_train", [stats](V t) { return batch_norm(t[0], t[1], t[2], *stats, NormMode::Train); },
        {random_tensor({4, 3, 2}, rng), random_tensor({3}, rng), random_tensor({3}, rng)});
  check("batch_norm_eval", [stats](V t) { return batch_norm(t[0], t[1], t[2], *stats, NormMode::Eval); },
        {random_tensor({4, 3, 2}, rng), random_tensor({3}, rng), random_tensor({3}, rng)});
  check("composite", [](V t) { return softmax(mul(sigmoid(matmul(t[0], t[1])), t[0]), 0); },
        {random_tensor({3, 3}, rng), random_tensor({3, 3}, rng)});
}

TEST_CASE("sgd_step examples") {
  Parameter w("w", Tensor::scalar(1.0));
  w.value.mutable_grad()[0] = 1.0;
  sgd_step({&w}, {0.1, 0.0, 0.0});
  CHECK(w.value.item() == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(w.value.grad()[0] == 1.0);  // gradients left intact

  Parameter still("s", Tensor::scalar(2.0));
  still.value.mutable_grad()[0] = 0.0;
  sgd_step({&still}, {0.1, 0.9, 0.0});
  CHECK(still.value.item() == 2.0);

  Parameter m("m", Tensor::scalar(0.0));
  m.value.mutable_grad()[0] = 1.0;
  sgd_step({&m}, {0.1, 0.9, 0.0});
  CHECK(m.value.item() == doctest::Approx(-0.1).epsilon(1e-15));
  sgd_step({&m}, {0.1, 0.9, 0.0});
  CHECK(m.value.item() == doctest::Approx(-0.29).epsilon(1e-14));

  Parameter missing("no_grad", Tensor::scalar(1.0));
  auto skipped = sgd_step({&missing}, {});
  REQUIRE(skipped.size() == 1);
  CHECK(skipped[0] == "no_grad");
  CHECK(missing.value.item() == 1.0);
}

TEST_CASE("checkpoint: bit-exact round trip and corrupt input") {
  std::vector<CheckpointRecord> recs = {
      {"a.weight", {2, 3}, {1.5, -0.0, 1e-300, std::nextafter(1.0, 2.0), -7.25, 3.0}},
      {"scalar", {}, {std::numbers::pi}},
  };
  const auto path = std::filesystem::temp_directory_path() / "trigait_ckpt_test.tgck";
  write_checkpoint(path, recs);
  const std::string bytes = io::read_file(path);
  CHECK(bytes.substr(0, 4) == "TGCK");
  auto back = read_checkpoint(path);
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].name == recs[i].name);
    CHECK(back[i].shape == recs[i].shape);
    CHECK(std::memcmp(back[i].data.data(), recs[i].data.data(), recs[i].data.size() * 8) == 0);
  }
  CHECK(encode_checkpoint(back) == bytes);
  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad), Error);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), Error);
  std::filesystem::remove(path);
}

TEST_CASE("determinism: identical seeds give bit-identical conv outputs") {
  auto run = [] {
    Rng rng(99);
    Conv c("c", {2, 3, {3, 3}, {}, {1, 1}, true}, rng);
    Tensor x = random_tensor({2, 2, 5, 5}, rng, false);
    return c.forward(x).values();
  };
  CHECK(run() == run());
}
