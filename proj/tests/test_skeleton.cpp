#include <cmath>

#include "doctest.h"
#include "test_util.hpp"
#include "trigait/gradcheck.hpp"
#include "trigait/skeleton.hpp"
#include "trigait/synth.hpp"

using namespace trigait;
using trigait::test::max_abs_diff;
using trigait::test::random_tensor;
using synth::kNumJoints;

namespace {

SkeletonConfig mini_config() {
  SkeletonConfig c;
  c.channels = {16, 16, 32, 32};
  c.heads = 4;
  return c;
}

std::vector<double> random_joints(std::size_t frames, Rng& rng) {
  std::vector<double> j(frames * kNumJoints * 2);
  // Multiples of 1/16 keep coordinate differences exact.
  for (double& v : j) v = std::round(rng.uniform(0.0, 64.0) * 16.0) / 16.0;
  return j;
}

// Key biases cancel inside the softmax and value biases inside the following
// train-mode batch norm, so their true gradient is zero and finite differences
// measure only rounding noise.
std::vector<Tensor> checked_parameters(Module& m) {
  std::vector<Tensor> out;
  for (Parameter* p : m.parameters()) {
    const auto& n = p->name;
    if (n.ends_with("key.bias") || n.ends_with("value.bias")) continue;
    out.push_back(p->value);
  }
  return out;
}

// Channel c of a [10, T, K] tensor.
std::vector<double> channel(const Tensor& x, std::size_t c) {
  const std::size_t plane = x.dim(1) * x.dim(2);
  return {x.values().begin() + static_cast<long>(c * plane), x.values().begin() + static_cast<long>((c + 1) * plane)};
}

void zero_block(JsaTcBlock& b) {
  for (Conv* c : {&b.jsa.query, &b.jsa.key, &b.jsa.value}) {
    fill_parameter(c->weight, 0.0);
    if (c->bias) fill_parameter(*c->bias, 0.0);
  }
  fill_parameter(b.tc.weight, 0.0);
}

}  // namespace

TEST_CASE("multi_input channels") {
  Rng rng(1);
  const std::size_t T = 6;
  const auto joints = random_joints(T, rng);
  const Tensor x = multi_input(joints, T, 1.0);
  REQUIRE(x.shape() == Shape{10, T, kNumJoints});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t k = 0; k < kNumJoints; ++k) {
      const auto J = [&](std::size_t tt, std::size_t kk, std::size_t c) { return joints[(tt * kNumJoints + kk) * 2 + c]; };
      CHECK(x.at({0, t, k}) == J(t, k, 0));
      CHECK(x.at({3, t, k}) == (t + 1 < T ? J(t + 1, k, 1) - J(t, k, 1) : 0.0));
      CHECK(x.at({4, t, k}) == (t + 2 < T ? J(t + 2, k, 0) - J(t, k, 0) : 0.0));
      const std::size_t p = synth::kParent[k];
      CHECK(x.at({7, t, k}) == J(t, k, 1) - J(t, p, 1));
      const double norm = std::hypot(x.at({8, t, k}), x.at({9, t, k}));
      if (p == k)
        CHECK(norm == 0.0);
      else
        CHECK(std::abs(norm - 1.0) < 1e-9);
    }
  CHECK_THROWS(multi_input(random_joints(2, rng), 2));
  CHECK_THROWS(multi_input(std::vector<double>(10), 3));
}

TEST_CASE("multi_input motion is zero for a static pose") {
  Rng rng(2);
  const auto frame = random_joints(1, rng);
  std::vector<double> joints;
  for (int t = 0; t < 5; ++t) joints.insert(joints.end(), frame.begin(), frame.end());
  const Tensor x = multi_input(joints, 5);
  for (std::size_t c = 2; c < 6; ++c)
    for (double v : channel(x, c)) CHECK(v == 0.0);
}

TEST_CASE("multi_input relative channels ignore translation") {
  Rng rng(3);
  auto joints = random_joints(7, rng);
  const Tensor a = multi_input(joints, 7);
  for (double& v : joints) v += 8.0;  // exactly representable shift keeps differences exact
  const Tensor b = multi_input(joints, 7);
  CHECK(channel(a, 0) != channel(b, 0));
  for (std::size_t c = 2; c < 10; ++c) CHECK(channel(a, c) == channel(b, c));
}

TEST_CASE("adaptive pooling from 17 to 16 averages neighbour pairs") {
  Rng rng(4);
  const Tensor x = random_tensor({3, 17}, rng);
  const Tensor y = adaptive_avg_pool_last(x, 16);
  REQUIRE(y.shape() == Shape{3, 16});
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t j = 0; j < 16; ++j)
      CHECK(std::abs(y.at({r, j}) - 0.5 * (x.at({r, j}) + x.at({r, j + 1}))) < 1e-15);
  const Tensor same = adaptive_avg_pool_last(x, 17);
  CHECK(same.values() == x.values());
}

TEST_CASE("joint self-attention two-joint example") {
  Rng rng(5);
  JointSelfAttention jsa("jsa", 2, 1, 1, rng);
  jsa.query.weight.value.data()[0] = 1.0;
  jsa.query.weight.value.data()[1] = 0.0;
  jsa.key.weight.value.data()[0] = 1.0;
  jsa.key.weight.value.data()[1] = 0.0;
  jsa.value.weight.value.data()[0] = 0.0;
  jsa.value.weight.value.data()[1] = 1.0;
  for (Conv* c : {&jsa.query, &jsa.key, &jsa.value}) fill_parameter(*c->bias, 0.0);
  // Channel 0 carries q = k = [1, 0]; channel 1 carries v = [2, 4].
  const Tensor x({1, 2, 1, 2}, {1.0, 0.0, 2.0, 4.0});
  const Tensor y = jsa.forward(x);
  const double e = std::exp(1.0);
  CHECK(std::abs(y.at({0, 0, 0, 0}) - (e / (e + 1.0) * 2.0 + 1.0 / (e + 1.0) * 4.0)) < 1e-12);
  CHECK(y.at({0, 0, 0, 0}) == doctest::Approx(2.538).epsilon(1e-3));
  CHECK(y.at({0, 0, 0, 1}) == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("joint self-attention symmetry cases") {
  Rng rng(6);
  JointSelfAttention jsa("jsa", 6, 8, 4, rng);
  // One joint: softmax over a single element is 1, so output = value projection.
  const Tensor one = random_tensor({1, 6, 3, 1}, rng);
  CHECK(max_abs_diff(jsa.forward(one).values(), jsa.value.forward(one).values()) < 1e-15);
  // Identical joints: uniform attention and the mean of the values.
  const Tensor col = random_tensor({1, 6, 3, 1}, rng);
  const Tensor same = concat({col, col, col, col, col}, 3);
  Tensor probs;
  const Tensor y = jsa.forward(same, &probs);
  for (double p : probs.values()) CHECK(std::abs(p - 0.2) < 1e-15);
  const Tensor v_mean = mean(jsa.value.forward(same), {3}, true);
  for (std::size_t k = 0; k < 5; ++k)
    CHECK(max_abs_diff(narrow(y, 3, k, 1).values(), v_mean.values()) < 1e-14);
  CHECK_THROWS(JointSelfAttention("bad", 6, 10, 4, rng));
}

TEST_CASE("attention rows sum to one and frames stay local") {
  Rng rng(7);
  JointSelfAttention jsa("jsa", 10, 16, 4, rng);
  Tensor x = random_tensor({2, 10, 4, kNumJoints}, rng, false, -3.0, 3.0);
  Tensor probs;
  const Tensor y = jsa.forward(x, &probs);
  const std::size_t K = kNumJoints;
  const auto& p = probs.values();
  for (std::size_t row = 0; row < p.size() / K; ++row) {
    double s = 0.0;
    for (std::size_t j = 0; j < K; ++j) s += p[row * K + j];
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
  Tensor x2 = x.clone();
  for (std::size_t c = 0; c < 10; ++c)
    for (std::size_t k = 0; k < K; ++k) x2.data()[((0 * 10 + c) * 4 + 2) * K + k] += 1.0;
  const Tensor y2 = jsa.forward(x2);
  for (std::size_t t : {0, 1, 3}) CHECK(narrow(y, 2, t, 1).values() == narrow(y2, 2, t, 1).values());
  CHECK(narrow(y, 2, 2, 1).values() != narrow(y2, 2, 2, 1).values());
}

TEST_CASE("joint self-attention commutes with frame permutation") {
  Rng rng(8);
  JointSelfAttention jsa("jsa", 10, 16, 4, rng);
  const Tensor x = random_tensor({1, 10, 5, kNumJoints}, rng);
  const std::vector<std::size_t> perm = {3, 0, 4, 2, 1};
  const Tensor a = index_select(jsa.forward(x), 2, perm);
  const Tensor b = jsa.forward(index_select(x, 2, perm));
  CHECK(a.values() == b.values());
}

TEST_CASE("JSA-TC block residual identity and shape") {
  Rng rng(9);
  JsaTcBlock same("b", 16, 16, 4, rng);
  zero_block(same);
  const Tensor x = random_tensor({2, 16, 5, kNumJoints}, rng);
  CHECK(same.forward(x, NormMode::Train).values() == x.values());

  JsaTcBlock first("b1", 10, 64, 8, rng);
  REQUIRE(first.projection.has_value());
  CHECK(first.forward(random_tensor({1, 10, 5, kNumJoints}, rng), NormMode::Train).shape() ==
        Shape{1, 64, 5, kNumJoints});

  // TC zeroed: the block reduces to its residual path, which acts per frame.
  fill_parameter(first.tc.weight, 0.0);
  const Tensor in = random_tensor({1, 10, 5, kNumJoints}, rng);
  const std::vector<std::size_t> perm = {4, 2, 0, 1, 3};
  const Tensor a = index_select(first.forward(in, NormMode::Train), 2, perm);
  const Tensor b = first.forward(index_select(in, 2, perm), NormMode::Train);
  CHECK(max_abs_diff(a.values(), b.values()) < 1e-14);
}

TEST_CASE("skeleton branch output at full size") {
  Rng rng(10);
  SkeletonBranch branch(SkeletonConfig{}, rng);
  const auto out = branch.forward(unsqueeze(multi_input(random_joints(5, rng), 5), 0), NormMode::Train);
  CHECK(out.f_y.shape() == Shape{1, 64, 5, kNumJoints});
  CHECK(out.f_ske.shape() == Shape{1, 256, kNumJoints});
  CHECK(out.gait.shape() == Shape{1, 256, 16});
  CHECK(out.attention.size() == 4);
  CHECK(out.attention[0].shape() == Shape{1, 8, 5, kNumJoints, kNumJoints});
}

TEST_CASE("skeleton branch zero input and frame order with TC disabled") {
  Rng rng(11);
  SkeletonBranch branch(mini_config(), rng);
  const auto z = branch.forward(Tensor::zeros({1, 10, 5, kNumJoints}), NormMode::Train);
  for (double v : z.gait.values()) CHECK(std::isfinite(v));

  for (auto& b : branch.blocks) fill_parameter(b.tc.weight, 0.0);
  const Tensor x = unsqueeze(multi_input(random_joints(6, rng), 6), 0);
  const Tensor shuffled = index_select(x, 2, {5, 1, 3, 0, 2, 4});
  const auto a = branch.forward(x, NormMode::Train);
  const auto b = branch.forward(shuffled, NormMode::Train);
  CHECK(max_abs_diff(a.gait.values(), b.gait.values()) < 1e-13);
}

TEST_CASE("JSA-TC block gradient check on a small skeleton") {
  Rng rng(12);
  JsaTcBlock block("b", 6, 8, 2, rng);
  const Tensor x = random_tensor({2, 6, 3, 4}, rng, true);
  std::vector<Tensor> inputs = {x};
  for (const Tensor& p : checked_parameters(block)) inputs.push_back(p);
  const auto r = gradcheck([&](const std::vector<Tensor>& in) { return block.forward(in[0], NormMode::Train); }, inputs);
  INFO(r.worst);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("skeleton branch gradient check") {
  Rng rng(13);
  SkeletonBranch branch(mini_config(), rng);
  Tensor x = unsqueeze(multi_input(random_joints(5, rng), 5), 0);
  x = concat({x, unsqueeze(multi_input(random_joints(5, rng), 5), 0)}, 0);
  x.set_requires_grad(true);
  std::vector<Tensor> inputs = {x};
  for (const Tensor& p : checked_parameters(branch)) inputs.push_back(p);
  GradCheckOptions opt;
  opt.max_coords = 6;
  const auto r = gradcheck([&](const std::vector<Tensor>& in) { return branch.forward(in[0], NormMode::Train).gait; },
                           inputs, opt);
  INFO(r.worst);
  CHECK(r.coords_checked > 100);
  CHECK(r.max_rel_error < 1e-4);
}
