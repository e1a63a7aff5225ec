#include <algorithm>
#include <cmath>
#include <limits>

#include "doctest.h"
#include "test_util.hpp"
#include "trigait/fusion.hpp"
#include "trigait/gradcheck.hpp"
#include "trigait/synth.hpp"

using namespace trigait;
using trigait::test::max_abs_diff;
using trigait::test::random_tensor;
using synth::kNumJoints;

namespace {

std::vector<double> random_skeleton(std::size_t frames, Rng& rng) {
  std::vector<double> j(frames * kNumJoints * 2);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t k = 0; k < kNumJoints; ++k) {
      j[(t * kNumJoints + k) * 2] = rng.uniform(20.0, 40.0);
      // Head near the top, ankles near the bottom, with jitter.
      j[(t * kNumJoints + k) * 2 + 1] = 8.0 + 3.0 * static_cast<double>(k) + rng.uniform(-4.0, 4.0);
    }
  return j;
}

void set_v(std::vector<double>& j, std::size_t t, std::size_t k, double v) { j[(t * kNumJoints + k) * 2 + 1] = v; }

// Two frames whose per-part vertical extents land exactly on the uniform 16-row bands.
std::vector<double> band_fixture() {
  std::vector<double> j(2 * kNumJoints * 2, 0.0);
  const double rows[2][kNumJoints] = {
      {0, 1, 1, 2, 2, 3, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15},
      {2, 1, 1, 0, 0, 3, 5, 7, 6, 9, 8, 10, 11, 13, 12, 15, 14},
  };
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t k = 0; k < kNumJoints; ++k) {
      j[(t * kNumJoints + k) * 2] = 30.0 + static_cast<double>(k);
      set_v(j, t, k, rows[t][k]);
    }
  return j;
}

// Independent min/max and row mapping over the normalized joints.
std::vector<PartRange> brute_ranges(const std::vector<double>& y, std::size_t frames, std::size_t rows) {
  double gmin = std::numeric_limits<double>::max(), gmax = std::numeric_limits<double>::lowest();
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t k = 0; k < kNumJoints; ++k) {
      gmin = std::min(gmin, y[(t * kNumJoints + k) * 2 + 1]);
      gmax = std::max(gmax, y[(t * kNumJoints + k) * 2 + 1]);
    }
  std::vector<PartRange> out;
  for (const auto& part : body_parts()) {
    PartRange r;
    r.h_f = std::numeric_limits<double>::max();
    r.h_e = std::numeric_limits<double>::lowest();
    for (std::size_t t = 0; t < frames; ++t)
      for (std::size_t k : part.joints) {
        r.h_f = std::min(r.h_f, y[(t * kNumJoints + k) * 2 + 1]);
        r.h_e = std::max(r.h_e, y[(t * kNumJoints + k) * 2 + 1]);
      }
    const double scale = static_cast<double>(rows - 1) / (gmax - gmin);
    long lo = static_cast<long>(std::floor((r.h_f - gmin) * scale + 1e-9));
    long hi = static_cast<long>(std::ceil((r.h_e - gmin) * scale - 1e-9));
    lo = std::clamp(lo, 0L, static_cast<long>(rows - 1));
    hi = std::clamp(hi, lo, static_cast<long>(rows - 1));
    r.row_lo = static_cast<std::size_t>(lo);
    r.row_hi = static_cast<std::size_t>(hi);
    out.push_back(r);
  }
  return out;
}

std::vector<std::vector<PartRange>> repeat(const std::vector<PartRange>& r, std::size_t n) { return {n, r}; }

}  // namespace

TEST_CASE("body parts partition the 17 keypoints") {
  std::vector<int> seen(kNumJoints, 0);
  for (const auto& p : body_parts())
    for (std::size_t k : p.joints) ++seen[k];
  CHECK(body_parts().size() == 7);
  for (int s : seen) CHECK(s == 1);
  CHECK(body_parts()[0].name == "head");
  CHECK(body_parts()[6].name == "ankle");
}

TEST_CASE("neck normalization") {
  // Hips at the origin and the shoulder midpoint at vertical distance 1: unchanged.
  std::vector<double> fixed(kNumJoints * 2, 0.0);
  Rng rng(1);
  for (double& v : fixed) v = rng.uniform(-1.0, 1.0);
  for (double sign : {1.0, -1.0}) {
    set_v(fixed, 0, 11, 0.25);
    set_v(fixed, 0, 12, -0.25);
    fixed[11 * 2] = 0.5;
    fixed[12 * 2] = -0.5;
    set_v(fixed, 0, 5, sign * 1.5);
    set_v(fixed, 0, 6, sign * 0.5);
    CHECK(max_abs_diff(neck_normalize(fixed, 1), fixed) < 1e-15);
  }

  // Shoulders at v = -2 and hips at v = 0: every coordinate is halved.
  std::vector<double> two(2 * kNumJoints * 2);
  for (double& v : two) v = rng.uniform(-3.0, 3.0);
  for (std::size_t t = 0; t < 2; ++t) {
    set_v(two, t, 5, -2.0);
    set_v(two, t, 6, -2.0);
    set_v(two, t, 11, 0.0);
    set_v(two, t, 12, 0.0);
    two[(t * kNumJoints + 11) * 2] = 0.0;
    two[(t * kNumJoints + 12) * 2] = 0.0;
  }
  const auto half = neck_normalize(two, 2);
  for (std::size_t i = 0; i < two.size(); ++i) CHECK(half[i] == two[i] * 0.5);

  // Uniform scaling of the input changes nothing.
  const auto raw = random_skeleton(4, rng);
  auto scaled = raw;
  for (double& v : scaled) v *= 2.0;
  CHECK(neck_normalize(raw, 4) == neck_normalize(scaled, 4));

  auto flat = raw;
  set_v(flat, 2, 5, 0.0);
  set_v(flat, 2, 6, 0.0);
  set_v(flat, 2, 11, 0.0);
  set_v(flat, 2, 12, 0.0);
  try {
    neck_normalize(flat, 4);
    FAIL("expected rejection");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("frame 2") != std::string::npos);
  }
}

TEST_CASE("motion ranges match the brute-force oracle") {
  Rng rng(2);
  for (std::size_t trial = 0; trial < 40; ++trial) {
    const std::size_t frames = 1 + trial % 9;
    const std::size_t rows = std::vector<std::size_t>{7, 14, 16, 64}[trial % 4];
    const auto y = neck_normalize(random_skeleton(frames, rng), frames);
    const auto got = motion_ranges(y, frames, body_parts(), rows);
    const auto want = brute_ranges(y, frames, rows);
    REQUIRE(got.size() == want.size());
    for (std::size_t p = 0; p < got.size(); ++p) {
      CHECK(got[p].h_f == want[p].h_f);
      CHECK(got[p].h_e == want[p].h_e);
      CHECK(got[p].row_lo == want[p].row_lo);
      CHECK(got[p].row_hi == want[p].row_hi);
      CHECK(got[p].h_f <= got[p].h_e);
      CHECK(got[p].row_hi < rows);
    }
  }
}

TEST_CASE("motion ranges small cases") {
  Rng rng(3);
  // Static level pose (joints of one part at one height): H_f == H_e.
  auto one = random_skeleton(1, rng);
  for (const auto& part : body_parts())
    for (std::size_t k : part.joints) set_v(one, 0, k, one[part.joints.front() * 2 + 1]);
  std::vector<double> still;
  for (int t = 0; t < 3; ++t) still.insert(still.end(), one.begin(), one.end());
  for (const auto& r : motion_ranges(neck_normalize(still, 3), 3, body_parts(), 16)) CHECK(r.h_f == r.h_e);

  // Two frames with an ankle at 0.9 and 1.1.
  std::vector<double> y(2 * kNumJoints * 2, 0.0);
  set_v(y, 0, 15, 0.9);
  set_v(y, 1, 15, 1.1);
  set_v(y, 0, 16, 1.0);
  set_v(y, 1, 16, 1.0);
  set_v(y, 0, 0, -1.5);
  const auto r = motion_ranges(y, 2, body_parts(), 16);
  CHECK(r[6].h_f == 0.9);
  CHECK(r[6].h_e == 1.1);
  // The whole-body span covers rows 0 and 15.
  const std::vector<PartDef> whole = {{"all", {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16}}};
  const auto all = motion_ranges(y, 2, whole, 16);
  CHECK(all[0].row_lo == 0);
  CHECK(all[0].row_hi == 15);
  CHECK_THROWS(motion_ranges(y, 2, {{"empty", {}}}, 16));
}

TEST_CASE("motion ranges ignore global scale") {
  Rng rng(4);
  const auto raw = random_skeleton(6, rng);
  auto scaled = raw;
  for (double& v : scaled) v *= 4.0;
  const auto a = motion_ranges(neck_normalize(raw, 6), 6, body_parts(), 16);
  const auto b = motion_ranges(neck_normalize(scaled, 6), 6, body_parts(), 16);
  for (std::size_t p = 0; p < a.size(); ++p) {
    CHECK(a[p].h_f == b[p].h_f);
    CHECK(a[p].h_e == b[p].h_e);
    CHECK(a[p].row_lo == b[p].row_lo);
    CHECK(a[p].row_hi == b[p].row_hi);
  }
}

TEST_CASE("uniform partition bands") {
  const auto b14 = uniform_partition_ranges(14);
  REQUIRE(b14.size() == 7);
  for (std::size_t i = 0; i < 7; ++i) {
    CHECK(b14[i].row_lo == 2 * i);
    CHECK(b14[i].row_hi == 2 * i + 1);
  }
  const auto b16 = uniform_partition_ranges(16);
  const std::size_t heights[7] = {3, 3, 2, 2, 2, 2, 2};
  std::size_t row = 0;
  for (std::size_t i = 0; i < 7; ++i) {
    CHECK(b16[i].row_lo == row);
    CHECK(b16[i].row_hi - b16[i].row_lo + 1 == heights[i]);
    row += heights[i];
  }
  CHECK(row == 16);
  CHECK_THROWS(uniform_partition_ranges(5));
}

TEST_CASE("band fixture reproduces the uniform bands") {
  const auto y = band_fixture();
  const auto motion = motion_ranges(neck_normalize(y, 2), 2, body_parts(), 16);
  const auto uniform = uniform_partition_ranges(16);
  for (std::size_t p = 0; p < 7; ++p) {
    CHECK(motion[p].row_lo == uniform[p].row_lo);
    CHECK(motion[p].row_hi == uniform[p].row_hi);
  }
}

TEST_CASE("ranges tsv layout") {
  const auto text = ranges_tsv(uniform_partition_ranges(14), body_parts());
  CHECK(text.rfind("part\tH_f\tH_e\trow_lo\trow_hi\n", 0) == 0);
  CHECK(text.find("\nankle\t") != std::string::npos);
  CHECK(std::count(text.begin(), text.end(), '\n') == 8);
}

TEST_CASE("cross-modal tokens pool each part") {
  Rng rng(5);
  const std::size_t T = 3, H = 16, W = 5;
  const Tensor f_x = random_tensor({2, 4, T, H, W}, rng);
  const Tensor f_y = random_tensor({2, 6, T, kNumJoints}, rng);
  const auto ranges = repeat(motion_ranges(neck_normalize(random_skeleton(T, rng), T), T, body_parts(), H), 2);
  const Tensor tokens = cross_modal_tokens(f_x, f_y, ranges, body_parts());
  REQUIRE(tokens.shape() == Shape{2, 10, T, 7});
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t p = 0; p < 7; ++p) {
        for (std::size_t c = 0; c < 4; ++c) {
          double mx = -1e300, acc = 0.0;
          std::size_t count = 0;
          for (std::size_t r = ranges[n][p].row_lo; r <= ranges[n][p].row_hi; ++r)
            for (std::size_t w = 0; w < W; ++w) {
              const double v = f_x.at({n, c, t, r, w});
              mx = std::max(mx, v);
              acc += v;
              ++count;
            }
          CHECK(std::abs(tokens.at({n, c, t, p}) - (mx + acc / static_cast<double>(count))) < 1e-14);
        }
        for (std::size_t c = 0; c < 6; ++c) {
          double mx = -1e300, acc = 0.0;
          for (std::size_t k : body_parts()[p].joints) {
            mx = std::max(mx, f_y.at({n, c, t, k}));
            acc += f_y.at({n, c, t, k});
          }
          const double want = mx + acc / static_cast<double>(body_parts()[p].joints.size());
          CHECK(std::abs(tokens.at({n, 4 + c, t, p}) - want) < 1e-14);
        }
      }
}

TEST_CASE("cross-modal tokens on zero and constant features") {
  const auto ranges = repeat(uniform_partition_ranges(16), 1);
  const Tensor zero = cross_modal_tokens(Tensor::zeros({1, 32, 2, 16, 16}), Tensor::zeros({1, 64, 2, kNumJoints}),
                                         ranges, body_parts());
  CHECK(zero.shape() == Shape{1, 96, 2, 7});
  for (double v : zero.values()) CHECK(v == 0.0);
  const Tensor c = cross_modal_tokens(Tensor::full({1, 2, 2, 16, 4}, 0.75), Tensor::full({1, 3, 2, kNumJoints}, 0.75),
                                      ranges, body_parts());
  for (double v : c.values()) CHECK(v == 1.5);
  CHECK_THROWS(cross_modal_tokens(Tensor::zeros({1, 2, 3, 16, 4}), Tensor::zeros({1, 3, 2, kNumJoints}), ranges,
                                  body_parts()));
}

TEST_CASE("fusion branch output shape and single frame") {
  Rng rng(6);
  FusionBranch fuse(FusionConfig{}, rng);
  const Tensor tokens = random_tensor({2, 96, 3, 7}, rng);
  CHECK(fuse.forward(tokens).shape() == Shape{2, 256, 7});
  // One frame: the temporal max is the identity.
  const Tensor one = narrow(tokens, 2, 1, 1);
  Tensor h = fuse.entry.forward(permute(reshape(one, {2, 96, 7}), {0, 2, 1}));
  h = fuse.layers[0].forward(h);
  CHECK(fuse.forward(one).values() == permute(h, {0, 2, 1}).values());
}

TEST_CASE("transformer layer is equivariant to token order") {
  Rng rng(7);
  FusionConfig c;
  c.token_channels = 12;
  c.dim = 16;
  c.heads = 4;
  FusionBranch fuse(c, rng);
  const Tensor tokens = random_tensor({1, 12, 4, 7}, rng);
  const std::vector<std::size_t> perm = {6, 2, 0, 5, 1, 3, 4};
  const Tensor a = index_select(fuse.forward(tokens), 2, perm);
  const Tensor b = fuse.forward(index_select(tokens, 3, perm));
  CHECK(max_abs_diff(a.values(), b.values()) < 1e-13);
}

TEST_CASE("transformer layer without attention output is the feed-forward path") {
  Rng rng(8);
  TransformerLayer layer("l", 16, 4, rng);
  fill_parameter(layer.attention.output.weight, 0.0);
  fill_parameter(*layer.attention.output.bias, 0.0);
  const Tensor x = random_tensor({3, 7, 16}, rng);
  const Tensor h = layer.norm1.forward(x);
  const Tensor want = layer.norm2.forward(h + layer.ffn2.forward(relu(layer.ffn1.forward(h))));
  CHECK(layer.forward(x).values() == want.values());
}

TEST_CASE("fusion path gradient check") {
  Rng rng(9);
  FusionConfig c;
  c.token_channels = 24;
  c.dim = 16;
  c.heads = 4;
  FusionBranch fuse(c, rng);
  const Tensor f_x = random_tensor({2, 8, 5, 4, 4}, rng, true);
  const Tensor f_y = random_tensor({2, 16, 5, kNumJoints}, rng, true);
  auto ranges = repeat(uniform_partition_ranges(4 + 3), 2);
  for (auto& r : ranges[0]) r.row_hi = std::min<std::size_t>(r.row_hi, 3), r.row_lo = std::min(r.row_lo, r.row_hi);
  for (auto& r : ranges[1]) r.row_lo = 0, r.row_hi = 3;
  std::vector<Tensor> inputs = {f_x, f_y};
  for (Parameter* p : fuse.parameters())
    if (!p->name.ends_with("key.bias")) inputs.push_back(p->value);
  GradCheckOptions opt;
  opt.max_coords = 10;
  const auto r = gradcheck(
      [&](const std::vector<Tensor>& in) { return fuse.forward(cross_modal_tokens(in[0], in[1], ranges, body_parts())); },
      inputs, opt);
  INFO(r.worst);
  CHECK(r.max_rel_error < 1e-4);
}
