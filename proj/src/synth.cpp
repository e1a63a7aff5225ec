#include "trigait/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "trigait/rng.hpp"
#include "trigait/tensor.hpp"

namespace trigait::synth {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kPixelsPerUnit = 26.0;
constexpr double kGroundRow = 61.0;
constexpr double kCenterColumn = 32.0;

constexpr std::array<double, kNumBones> kBaseBones = {0.11, 0.45, 0.43, 0.52, 0.19, 0.30, 0.27, 0.22, 0.10};

struct Vec3 {
  double x = 0, y = 0, z = 0;
};
Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }

struct Vec2 {
  double u = 0, v = 0;
};

// Direction hanging from a joint, rotated by `angle` towards +z (forward) in the sagittal plane.
Vec3 sagittal(double angle) { return {0.0, -std::cos(angle), std::sin(angle)}; }

struct WalkStyle {
  double phase0 = 0.0;
  double frequency = 0.04;
  double amplitude = 0.4;
};

struct Pose {
  std::array<Vec3, kNumJoints> joints;
  Vec3 head_center;
  Vec3 pelvis;
  Vec3 left_toe, right_toe;
};

Pose pose_at(const SubjectParams& s, const WalkStyle& w, std::size_t t) {
  const auto& L = s.limb_lengths;
  const auto& po = s.phase_offsets;
  const auto& pb = s.posture_bias;
  const double phase = 2.0 * kPi * w.frequency * static_cast<double>(t) + w.phase0;
  const double leg = L[kThigh] + L[kShin];

  Pose p;
  p.pelvis = {0.0, leg * 0.97 - 0.02 * std::cos(2.0 * phase), 0.0};
  const double twist = 0.12 * std::sin(phase);

  auto leg_chain = [&](double side, double leg_phase, std::size_t hip, std::size_t knee, std::size_t ankle,
                       Vec3& toe) {
    const Vec3 hip_pos = p.pelvis + Vec3{side * L[kPelvisHalfWidth] * std::cos(twist), 0.0,
                                         -side * L[kPelvisHalfWidth] * std::sin(twist)};
    const double hip_angle = w.amplitude * std::sin(leg_phase + po[hip]) + pb[hip];
    const double knee_flex = 0.9 * w.amplitude * std::max(0.0, std::sin(leg_phase + 1.9 + po[knee])) + 0.06 + std::abs(pb[knee]);
    const Vec3 knee_pos = hip_pos + L[kThigh] * sagittal(hip_angle);
    const Vec3 ankle_pos = knee_pos + L[kShin] * sagittal(hip_angle - knee_flex);
    p.joints[hip] = hip_pos;
    p.joints[knee] = knee_pos;
    p.joints[ankle] = ankle_pos;
    toe = ankle_pos + Vec3{0.0, -0.05, 0.16};
  };
  leg_chain(-1.0, phase, kLeftHip, kLeftKnee, kLeftAnkle, p.left_toe);
  leg_chain(1.0, phase + kPi, kRightHip, kRightKnee, kRightAnkle, p.right_toe);

  const double lean = 0.06 + pb[kNose];
  const Vec3 shoulder_mid = p.pelvis + L[kTorso] * Vec3{0.0, std::cos(lean), std::sin(lean)};
  auto arm_chain = [&](double side, double arm_phase, std::size_t shoulder, std::size_t elbow, std::size_t wrist) {
    const Vec3 sh = shoulder_mid + Vec3{side * L[kShoulderHalfWidth] * std::cos(twist), 0.0,
                                        side * L[kShoulderHalfWidth] * std::sin(twist)};
    const double swing = 0.8 * w.amplitude * std::sin(arm_phase + po[shoulder]) + pb[shoulder];
    const double bend = 0.25 + 0.2 * (1.0 + std::sin(arm_phase + po[elbow])) + std::abs(pb[elbow]);
    const Vec3 out{side * 0.05, 0.0, 0.0};
    const Vec3 el = sh + L[kUpperArm] * sagittal(swing) + out;
    const Vec3 wr = el + L[kForearm] * sagittal(swing + bend);
    p.joints[shoulder] = sh;
    p.joints[elbow] = el;
    p.joints[wrist] = wr;
  };
  arm_chain(-1.0, phase + kPi, kLeftShoulder, kLeftElbow, kLeftWrist);
  arm_chain(1.0, phase, kRightShoulder, kRightElbow, kRightWrist);

  const double h = L[kHeadRadius];
  p.head_center = shoulder_mid + Vec3{0.0, L[kNeck], 0.03 + pb[kLeftEar] * 0.2};
  p.joints[kNose] = p.head_center + Vec3{0.0, -0.1 * h, 0.95 * h};
  p.joints[kLeftEye] = p.head_center + Vec3{-0.35 * h, 0.25 * h, 0.8 * h};
  p.joints[kRightEye] = p.head_center + Vec3{0.35 * h, 0.25 * h, 0.8 * h};
  p.joints[kLeftEar] = p.head_center + Vec3{-0.9 * h, 0.1 * h, 0.0};
  p.joints[kRightEar] = p.head_center + Vec3{0.9 * h, 0.1 * h, 0.0};
  return p;
}

struct Camera {
  double cos_a, sin_a;
  explicit Camera(std::uint32_t view_degrees) {
    const double a = static_cast<double>(view_degrees) * kPi / 180.0;
    cos_a = std::cos(a);
    sin_a = std::sin(a);
  }
  Vec2 project(Vec3 p) const {
    return {kCenterColumn + kPixelsPerUnit * (p.x * cos_a + p.z * sin_a), kGroundRow - kPixelsPerUnit * p.y};
  }
  // Projected half-extent of a body slab with the given lateral and depth half-widths.
  double width(double lateral, double depth) const {
    return kPixelsPerUnit * (lateral * std::abs(cos_a) + depth * std::abs(sin_a));
  }
};

class Canvas {
 public:
  Canvas(std::size_t h, std::size_t w, std::uint8_t* pixels) : h_(h), w_(w), px_(pixels) {}

  void capsule(Vec2 a, Vec2 b, double radius) {
    const double du = b.u - a.u, dv = b.v - a.v;
    const double len2 = du * du + dv * dv;
    fill_box(std::min(a.u, b.u) - radius, std::max(a.u, b.u) + radius, std::min(a.v, b.v) - radius,
             std::max(a.v, b.v) + radius, [&](double x, double y) {
               double t = len2 > 0 ? ((x - a.u) * du + (y - a.v) * dv) / len2 : 0.0;
               t = std::clamp(t, 0.0, 1.0);
               const double ex = x - (a.u + t * du), ey = y - (a.v + t * dv);
               return ex * ex + ey * ey <= radius * radius;
             });
  }

  // Ellipse with semi-axis `along` on the unit direction (dir_u, dir_v) and `across` perpendicular.
  void ellipse(Vec2 c, double dir_u, double dir_v, double along, double across) {
    const double r = std::max(along, across);
    fill_box(c.u - r, c.u + r, c.v - r, c.v + r, [&](double x, double y) {
      const double a = ((x - c.u) * dir_u + (y - c.v) * dir_v) / along;
      const double b = (-(x - c.u) * dir_v + (y - c.v) * dir_u) / across;
      return a * a + b * b <= 1.0;
    });
  }

 private:
  template <typename Inside>
  void fill_box(double u0, double u1, double v0, double v1, Inside inside) {
    const long x0 = std::max(0L, static_cast<long>(std::floor(u0)));
    const long x1 = std::min(static_cast<long>(w_) - 1, static_cast<long>(std::ceil(u1)));
    const long y0 = std::max(0L, static_cast<long>(std::floor(v0)));
    const long y1 = std::min(static_cast<long>(h_) - 1, static_cast<long>(std::ceil(v1)));
    for (long y = y0; y <= y1; ++y)
      for (long x = x0; x <= x1; ++x) {
        if (inside(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5)) {
          px_[static_cast<std::size_t>(y) * w_ + static_cast<std::size_t>(x)] = 1;
        }
      }
  }

  std::size_t h_, w_;
  std::uint8_t* px_;
};

struct Appearance {
  double torso_scale = 1.0;
  double arm_scale = 1.0;
  double thigh_scale = 1.0;
  bool coat = false;
  bool bag = false;
};

}  // namespace

std::string condition_name(Condition c) {
  switch (c) {
    case Condition::NM: return "nm";
    case Condition::BG: return "bg";
    case Condition::CL: return "cl";
  }
  throw Error("unknown condition");
}

Condition parse_condition(const std::string& name) {
  if (name == "nm" || name == "NM") return Condition::NM;
  if (name == "bg" || name == "BG") return Condition::BG;
  if (name == "cl" || name == "CL") return Condition::CL;
  throw Error("unknown condition '" + name + "'");
}

std::size_t SilhouetteSequence::foreground(std::size_t t) const {
  const auto begin = pixels.begin() + static_cast<std::ptrdiff_t>(t * height * width);
  return static_cast<std::size_t>(std::count(begin, begin + static_cast<std::ptrdiff_t>(height * width), 1));
}

SubjectParams synth_subject(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x5ab1ec7ULL));
  SubjectParams s;
  s.seed = seed;
  const double scale = rng.uniform(0.9, 1.1);
  for (std::size_t b = 0; b < kNumBones; ++b) s.limb_lengths[b] = kBaseBones[b] * scale * rng.uniform(0.86, 1.14);
  s.gait_frequency = rng.uniform(0.028, 0.06);
  s.stride_amplitude = rng.uniform(0.3, 0.55);
  for (double& v : s.phase_offsets) v = rng.uniform(-0.3, 0.3);
  for (double& v : s.posture_bias) v = rng.uniform(-0.12, 0.12);
  return s;
}

RenderedSequence render_sequence(const SubjectParams& subject, Condition condition, std::uint32_t view_degrees,
                                 std::size_t frames, std::uint64_t seed) {
  if (frames < 2) throw Error("render_sequence needs at least 2 frames");
  for (double l : subject.limb_lengths) {
    if (!(l > 0.0)) throw Error("render_sequence: limb lengths must be positive");
  }

  // Walk dynamics depend on (subject, seed) only; every camera sees the same walk.
  Rng walk_rng(mix_seed(subject.seed, seed));
  WalkStyle walk;
  walk.phase0 = walk_rng.uniform(0.0, 2.0 * kPi);
  walk.frequency = subject.gait_frequency * walk_rng.uniform(0.97, 1.03);
  walk.amplitude = subject.stride_amplitude * walk_rng.uniform(0.95, 1.05);

  Rng look_rng(mix_seed(mix_seed(subject.seed, seed), 0xc0a7ULL + static_cast<std::uint64_t>(condition)));
  Appearance look;
  if (condition == Condition::CL) {
    look.coat = true;
    look.torso_scale = look_rng.uniform(1.25, 1.45);
    look.arm_scale = look_rng.uniform(1.2, 1.5);
    look.thigh_scale = look_rng.uniform(1.1, 1.3);
  } else if (condition == Condition::BG) {
    look.bag = true;
  }

  const Camera cam(view_degrees);
  const auto& L = subject.limb_lengths;
  RenderedSequence out;
  SequenceMeta meta{0, condition, view_degrees, 0};
  out.skeleton.frames = frames;
  out.skeleton.joints.resize(frames * kNumJoints * 2);
  out.skeleton.meta = meta;
  out.silhouette.frames = frames;
  out.silhouette.pixels.assign(frames * kFrameSize * kFrameSize, 0);
  out.silhouette.meta = meta;

  for (std::size_t t = 0; t < frames; ++t) {
    const Pose pose = pose_at(subject, walk, t);
    std::array<Vec2, kNumJoints> j2;
    double top = 1e300, bottom = -1e300;
    for (std::size_t k = 0; k < kNumJoints; ++k) {
      j2[k] = cam.project(pose.joints[k]);
      out.skeleton.joints[(t * kNumJoints + k) * 2] = j2[k].u;
      out.skeleton.joints[(t * kNumJoints + k) * 2 + 1] = j2[k].v;
      top = std::min(top, j2[k].v);
      bottom = std::max(bottom, j2[k].v);
    }
    if (!(bottom - top > 1e-9)) throw Error("render_sequence: degenerate projection (zero body height)");

    Canvas canvas(kFrameSize, kFrameSize, out.silhouette.pixels.data() + t * kFrameSize * kFrameSize);
    const double px = kPixelsPerUnit;
    auto mid = [](Vec2 a, Vec2 b) { return Vec2{(a.u + b.u) / 2, (a.v + b.v) / 2}; };
    const Vec2 hip_mid = mid(j2[kLeftHip], j2[kRightHip]);
    const Vec2 shoulder_mid = mid(j2[kLeftShoulder], j2[kRightShoulder]);

    // Torso, aligned with the hip->shoulder axis.
    double au = shoulder_mid.u - hip_mid.u, av = shoulder_mid.v - hip_mid.v;
    const double alen = std::max(std::hypot(au, av), 1e-9);
    au /= alen;
    av /= alen;
    const double torso_width = cam.width(0.9 * L[kShoulderHalfWidth], 0.11) * look.torso_scale;
    canvas.ellipse(mid(hip_mid, shoulder_mid), au, av, alen / 2 + 0.08 * px, std::max(torso_width, 1.0));
    if (look.coat) {
      const Vec2 skirt{hip_mid.u, hip_mid.v + 0.12 * px};
      canvas.ellipse(skirt, 0.0, 1.0, 0.24 * px, std::max(torso_width * 1.05, 1.0));
    }

    const Vec2 head = cam.project(pose.head_center);
    canvas.capsule(shoulder_mid, head, 0.05 * px);
    canvas.ellipse(head, 0.0, 1.0, 1.2 * L[kHeadRadius] * px, 1.15 * L[kHeadRadius] * px);

    const double thigh_r = 0.075 * px * look.thigh_scale;
    const double shin_r = 0.055 * px;
    const double upper_r = 0.05 * px * look.arm_scale;
    const double fore_r = 0.042 * px * look.arm_scale;
    canvas.capsule(j2[kLeftHip], j2[kRightHip], thigh_r);
    canvas.capsule(j2[kLeftHip], j2[kLeftKnee], thigh_r);
    canvas.capsule(j2[kRightHip], j2[kRightKnee], thigh_r);
    canvas.capsule(j2[kLeftKnee], j2[kLeftAnkle], shin_r);
    canvas.capsule(j2[kRightKnee], j2[kRightAnkle], shin_r);
    canvas.capsule(j2[kLeftAnkle], cam.project(pose.left_toe), 0.04 * px);
    canvas.capsule(j2[kRightAnkle], cam.project(pose.right_toe), 0.04 * px);
    canvas.capsule(j2[kLeftShoulder], j2[kRightShoulder], upper_r);
    canvas.capsule(j2[kLeftShoulder], j2[kLeftElbow], upper_r);
    canvas.capsule(j2[kRightShoulder], j2[kRightElbow], upper_r);
    canvas.capsule(j2[kLeftElbow], j2[kLeftWrist], fore_r);
    canvas.capsule(j2[kRightElbow], j2[kRightWrist], fore_r);

    if (look.bag) {
      // Hangs beside the right hand, fixed relative to the pelvis.
      const Vec3 anchor = pose.pelvis + Vec3{L[kShoulderHalfWidth] + 0.09, -0.08, 0.0};
      canvas.ellipse(cam.project(anchor), 0.0, 1.0, 0.13 * px, cam.width(0.07, 0.15));
    }
  }
  return out;
}

}  // namespace trigait::synth
