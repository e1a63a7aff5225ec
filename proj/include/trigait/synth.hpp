#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace trigait::synth {

inline constexpr std::size_t kNumJoints = 17;
inline constexpr std::size_t kFrameSize = 64;

// COCO-17 keypoint order.
enum Joint : std::size_t {
  kNose, kLeftEye, kRightEye, kLeftEar, kRightEar,
  kLeftShoulder, kRightShoulder, kLeftElbow, kRightElbow, kLeftWrist, kRightWrist,
  kLeftHip, kRightHip, kLeftKnee, kRightKnee, kLeftAnkle, kRightAnkle,
};

// Parent of each joint in the kinematic tree rooted at the nose; the root maps to itself.
inline constexpr std::array<std::size_t, kNumJoints> kParent = {
    kNose, kNose, kNose, kLeftEye, kRightEye,
    kNose, kNose, kLeftShoulder, kRightShoulder, kLeftElbow, kRightElbow,
    kLeftShoulder, kRightShoulder, kLeftHip, kRightHip, kLeftKnee, kRightKnee,
};

enum class Condition : std::uint8_t { NM = 0, BG = 1, CL = 2 };

std::string condition_name(Condition c);  // "nm" / "bg" / "cl"
Condition parse_condition(const std::string& name);

// Bone lengths in body units (roughly metres).
enum Bone : std::size_t {
  kPelvisHalfWidth, kThigh, kShin, kTorso, kShoulderHalfWidth, kUpperArm, kForearm, kNeck, kHeadRadius,
  kNumBones,
};

struct SubjectParams {
  std::array<double, kNumBones> limb_lengths{};
  double gait_frequency = 0.04;  // cycles per frame
  std::array<double, kNumJoints> phase_offsets{};
  std::array<double, kNumJoints> posture_bias{};
  double stride_amplitude = 0.4;  // hip swing, radians
  std::uint64_t seed = 0;
};

struct SequenceMeta {
  std::uint32_t subject_id = 0;
  Condition condition = Condition::NM;
  std::uint32_t view = 0;  // degrees, multiple of 18 in [0, 180]
  std::uint32_t seq_index = 0;
};

// joints[(t * K + k) * 2 + {0: u, 1: v}], pixel coordinates, v grows downward.
struct SkeletonSequence {
  std::size_t frames = 0;
  std::vector<double> joints;
  SequenceMeta meta;

  double u(std::size_t t, std::size_t k) const { return joints[(t * kNumJoints + k) * 2]; }
  double v(std::size_t t, std::size_t k) const { return joints[(t * kNumJoints + k) * 2 + 1]; }
};

// pixels[(t * height + y) * width + x] in {0, 1}.
struct SilhouetteSequence {
  std::size_t frames = 0;
  std::size_t height = kFrameSize;
  std::size_t width = kFrameSize;
  std::vector<std::uint8_t> pixels;
  SequenceMeta meta;

  std::size_t foreground(std::size_t t) const;
};

struct RenderedSequence {
  SkeletonSequence skeleton;
  SilhouetteSequence silhouette;
};

SubjectParams synth_subject(std::uint64_t seed);

// Poses a 3-D articulated walker per frame, projects it at azimuth `view_degrees`
// and rasterizes the silhouette. The skeleton depends only on (subject, view, seed);
// the condition changes the rendered appearance alone.
RenderedSequence render_sequence(const SubjectParams& subject, Condition condition,
                                 std::uint32_t view_degrees, std::size_t frames, std::uint64_t seed);

}  // namespace trigait::synth
