#include "trigait/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>

#include "trigait/binary_io.hpp"
#include "trigait/tensor.hpp"

namespace trigait::data {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kSilMagic = "TGSL";
constexpr std::string_view kKeyMagic = "TGKT";

std::vector<std::uint8_t> pack_bits(const std::vector<std::uint8_t>& pixels) {
  std::vector<std::uint8_t> out((pixels.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    if (pixels[i]) out[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  }
  return out;
}

std::vector<std::uint8_t> unpack_bits(const std::uint8_t* bytes, std::size_t count) {
  std::vector<std::uint8_t> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = (bytes[i / 8] >> (i % 8)) & 1u;
  return out;
}

void write_meta(io::ByteWriter& w, const SequenceMeta& m) {
  w.u32(m.subject_id);
  w.u8(static_cast<std::uint8_t>(m.condition));
  w.u16(static_cast<std::uint16_t>(m.view));
  w.u32(m.seq_index);
}

SequenceMeta read_meta(io::ByteReader& r) {
  SequenceMeta m;
  m.subject_id = r.u32();
  const std::uint8_t c = r.u8();
  if (c > 2) r.fail("invalid condition code " + std::to_string(c));
  m.condition = static_cast<Condition>(c);
  m.view = r.u16();
  m.seq_index = r.u32();
  return m;
}

void read_header(io::ByteReader& r, std::string_view magic) {
  if (r.bytes(4) != magic) r.fail("bad magic (expected " + std::string(magic) + ")");
  const std::uint32_t version = r.u32();
  if (version != kSequenceFormatVersion) r.fail("unsupported format version " + std::to_string(version));
}

bool same_meta(const SequenceMeta& a, const SequenceMeta& b) {
  return a.subject_id == b.subject_id && a.condition == b.condition && a.view == b.view &&
         a.seq_index == b.seq_index;
}

}  // namespace

std::vector<std::uint32_t> DatasetReader::subjects() const {
  std::vector<std::uint32_t> ids;
  for (const auto& e : entries()) ids.push_back(e.meta.subject_id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

Dataset::Dataset(const std::vector<RenderedSequence>& sequences) {
  for (const auto& s : sequences) add(s);
}

void Dataset::add(const RenderedSequence& sequence, std::string stem) {
  const auto& sil = sequence.silhouette;
  const auto& ske = sequence.skeleton;
  if (sil.frames != ske.frames) throw Error("Dataset::add: silhouette and skeleton frame counts differ");
  entries_.push_back({ske.meta, std::move(stem), ske.frames});
  packed_.push_back(pack_bits(sil.pixels));
  joints_.push_back(ske.joints);
  frame_size_.emplace_back(sil.height, sil.width);
}

RenderedSequence Dataset::load(std::size_t index) const {
  if (index >= entries_.size()) throw Error("Dataset::load: index out of range");
  const auto& e = entries_[index];
  RenderedSequence out;
  out.skeleton.frames = e.frames;
  out.skeleton.joints = joints_[index];
  out.skeleton.meta = e.meta;
  out.silhouette.frames = e.frames;
  out.silhouette.height = frame_size_[index].first;
  out.silhouette.width = frame_size_[index].second;
  out.silhouette.pixels =
      unpack_bits(packed_[index].data(), e.frames * out.silhouette.height * out.silhouette.width);
  out.silhouette.meta = e.meta;
  return out;
}

std::pair<Condition, std::uint32_t> condition_for_index(std::uint32_t seq_index, std::uint32_t seqs_per_view) {
  // 60% NM, then 20% BG, 20% CL.
  const std::uint32_t bg = seqs_per_view / 5;
  const std::uint32_t cl = seqs_per_view / 5;
  const std::uint32_t nm = seqs_per_view - bg - cl;
  if (seq_index < nm) return {Condition::NM, seq_index + 1};
  if (seq_index < nm + bg) return {Condition::BG, seq_index - nm + 1};
  return {Condition::CL, seq_index - nm - bg + 1};
}

std::string sequence_stem(const SequenceMeta& meta, std::uint32_t seqs_per_view) {
  const auto number = condition_for_index(meta.seq_index, seqs_per_view).second;
  char buf[64];
  std::snprintf(buf, sizeof buf, "s%03u_%s-%02u_%03u", meta.subject_id, synth::condition_name(meta.condition).c_str(),
                number, meta.view);
  return buf;
}

std::vector<RenderedSequence> generate_sequences(const SynthOptions& o) {
  if (o.subjects < 1) throw Error("generate_sequences: need at least one subject");
  if (o.views < 1 || o.views > 11) throw Error("generate_sequences: views must be in [1, 11]");
  if (o.seqs_per_view < 1) throw Error("generate_sequences: seqs_per_view must be positive");
  std::vector<RenderedSequence> out;
  out.reserve(static_cast<std::size_t>(o.subjects) * o.views * o.seqs_per_view);
  for (std::uint32_t s = 0; s < o.subjects; ++s) {
    const std::uint64_t subject_seed = mix_seed(o.seed, s);
    const auto params = synth::synth_subject(subject_seed);
    for (std::uint32_t v = 0; v < o.views; ++v) {
      const std::uint32_t view = 18 * v;
      for (std::uint32_t i = 0; i < o.seqs_per_view; ++i) {
        const Condition cond = condition_for_index(i, o.seqs_per_view).first;
        // The walk seed omits the view so all cameras film the same walk.
        auto seq = synth::render_sequence(params, cond, view, o.frames, mix_seed(subject_seed, 1000 + i));
        const SequenceMeta meta{s, cond, view, i};
        seq.skeleton.meta = meta;
        seq.silhouette.meta = meta;
        out.push_back(std::move(seq));
      }
    }
  }
  return out;
}

std::string encode_silhouette(const synth::SilhouetteSequence& s) {
  io::ByteWriter w;
  w.bytes(kSilMagic);
  w.u32(kSequenceFormatVersion);
  write_meta(w, s.meta);
  w.u32(static_cast<std::uint32_t>(s.frames));
  w.u32(static_cast<std::uint32_t>(s.height));
  w.u32(static_cast<std::uint32_t>(s.width));
  const auto packed = pack_bits(s.pixels);
  w.bytes(std::string_view(reinterpret_cast<const char*>(packed.data()), packed.size()));
  return w.take();
}

std::string encode_skeleton(const synth::SkeletonSequence& s) {
  io::ByteWriter w;
  w.bytes(kKeyMagic);
  w.u32(kSequenceFormatVersion);
  write_meta(w, s.meta);
  w.u32(static_cast<std::uint32_t>(s.frames));
  w.u32(static_cast<std::uint32_t>(synth::kNumJoints));
  for (double v : s.joints) w.f64(v);
  return w.take();
}

synth::SilhouetteSequence decode_silhouette(const std::string& bytes, const std::string& origin) {
  io::ByteReader r(bytes, origin);
  read_header(r, kSilMagic);
  synth::SilhouetteSequence s;
  s.meta = read_meta(r);
  s.frames = r.u32();
  s.height = r.u32();
  s.width = r.u32();
  const std::size_t count = s.frames * s.height * s.width;
  const auto payload = r.bytes((count + 7) / 8);
  if (!r.done()) r.fail("trailing bytes");
  s.pixels = unpack_bits(reinterpret_cast<const std::uint8_t*>(payload.data()), count);
  return s;
}

synth::SkeletonSequence decode_skeleton(const std::string& bytes, const std::string& origin) {
  io::ByteReader r(bytes, origin);
  read_header(r, kKeyMagic);
  synth::SkeletonSequence s;
  s.meta = read_meta(r);
  s.frames = r.u32();
  const std::uint32_t k = r.u32();
  if (k != synth::kNumJoints) r.fail("expected 17 joints, found " + std::to_string(k));
  s.joints.resize(s.frames * k * 2);
  for (double& v : s.joints) v = r.f64();
  if (!r.done()) r.fail("trailing bytes");
  return s;
}

std::vector<std::string> write_dataset(const fs::path& root, const std::vector<RenderedSequence>& sequences,
                                       std::uint32_t seqs_per_view) {
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec || !fs::is_directory(root)) throw Error(root.string() + ": cannot create dataset directory");
  std::ostringstream manifest;
  manifest << "subject\tcondition\tview\tseq_index\tstem\n";
  std::vector<std::string> stems;
  for (const auto& seq : sequences) {
    const auto& m = seq.skeleton.meta;
    std::string stem = sequence_stem(m, seqs_per_view);
    io::write_file(root / (stem + ".tgsl"), encode_silhouette(seq.silhouette));
    io::write_file(root / (stem + ".tgkt"), encode_skeleton(seq.skeleton));
    manifest << m.subject_id << '\t' << synth::condition_name(m.condition) << '\t' << m.view << '\t' << m.seq_index
             << '\t' << stem << '\n';
    stems.push_back(std::move(stem));
  }
  io::write_file(root / "manifest.tsv", manifest.str());
  return stems;
}

Dataset read_dataset(const fs::path& root) {
  const fs::path manifest_path = root / "manifest.tsv";
  if (!fs::exists(manifest_path)) throw Error(manifest_path.string() + ": manifest not found");
  std::istringstream in(io::read_file(manifest_path));
  std::string line;
  std::getline(in, line);
  if (line != "subject\tcondition\tview\tseq_index\tstem") {
    throw Error(manifest_path.string() + ": unexpected manifest header");
  }
  Dataset ds;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream fields(line);
    SequenceMeta meta;
    std::string cond, stem;
    if (!(fields >> meta.subject_id >> cond >> meta.view >> meta.seq_index >> stem)) {
      throw Error(manifest_path.string() + ":" + std::to_string(line_no) + ": malformed manifest line");
    }
    meta.condition = synth::parse_condition(cond);
    const fs::path sil_path = root / (stem + ".tgsl");
    const fs::path key_path = root / (stem + ".tgkt");
    RenderedSequence seq;
    seq.silhouette = decode_silhouette(io::read_file(sil_path), sil_path.string());
    seq.skeleton = decode_skeleton(io::read_file(key_path), key_path.string());
    if (!same_meta(seq.silhouette.meta, meta) || !same_meta(seq.skeleton.meta, meta)) {
      throw Error(sil_path.string() + ": metadata disagrees with manifest line " + std::to_string(line_no));
    }
    if (seq.silhouette.frames != seq.skeleton.frames) {
      throw Error(key_path.string() + ": frame count differs from its silhouette file");
    }
    ds.add(seq, stem);
  }
  return ds;
}

RenderedSequence crop_sequence(const RenderedSequence& seq, std::size_t start, std::size_t frames) {
  const std::size_t total = seq.skeleton.frames;
  if (total == 0 || frames == 0) throw Error("crop_sequence: empty sequence or window");
  const std::size_t plane = seq.silhouette.height * seq.silhouette.width;
  const std::size_t joint_stride = synth::kNumJoints * 2;
  RenderedSequence out;
  out.skeleton.meta = seq.skeleton.meta;
  out.skeleton.frames = frames;
  out.skeleton.joints.resize(frames * joint_stride);
  out.silhouette.meta = seq.silhouette.meta;
  out.silhouette.frames = frames;
  out.silhouette.height = seq.silhouette.height;
  out.silhouette.width = seq.silhouette.width;
  out.silhouette.pixels.resize(frames * plane);
  for (std::size_t i = 0; i < frames; ++i) {
    const std::size_t t = (start + i) % total;
    std::copy_n(seq.skeleton.joints.begin() + static_cast<std::ptrdiff_t>(t * joint_stride), joint_stride,
                out.skeleton.joints.begin() + static_cast<std::ptrdiff_t>(i * joint_stride));
    std::copy_n(seq.silhouette.pixels.begin() + static_cast<std::ptrdiff_t>(t * plane), plane,
                out.silhouette.pixels.begin() + static_cast<std::ptrdiff_t>(i * plane));
  }
  return out;
}

Batch sample_batch(const DatasetReader& dataset, const BatchSpec& spec, Rng& rng) {
  if (spec.subjects_per_batch == 0 || spec.sequences_per_subject == 0 || spec.frames_per_sequence == 0) {
    throw Error("sample_batch: batch spec entries must be positive");
  }
  std::map<std::uint32_t, std::vector<std::size_t>> by_subject;
  for (std::size_t i = 0; i < dataset.size(); ++i) by_subject[dataset.entries()[i].meta.subject_id].push_back(i);
  if (by_subject.size() < spec.subjects_per_batch) {
    throw Error("sample_batch: dataset has " + std::to_string(by_subject.size()) + " subjects, batch needs " +
                std::to_string(spec.subjects_per_batch));
  }
  std::vector<std::uint32_t> ids;
  for (const auto& kv : by_subject) ids.push_back(kv.first);
  for (std::size_t i = 0; i < spec.subjects_per_batch; ++i) std::swap(ids[i], ids[i + rng.below(ids.size() - i)]);
  ids.resize(spec.subjects_per_batch);

  Batch batch;
  for (std::uint32_t id : ids) {
    std::vector<std::size_t> pool = by_subject[id];
    std::vector<std::size_t> picks;
    if (pool.size() >= spec.sequences_per_subject) {
      for (std::size_t i = 0; i < spec.sequences_per_subject; ++i) {
        std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
      }
      picks.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(spec.sequences_per_subject));
    } else {
      for (std::size_t i = 0; i < spec.sequences_per_subject; ++i) picks.push_back(pool[rng.below(pool.size())]);
    }
    for (std::size_t index : picks) {
      const auto seq = dataset.load(index);
      const std::size_t total = seq.skeleton.frames;
      const std::size_t start = total > spec.frames_per_sequence ? rng.below(total - spec.frames_per_sequence + 1) : 0;
      batch.sequences.push_back(crop_sequence(seq, start, spec.frames_per_sequence));
      batch.labels.push_back(id);
      batch.source.push_back(index);
    }
  }
  return batch;
}

}  // namespace trigait::data
