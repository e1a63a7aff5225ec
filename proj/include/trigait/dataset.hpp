#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "trigait/rng.hpp"
#include "trigait/synth.hpp"

namespace trigait::data {

using synth::Condition;
using synth::RenderedSequence;
using synth::SequenceMeta;

inline constexpr std::uint32_t kSequenceFormatVersion = 1;

struct DatasetEntry {
  SequenceMeta meta;
  std::string stem;
  std::size_t frames = 0;
};

// Loader interface; the synthetic on-disk format is the only shipped implementation.
class DatasetReader {
 public:
  virtual ~DatasetReader() = default;
  virtual const std::vector<DatasetEntry>& entries() const = 0;
  virtual RenderedSequence load(std::size_t index) const = 0;

  std::size_t size() const { return entries().size(); }
  // Distinct subject ids in ascending order.
  std::vector<std::uint32_t> subjects() const;
};

// In-memory dataset; silhouettes are held bit-packed.
class Dataset : public DatasetReader {
 public:
  Dataset() = default;
  explicit Dataset(const std::vector<RenderedSequence>& sequences);

  const std::vector<DatasetEntry>& entries() const override { return entries_; }
  RenderedSequence load(std::size_t index) const override;

  void add(const RenderedSequence& sequence, std::string stem = {});

 private:
  std::vector<DatasetEntry> entries_;
  std::vector<std::vector<std::uint8_t>> packed_;
  std::vector<std::vector<double>> joints_;
  std::vector<std::pair<std::size_t, std::size_t>> frame_size_;
};

struct SynthOptions {
  std::uint32_t subjects = 8;
  std::uint32_t views = 11;          // azimuths 0, 18, ... degrees
  std::uint32_t seqs_per_view = 10;  // 6 NM, 2 BG, 2 CL when 10
  std::size_t frames = 40;
  std::uint64_t seed = 0;
};

// Condition and per-condition number (1-based) of the seq_index-th sequence of a view.
std::pair<Condition, std::uint32_t> condition_for_index(std::uint32_t seq_index, std::uint32_t seqs_per_view);

// "s003_nm-02_090"
std::string sequence_stem(const SequenceMeta& meta, std::uint32_t seqs_per_view);

std::vector<RenderedSequence> generate_sequences(const SynthOptions& options);

// Encoders for the .tgsl / .tgkt payloads (little-endian, versioned).
std::string encode_silhouette(const synth::SilhouetteSequence& s);
std::string encode_skeleton(const synth::SkeletonSequence& s);
synth::SilhouetteSequence decode_silhouette(const std::string& bytes, const std::string& origin);
synth::SkeletonSequence decode_skeleton(const std::string& bytes, const std::string& origin);

// Writes manifest.tsv and one .tgsl/.tgkt pair per sequence. Returns the stems written.
std::vector<std::string> write_dataset(const std::filesystem::path& root, const std::vector<RenderedSequence>& sequences,
                                       std::uint32_t seqs_per_view = 10);
Dataset read_dataset(const std::filesystem::path& root);

struct BatchSpec {
  std::size_t subjects_per_batch = 8;
  std::size_t sequences_per_subject = 16;
  std::size_t frames_per_sequence = 30;
};

struct Batch {
  std::vector<RenderedSequence> sequences;  // cropped to frames_per_sequence
  std::vector<std::uint32_t> labels;        // subject ids
  std::vector<std::size_t> source;          // dataset entry indices
};

// Takes a window of `frames` contiguous frames starting at `start`, wrapping around
// when the sequence is shorter than the window. Both modalities share the window.
RenderedSequence crop_sequence(const RenderedSequence& seq, std::size_t start, std::size_t frames);

Batch sample_batch(const DatasetReader& dataset, const BatchSpec& spec, Rng& rng);

}  // namespace trigait::data
