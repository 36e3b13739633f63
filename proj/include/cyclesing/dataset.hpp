#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cyclesing/audio_io.hpp"
#include "cyclesing/rng.hpp"
#include "cyclesing/spectral.hpp"
#include "cyclesing/tensor.hpp"

namespace cyclesing {

inline constexpr double kSegmentSeconds = 5.0;
inline constexpr double kSegmentHopSeconds = 1.0;

struct SegmentRecord {
  std::string id;  // stable hash of (source_file, offset)
  std::string source_file;
  double offset_s = 0.0;
  double duration_s = kSegmentSeconds;
  char domain = 'A';
};

struct Manifest {
  std::vector<SegmentRecord> records;
  uint64_t seed = 0;

  long count(char domain) const;
  std::vector<size_t> domain_indices(char domain) const;
};

// filename (no directory) -> 'A' | 'B'
using DomainLabels = std::map<std::string, char>;

DomainLabels load_labels(const std::string& path);
void save_labels(const DomainLabels& labels, const std::string& path);

// Scans audio_dir for WAVs (sorted by name), slices each into 5 s windows at
// a 1 s hop, and stamps every window with its provenance and domain label.
Manifest build_manifest(const std::string& audio_dir, const DomainLabels& labels);

void save_manifest(const Manifest& m, const std::string& path);
Manifest load_manifest(const std::string& path);

// Uniform selection without replacement per domain, deterministic in seed;
// train and test are disjoint at the record level.
std::pair<Manifest, Manifest> split_dataset(const Manifest& m, long n_train_per_domain,
                                            long n_test_per_domain, uint64_t seed);

// Cuts the record's 5 s span out of its source file.
AudioClip load_segment(const SegmentRecord& rec);

// Global feature min/max over every record in the manifest.
NormStats compute_norm_stats(const Manifest& m, long window = kDefaultWindow,
                             long hop = kDefaultHop);

// Unpaired batch pair (batch, bins, crop_frames). The two domains draw from
// independent rng streams; records are sampled with replacement and cropped
// at a random frame offset. Only the samples under the crop are transformed.
std::pair<Tensor<float>, Tensor<float>> sample_batch(const Manifest& train, long batch,
                                                     long crop_frames, Rng& rng_a,
                                                     Rng& rng_b, const NormStats& stats,
                                                     long window = kDefaultWindow,
                                                     long hop = kDefaultHop);

// Two-domain synthetic corpus: harmonic tones with fundamentals drawn from
// [100, 200] Hz (domain A) and [200, 400] Hz (domain B), 5 partials at 1/k
// amplitude, 5 Hz vibrato of +-2%, 5 s, peak 0.5. Writes WAVs, labels.tsv and
// manifest.tsv under out_dir and returns the manifest.
Manifest gen_toy_corpus(long n_per_domain, uint64_t seed, const std::string& out_dir);

}  // namespace cyclesing
