#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cyclesing/common.hpp"

namespace cyclesing {

constexpr int kPipelineRate = 44100;

// Mono sample buffer. Samples live in [-1, 1]; the write path clamps.
struct AudioClip {
  std::vector<double> samples;
  int sample_rate = kPipelineRate;

  size_t size() const { return samples.size(); }
  double duration_seconds() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

struct WavInfo {
  int sample_rate = 0;
  int channels = 0;
  int bits_per_sample = 0;
  uint64_t frames = 0;
};

// Header-only probe; does not load sample data.
WavInfo wav_info(const std::string& path);

// Reads 16-bit PCM RIFF/WAVE at 44.1 kHz, averaging stereo to mono.
// Any other rate or encoding is rejected; resampling is out of scope.
AudioClip read_wav(const std::string& path);

// Writes mono 16-bit PCM. Samples are clamped to [-1, 1 - 2^-15] and
// quantized round-to-nearest, so a write/read round trip moves each
// sample by at most 2^-15.
void write_wav(const std::string& path, const AudioClip& clip);

// Cuts a clip into fixed-length windows starting at 0, hop, 2*hop, ...
// Returns an empty list when the clip is shorter than one window.
std::vector<AudioClip> segment_clip(const AudioClip& clip, double seg_seconds,
                                    double hop_seconds);

// Optional preprocessing step; disabled by default in the pipeline.
AudioClip peak_normalize(const AudioClip& clip, double target_peak);

}  // namespace cyclesing
