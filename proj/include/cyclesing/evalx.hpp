#pragma once

#include <string>
#include <vector>

#include "cyclesing/audio_io.hpp"
#include "cyclesing/spectral.hpp"

namespace cyclesing {

struct F0Track {
  std::vector<double> f0_hz;  // 0.0 marks an unvoiced frame
  double hop_seconds = 0.0;

  long voiced_count() const;
  double median_voiced() const;  // throws NoVoicedFrames when empty
};

// Cumulative-mean-normalized difference-function pitch tracker over
// 2048-sample frames with a 512-sample hop; periodicity threshold 0.15,
// parabolic lag interpolation, voiced range [50, 1000] Hz.
F0Track estimate_f0(const AudioClip& clip);

// 12 * log2(median voiced f0 of transferred / median voiced f0 of source).
double mean_f0_shift(const AudioClip& source, const AudioClip& transferred);

// 10 * log10(sum ref^2 / sum (ref-est)^2), capped at 300 dB.
double reconstruction_snr(const AudioClip& reference, const AudioClip& estimate);

// 8-bit P5 graymap, width = frames, height = bins with bin 0 at the bottom
// row; linear min->0, max->255; constant input renders uniform mid-gray.
void export_spectrogram_image(const LogMagSpectrogram& feat, const std::string& path);

// Mean per-frame spread between the peak and the median log magnitude.
// Reported as a sharpness proxy; nothing is gated on it.
double spectral_contrast(const LogMagSpectrogram& feat);

}  // namespace cyclesing
