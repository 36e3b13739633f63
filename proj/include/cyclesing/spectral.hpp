#pragma once

#include <complex>
#include <optional>
#include <string>
#include <vector>

#include "cyclesing/audio_io.hpp"
#include "cyclesing/common.hpp"

namespace cyclesing {

// Feature floor added before the log; bounds the dynamic range at ln(eps).
constexpr double kLogFloor = 1e-5;

constexpr long kDefaultWindow = 1024;
constexpr long kDefaultHop = 256;  // window/4, i.e. 75% overlap

struct NormStats {
  double min = 0;
  double max = 0;
};

// One-sided complex STFT, row-major frames x bins with bins = window/2 + 1.
struct ComplexSpectrogram {
  long frames = 0;
  long bins = 0;
  long window_size = kDefaultWindow;
  long hop = kDefaultHop;
  int sample_rate = kPipelineRate;
  std::vector<std::complex<double>> v;

  std::complex<double>& at(long t, long f) { return v[t * bins + f]; }
  const std::complex<double>& at(long t, long f) const { return v[t * bins + f]; }
};

struct MagSpectrogram {
  long frames = 0;
  long bins = 0;
  long window_size = kDefaultWindow;
  long hop = kDefaultHop;
  int sample_rate = kPipelineRate;
  std::vector<double> v;

  double& at(long t, long f) { return v[t * bins + f]; }
  double at(long t, long f) const { return v[t * bins + f]; }
};

// ln(|X| + eps), optionally affinely mapped to [-1, 1] by dataset-global
// min/max stats. Stats travel with the feature so the inverse is exact.
struct LogMagSpectrogram {
  long frames = 0;
  long bins = 0;
  long window_size = kDefaultWindow;
  long hop = kDefaultHop;
  int sample_rate = kPipelineRate;
  double eps = kLogFloor;
  std::optional<NormStats> stats;
  std::vector<double> v;

  double& at(long t, long f) { return v[t * bins + f]; }
  double at(long t, long f) const { return v[t * bins + f]; }
};

// Hann-windowed one-sided STFT. Frames start at sample 0 and advance by
// hop; no centering padding, so frames = floor((len - window)/hop) + 1.
ComplexSpectrogram stft(const AudioClip& clip, long window_size = kDefaultWindow,
                        long hop = kDefaultHop);

// Least-squares inverse: overlap-add of windowed frames normalized by the
// squared-window sum. Edge samples the window never reaches are zero;
// interior coverage gaps (hop > window) are an InvalidGeometry error.
AudioClip istft(const ComplexSpectrogram& spec);

LogMagSpectrogram featurize(const ComplexSpectrogram& spec,
                            std::optional<NormStats> stats = std::nullopt);

// Inverse of featurize: max(exp(denormalized) - eps, 0).
MagSpectrogram defeaturize(const LogMagSpectrogram& feat);

MagSpectrogram magnitude(const ComplexSpectrogram& spec);

// ||target - estimate||_F / ||target||_F.
double spectral_convergence(const MagSpectrogram& target, const MagSpectrogram& estimate);

struct GriffinLimResult {
  AudioClip clip;
  // Entry k is the spectral convergence of the iterate after k phase
  // updates; length iterations + 1. Non-increasing for this geometry.
  std::vector<double> convergence;
};

// Classic alternating-projection phase reconstruction. Zero-phase init by
// default; a seed switches to uniform random phases in [-pi, pi).
GriffinLimResult griffin_lim(const MagSpectrogram& mag, long iterations = 100,
                             std::optional<uint64_t> seed = std::nullopt);

// Binary feature dump: 16-byte header (magic, frames, bins, element kind)
// then row-major 32-bit little-endian floats.
void dump_feature(const LogMagSpectrogram& feat, const std::string& path);
LogMagSpectrogram load_feature(const std::string& path);

}  // namespace cyclesing
