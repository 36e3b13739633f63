#include "cyclesing/evalx.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace cyclesing {

namespace {

constexpr long kF0Frame = 2048;
constexpr long kF0Hop = 512;
constexpr long kF0Window = 1024;  // difference-function integration width
constexpr double kF0Threshold = 0.15;
constexpr double kF0Min = 50.0;
constexpr double kF0Max = 1000.0;

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// f0 of one frame, or 0 when no lag clears the periodicity threshold.
double frame_f0(const double* x, int rate) {
  const long tau_min = std::max<long>(2, static_cast<long>(rate / kF0Max));
  const long tau_max = static_cast<long>(rate / kF0Min);  // 882 at 44.1 kHz

  std::vector<double> diff(static_cast<size_t>(tau_max) + 1, 0.0);
  for (long tau = 1; tau <= tau_max; ++tau) {
    double acc = 0;
    for (long i = 0; i < kF0Window; ++i) {
      const double d = x[i] - x[i + tau];
      acc += d * d;
    }
    diff[static_cast<size_t>(tau)] = acc;
  }

  // cumulative-mean normalization; an all-zero prefix marks silence
  std::vector<double> cmnd(static_cast<size_t>(tau_max) + 1, 1.0);
  double running = 0;
  for (long tau = 1; tau <= tau_max; ++tau) {
    running += diff[static_cast<size_t>(tau)];
    cmnd[static_cast<size_t>(tau)] =
        running > 0 ? diff[static_cast<size_t>(tau)] * static_cast<double>(tau) / running
                    : 1.0;
  }

  long tau = -1;
  for (long t = tau_min; t <= tau_max; ++t) {
    if (cmnd[static_cast<size_t>(t)] < kF0Threshold) {
      tau = t;
      while (tau + 1 <= tau_max &&
             cmnd[static_cast<size_t>(tau + 1)] < cmnd[static_cast<size_t>(tau)])
        ++tau;
      break;
    }
  }
  if (tau < 0) return 0.0;

  double refined = static_cast<double>(tau);
  if (tau > tau_min && tau < tau_max) {
    const double a = cmnd[static_cast<size_t>(tau - 1)];
    const double b = cmnd[static_cast<size_t>(tau)];
    const double c = cmnd[static_cast<size_t>(tau + 1)];
    const double denom = a - 2.0 * b + c;
    if (std::abs(denom) > 1e-12) {
      const double delta = std::clamp(0.5 * (a - c) / denom, -1.0, 1.0);
      refined += delta;
    }
  }
  return std::clamp(static_cast<double>(rate) / refined, kF0Min, kF0Max);
}

}  // namespace

long F0Track::voiced_count() const {
  long n = 0;
  for (double v : f0_hz)
    if (v > 0) ++n;
  return n;
}

double F0Track::median_voiced() const {
  std::vector<double> voiced;
  for (double v : f0_hz)
    if (v > 0) voiced.push_back(v);
  require(!voiced.empty(), Err::NoVoicedFrames, "track has no voiced frames");
  return median(std::move(voiced));
}

F0Track estimate_f0(const AudioClip& clip) {
  require(static_cast<long>(clip.size()) >= kF0Frame, Err::TooShort,
          "estimate_f0: need at least " + std::to_string(kF0Frame) + " samples");
  F0Track track;
  track.hop_seconds = static_cast<double>(kF0Hop) / clip.sample_rate;
  const long n_frames = (static_cast<long>(clip.size()) - kF0Frame) / kF0Hop + 1;
  track.f0_hz.reserve(static_cast<size_t>(n_frames));
  for (long f = 0; f < n_frames; ++f)
    track.f0_hz.push_back(frame_f0(clip.samples.data() + f * kF0Hop, clip.sample_rate));
  return track;
}

double mean_f0_shift(const AudioClip& source, const AudioClip& transferred) {
  const double src = estimate_f0(source).median_voiced();
  const double dst = estimate_f0(transferred).median_voiced();
  return 12.0 * std::log2(dst / src);
}

double reconstruction_snr(const AudioClip& reference, const AudioClip& estimate) {
  require(reference.size() == estimate.size(), Err::LengthMismatch,
          "reconstruction_snr: " + std::to_string(reference.size()) + " vs " +
              std::to_string(estimate.size()) + " samples");
  double ref_power = 0, err_power = 0;
  for (size_t i = 0; i < reference.size(); ++i) {
    ref_power += reference.samples[i] * reference.samples[i];
    const double e = reference.samples[i] - estimate.samples[i];
    err_power += e * e;
  }
  require(ref_power > 0, Err::ZeroReference, "reconstruction_snr: all-zero reference");
  if (err_power == 0) return 300.0;
  return std::min(300.0, 10.0 * std::log10(ref_power / err_power));
}

void export_spectrogram_image(const LogMagSpectrogram& feat, const std::string& path) {
  require(feat.frames >= 1 && feat.bins >= 1, Err::ShapeMismatch,
          "export_spectrogram_image: empty matrix");
  double lo = feat.v[0], hi = feat.v[0];
  for (double v : feat.v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), Err::IoError, "cannot write image: " + path);
  f << "P5\n" << feat.frames << ' ' << feat.bins << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(feat.frames));
  for (long r = 0; r < feat.bins; ++r) {
    const long bin = feat.bins - 1 - r;  // low frequencies at the bottom
    for (long t = 0; t < feat.frames; ++t) {
      row[static_cast<size_t>(t)] =
          hi > lo ? static_cast<unsigned char>(
                        std::lround((feat.at(t, bin) - lo) / (hi - lo) * 255.0))
                  : static_cast<unsigned char>(128);
    }
    f.write(reinterpret_cast<const char*>(row.data()),
            static_cast<std::streamsize>(row.size()));
  }
  require(f.good(), Err::IoError, "short write: " + path);
}

double spectral_contrast(const LogMagSpectrogram& feat) {
  require(feat.frames >= 1 && feat.bins >= 1, Err::ShapeMismatch,
          "spectral_contrast: empty matrix");
  double acc = 0;
  std::vector<double> frame(static_cast<size_t>(feat.bins));
  for (long t = 0; t < feat.frames; ++t) {
    for (long f = 0; f < feat.bins; ++f) frame[static_cast<size_t>(f)] = feat.at(t, f);
    const double peak = *std::max_element(frame.begin(), frame.end());
    acc += peak - median(frame);
  }
  return acc / static_cast<double>(feat.frames);
}

}  // namespace cyclesing
