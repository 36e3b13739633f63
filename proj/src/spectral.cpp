#include "cyclesing/spectral.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numbers>

#include "cyclesing/rng.hpp"

namespace cyclesing {

namespace {

// FFTW's planner is not thread-safe; executions of distinct plans are.
std::mutex g_planner_mutex;

class RealFft {
 public:
  explicit RealFft(long n) : n_(n) {
    std::lock_guard<std::mutex> lock(g_planner_mutex);
    real_ = fftw_alloc_real(static_cast<size_t>(n));
    cplx_ = fftw_alloc_complex(static_cast<size_t>(n / 2 + 1));
    fwd_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), real_, cplx_, FFTW_ESTIMATE);
    inv_ = fftw_plan_dft_c2r_1d(static_cast<int>(n), cplx_, real_, FFTW_ESTIMATE);
  }

  ~RealFft() {
    std::lock_guard<std::mutex> lock(g_planner_mutex);
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(inv_);
    fftw_free(real_);
    fftw_free(cplx_);
  }

  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  void forward(const double* in, std::complex<double>* out) {
    std::memcpy(real_, in, sizeof(double) * static_cast<size_t>(n_));
    fftw_execute(fwd_);
    std::memcpy(out, cplx_, sizeof(fftw_complex) * static_cast<size_t>(n_ / 2 + 1));
  }

  // Includes the 1/n scale FFTW leaves out.
  void inverse(const std::complex<double>* in, double* out) {
    std::memcpy(cplx_, in, sizeof(fftw_complex) * static_cast<size_t>(n_ / 2 + 1));
    fftw_execute(inv_);
    const double scale = 1.0 / static_cast<double>(n_);
    for (long i = 0; i < n_; ++i) out[i] = real_[i] * scale;
  }

 private:
  long n_;
  double* real_;
  fftw_complex* cplx_;
  fftw_plan fwd_;
  fftw_plan inv_;
};

std::vector<double> hann_window(long n) {
  std::vector<double> w(static_cast<size_t>(n));
  for (long i = 0; i < n; ++i) {
    w[static_cast<size_t>(i)] =
        0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                              static_cast<double>(n)));
  }
  return w;
}

void check_geometry(long window_size, long hop) {
  require(window_size >= 2, Err::InvalidGeometry, "window size must be >= 2");
  require(hop >= 1, Err::InvalidGeometry, "hop must be >= 1");
}

}  // namespace

ComplexSpectrogram stft(const AudioClip& clip, long window_size, long hop) {
  check_geometry(window_size, hop);
  const long len = static_cast<long>(clip.samples.size());
  if (len < window_size)
    fail(Err::TooShort, "clip of " + std::to_string(len) + " samples < window " +
                            std::to_string(window_size));

  ComplexSpectrogram spec;
  spec.window_size = window_size;
  spec.hop = hop;
  spec.sample_rate = clip.sample_rate;
  spec.frames = (len - window_size) / hop + 1;
  spec.bins = window_size / 2 + 1;
  spec.v.resize(static_cast<size_t>(spec.frames * spec.bins));

  const std::vector<double> win = hann_window(window_size);
  std::vector<double> frame(static_cast<size_t>(window_size));
  RealFft fft(window_size);
  for (long t = 0; t < spec.frames; ++t) {
    const double* src = clip.samples.data() + t * hop;
    for (long i = 0; i < window_size; ++i)
      frame[static_cast<size_t>(i)] = src[i] * win[static_cast<size_t>(i)];
    fft.forward(frame.data(), &spec.v[static_cast<size_t>(t * spec.bins)]);
  }
  return spec;
}

AudioClip istft(const ComplexSpectrogram& spec) {
  check_geometry(spec.window_size, spec.hop);
  require(spec.frames >= 1, Err::InvalidGeometry, "istft: no frames");
  require(spec.bins == spec.window_size / 2 + 1, Err::ShapeMismatch,
          "istft: bins inconsistent with window size");
  // hop > window leaves interior samples no window touches.
  if (spec.hop > spec.window_size)
    fail(Err::InvalidGeometry, "hop " + std::to_string(spec.hop) + " > window " +
                                   std::to_string(spec.window_size));

  const long n = spec.window_size;
  const long len = (spec.frames - 1) * spec.hop + n;
  std::vector<double> acc(static_cast<size_t>(len), 0.0);
  std::vector<double> wsum(static_cast<size_t>(len), 0.0);
  const std::vector<double> win = hann_window(n);

  RealFft fft(n);
  std::vector<double> frame(static_cast<size_t>(n));
  for (long t = 0; t < spec.frames; ++t) {
    fft.inverse(&spec.v[static_cast<size_t>(t * spec.bins)], frame.data());
    double* dst = acc.data() + t * spec.hop;
    double* ws = wsum.data() + t * spec.hop;
    for (long i = 0; i < n; ++i) {
      const double w = win[static_cast<size_t>(i)];
      dst[i] += w * frame[static_cast<size_t>(i)];
      ws[i] += w * w;
    }
  }

  constexpr double kTiny = 1e-12;
  AudioClip out;
  out.sample_rate = spec.sample_rate;
  out.samples.resize(static_cast<size_t>(len));
  for (long i = 0; i < len; ++i) {
    const double ws = wsum[static_cast<size_t>(i)];
    if (ws > kTiny) {
      out.samples[static_cast<size_t>(i)] = acc[static_cast<size_t>(i)] / ws;
    } else if (i >= spec.hop && i < len - spec.hop) {
      // Hann vanishes only at window edges; a dead interior sample means
      // the geometry cannot cover the signal.
      fail(Err::InvalidGeometry,
           "window sum vanishes at interior sample " + std::to_string(i));
    } else {
      out.samples[static_cast<size_t>(i)] = 0.0;
    }
  }
  return out;
}

LogMagSpectrogram featurize(const ComplexSpectrogram& spec, std::optional<NormStats> stats) {
  if (stats) {
    require(stats->max != stats->min, Err::DegenerateStats,
            "featurize: max == min in norm stats");
  }
  LogMagSpectrogram feat;
  feat.frames = spec.frames;
  feat.bins = spec.bins;
  feat.window_size = spec.window_size;
  feat.hop = spec.hop;
  feat.sample_rate = spec.sample_rate;
  feat.eps = kLogFloor;
  feat.stats = stats;
  feat.v.resize(spec.v.size());
  for (size_t i = 0; i < spec.v.size(); ++i) {
    double y = std::log(std::abs(spec.v[i]) + kLogFloor);
    if (stats) {
      y = 2.0 * (y - stats->min) / (stats->max - stats->min) - 1.0;
      y = std::clamp(y, -1.0, 1.0);
    }
    feat.v[i] = y;
  }
  return feat;
}

MagSpectrogram defeaturize(const LogMagSpectrogram& feat) {
  MagSpectrogram mag;
  mag.frames = feat.frames;
  mag.bins = feat.bins;
  mag.window_size = feat.window_size;
  mag.hop = feat.hop;
  mag.sample_rate = feat.sample_rate;
  mag.v.resize(feat.v.size());
  for (size_t i = 0; i < feat.v.size(); ++i) {
    double y = feat.v[i];
    if (feat.stats) {
      y = (y + 1.0) * 0.5 * (feat.stats->max - feat.stats->min) + feat.stats->min;
    }
    mag.v[i] = std::max(std::exp(y) - feat.eps, 0.0);
  }
  return mag;
}

MagSpectrogram magnitude(const ComplexSpectrogram& spec) {
  MagSpectrogram mag;
  mag.frames = spec.frames;
  mag.bins = spec.bins;
  mag.window_size = spec.window_size;
  mag.hop = spec.hop;
  mag.sample_rate = spec.sample_rate;
  mag.v.resize(spec.v.size());
  for (size_t i = 0; i < spec.v.size(); ++i) mag.v[i] = std::abs(spec.v[i]);
  return mag;
}

double spectral_convergence(const MagSpectrogram& target, const MagSpectrogram& estimate) {
  require(target.frames == estimate.frames && target.bins == estimate.bins,
          Err::ShapeMismatch, "spectral_convergence: shape mismatch");
  double num = 0, den = 0;
  for (size_t i = 0; i < target.v.size(); ++i) {
    const double d = target.v[i] - estimate.v[i];
    num += d * d;
    den += target.v[i] * target.v[i];
  }
  require(den > 0, Err::ZeroTarget, "spectral_convergence: all-zero target");
  return std::sqrt(num / den);
}

GriffinLimResult griffin_lim(const MagSpectrogram& mag, long iterations,
                             std::optional<uint64_t> seed) {
  require(iterations >= 0, Err::BadConfig, "iterations must be >= 0");
  for (double m : mag.v)
    require(std::isfinite(m) && m >= 0, Err::BadConfig, "magnitudes must be finite and >= 0");

  ComplexSpectrogram spec;
  spec.frames = mag.frames;
  spec.bins = mag.bins;
  spec.window_size = mag.window_size;
  spec.hop = mag.hop;
  spec.sample_rate = mag.sample_rate;
  spec.v.resize(mag.v.size());

  if (seed) {
    Rng rng(*seed);
    for (size_t i = 0; i < mag.v.size(); ++i) {
      const double phi = rng.uniform(-std::numbers::pi, std::numbers::pi);
      spec.v[i] = std::polar(mag.v[i], phi);
    }
  } else {
    for (size_t i = 0; i < mag.v.size(); ++i) spec.v[i] = mag.v[i];
  }

  const bool zero_target = std::all_of(mag.v.begin(), mag.v.end(),
                                       [](double m) { return m == 0.0; });

  GriffinLimResult res;
  res.clip = istft(spec);
  for (long k = 0;; ++k) {
    ComplexSpectrogram est = stft(res.clip);
    double num = 0;
    for (size_t i = 0; i < est.v.size(); ++i) {
      const double d = std::abs(est.v[i]) - mag.v[i];
      num += d * d;
    }
    double den = 0;
    for (double m : mag.v) den += m * m;
    res.convergence.push_back(zero_target ? 0.0 : std::sqrt(num / den));
    if (k == iterations) break;
    for (size_t i = 0; i < est.v.size(); ++i) {
      const double a = std::abs(est.v[i]);
      spec.v[i] = a > 0 ? est.v[i] * (mag.v[i] / a) : std::complex<double>(mag.v[i], 0.0);
    }
    res.clip = istft(spec);
  }
  return res;
}

namespace {
constexpr char kFeatMagic[4] = {'C', 'S', 'F', '1'};
}

void dump_feature(const LogMagSpectrogram& feat, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Err::IoError, "cannot create " + path);
  out.write(kFeatMagic, 4);
  const uint32_t t = static_cast<uint32_t>(feat.frames);
  const uint32_t f = static_cast<uint32_t>(feat.bins);
  const uint32_t kind = 0;  // 0 = float32 log-magnitude
  out.write(reinterpret_cast<const char*>(&t), 4);
  out.write(reinterpret_cast<const char*>(&f), 4);
  out.write(reinterpret_cast<const char*>(&kind), 4);
  std::vector<float> row(feat.v.size());
  for (size_t i = 0; i < feat.v.size(); ++i) row[i] = static_cast<float>(feat.v[i]);
  out.write(reinterpret_cast<const char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(float)));
  if (!out) fail(Err::IoError, "write failed: " + path);
}

LogMagSpectrogram load_feature(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Err::NotFound, path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kFeatMagic, 4) != 0)
    fail(Err::UnsupportedFormat, path + ": not a feature dump");
  uint32_t t = 0, f = 0, kind = 0;
  in.read(reinterpret_cast<char*>(&t), 4);
  in.read(reinterpret_cast<char*>(&f), 4);
  in.read(reinterpret_cast<char*>(&kind), 4);
  if (!in || kind != 0) fail(Err::UnsupportedFormat, path + ": unknown element kind");
  LogMagSpectrogram feat;
  feat.frames = t;
  feat.bins = f;
  std::vector<float> row(static_cast<size_t>(t) * f);
  in.read(reinterpret_cast<char*>(row.data()),
          static_cast<std::streamsize>(row.size() * sizeof(float)));
  if (static_cast<size_t>(in.gcount()) != row.size() * sizeof(float))
    fail(Err::IoError, path + ": truncated feature dump");
  feat.v.assign(row.begin(), row.end());
  return feat;
}

}  // namespace cyclesing
