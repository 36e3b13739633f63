#include "cyclesing/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace cyclesing {

namespace fs = std::filesystem;

long Manifest::count(char domain) const {
  long n = 0;
  for (const auto& r : records)
    if (r.domain == domain) ++n;
  return n;
}

std::vector<size_t> Manifest::domain_indices(char domain) const {
  std::vector<size_t> out;
  for (size_t i = 0; i < records.size(); ++i)
    if (records[i].domain == domain) out.push_back(i);
  return out;
}

namespace {

char parse_domain(const std::string& s, const std::string& context) {
  if (s == "A" || s == "a") return 'A';
  if (s == "B" || s == "b") return 'B';
  fail(Err::BadConfig, context + ": domain must be A or B, got '" + s + "'");
}

std::string segment_id(const std::string& source, long long offset_s) {
  const std::string key = source + ":" + std::to_string(offset_s);
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx",
                static_cast<unsigned long long>(fnv1a(key)));
  return hex;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, '\t')) out.push_back(field);
  return out;
}

}  // namespace

DomainLabels load_labels(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), Err::NotFound, "cannot open labels file: " + path);
  DomainLabels out;
  std::string line;
  long lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    require(fields.size() == 2, Err::IoError,
            path + ":" + std::to_string(lineno) + ": want filename<TAB>domain");
    out[fields[0]] = parse_domain(fields[1], path + ":" + std::to_string(lineno));
  }
  return out;
}

void save_labels(const DomainLabels& labels, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  require(f.good(), Err::IoError, "cannot write labels file: " + path);
  for (const auto& [name, domain] : labels) f << name << '\t' << domain << '\n';
  require(f.good(), Err::IoError, "short write: " + path);
}

Manifest build_manifest(const std::string& audio_dir, const DomainLabels& labels) {
  require(fs::is_directory(audio_dir), Err::NotFound, "not a directory: " + audio_dir);
  std::vector<fs::path> wavs;
  for (const auto& entry : fs::directory_iterator(audio_dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext == ".wav") wavs.push_back(entry.path());
  }
  std::sort(wavs.begin(), wavs.end());

  const long long seg = std::llround(kSegmentSeconds * kPipelineRate);
  const long long hop = std::llround(kSegmentHopSeconds * kPipelineRate);
  Manifest m;
  for (const auto& p : wavs) {
    const auto it = labels.find(p.filename().string());
    require(it != labels.end(), Err::UnlabeledFile,
            "no domain label for " + p.filename().string());
    const WavInfo info = wav_info(p.string());
    require(info.sample_rate == kPipelineRate, Err::UnsupportedRate,
            p.string() + ": expected " + std::to_string(kPipelineRate) + " Hz");
    if (static_cast<long long>(info.frames) < seg) continue;
    const long long n = (static_cast<long long>(info.frames) - seg) / hop + 1;
    for (long long i = 0; i < n; ++i) {
      SegmentRecord rec;
      rec.source_file = p.string();
      rec.offset_s = static_cast<double>(i) * kSegmentHopSeconds;
      rec.duration_s = kSegmentSeconds;
      rec.domain = it->second;
      rec.id = segment_id(rec.source_file, i);
      m.records.push_back(std::move(rec));
    }
  }
  return m;
}

void save_manifest(const Manifest& m, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  require(f.good(), Err::IoError, "cannot write manifest: " + path);
  char num[64];
  for (const auto& r : m.records) {
    f << r.id << '\t' << r.source_file << '\t';
    std::snprintf(num, sizeof num, "%.9g\t%.9g", r.offset_s, r.duration_s);
    f << num << '\t' << r.domain << '\n';
  }
  require(f.good(), Err::IoError, "short write: " + path);
}

Manifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), Err::NotFound, "cannot open manifest: " + path);
  Manifest m;
  std::string line;
  long lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    require(fields.size() == 5, Err::IoError,
            path + ":" + std::to_string(lineno) + ": want 5 tab-separated fields");
    SegmentRecord rec;
    rec.id = fields[0];
    rec.source_file = fields[1];
    try {
      rec.offset_s = std::stod(fields[2]);
      rec.duration_s = std::stod(fields[3]);
    } catch (const std::exception&) {
      fail(Err::IoError, path + ":" + std::to_string(lineno) + ": bad number");
    }
    rec.domain = parse_domain(fields[4], path + ":" + std::to_string(lineno));
    m.records.push_back(std::move(rec));
  }
  return m;
}

std::pair<Manifest, Manifest> split_dataset(const Manifest& m, long n_train_per_domain,
                                            long n_test_per_domain, uint64_t seed) {
  require(n_train_per_domain >= 0 && n_test_per_domain >= 0, Err::BadConfig,
          "split_dataset: negative count");
  Manifest train, test;
  train.seed = seed;
  test.seed = seed;
  for (char domain : {'A', 'B'}) {
    auto idx = m.domain_indices(domain);
    const long need = n_train_per_domain + n_test_per_domain;
    require(static_cast<long>(idx.size()) >= need, Err::InsufficientSegments,
            std::string("domain ") + domain + " has " + std::to_string(idx.size()) +
                " records, need " + std::to_string(need));
    Rng rng(derive_seed(seed, domain == 'A' ? "split_a" : "split_b"));
    for (size_t i = idx.size() - 1; i > 0; --i) {
      const size_t j = rng.uniform_int(static_cast<uint64_t>(i + 1));
      std::swap(idx[i], idx[j]);
    }
    for (long i = 0; i < n_train_per_domain; ++i)
      train.records.push_back(m.records[idx[static_cast<size_t>(i)]]);
    for (long i = 0; i < n_test_per_domain; ++i)
      test.records.push_back(
          m.records[idx[static_cast<size_t>(n_train_per_domain + i)]]);
  }
  return {std::move(train), std::move(test)};
}

AudioClip load_segment(const SegmentRecord& rec) {
  AudioClip whole = read_wav(rec.source_file);
  const long long start = std::llround(rec.offset_s * whole.sample_rate);
  const long long count = std::llround(rec.duration_s * whole.sample_rate);
  require(start >= 0 && count > 0 &&
              start + count <= static_cast<long long>(whole.size()),
          Err::IoError,
          rec.source_file + ": segment [" + std::to_string(rec.offset_s) + "s, +" +
              std::to_string(rec.duration_s) + "s] out of range");
  AudioClip out;
  out.sample_rate = whole.sample_rate;
  out.samples.assign(whole.samples.begin() + start, whole.samples.begin() + start + count);
  return out;
}

NormStats compute_norm_stats(const Manifest& m, long window, long hop) {
  require(!m.records.empty(), Err::BadConfig, "compute_norm_stats: empty manifest");
  NormStats stats{std::numeric_limits<double>::infinity(),
                  -std::numeric_limits<double>::infinity()};
  for (const auto& rec : m.records) {
    const AudioClip clip = load_segment(rec);
    const LogMagSpectrogram feat = featurize(stft(clip, window, hop));
    for (double v : feat.v) {
      stats.min = std::min(stats.min, v);
      stats.max = std::max(stats.max, v);
    }
  }
  return stats;
}

namespace {

// One featurized random crop laid out channel-major into out[item].
void sample_item(const Manifest& train, const std::vector<size_t>& idx, long crop_frames,
                 Rng& rng, const NormStats& stats, long window, long hop,
                 Tensor<float>& out, long item) {
  const SegmentRecord& rec = train.records[idx[rng.uniform_int(idx.size())]];
  const long long seg_samples = std::llround(rec.duration_s * kPipelineRate);
  const long frames = static_cast<long>((seg_samples - window) / hop + 1);
  require(crop_frames <= frames, Err::CropTooLong,
          "crop of " + std::to_string(crop_frames) + " frames exceeds segment length " +
              std::to_string(frames));
  const long start = static_cast<long>(rng.uniform_int(
      static_cast<uint64_t>(frames - crop_frames) + 1));

  AudioClip seg = load_segment(rec);
  AudioClip span;
  span.sample_rate = seg.sample_rate;
  const long first = start * hop;
  const long need = window + (crop_frames - 1) * hop;
  span.samples.assign(seg.samples.begin() + first, seg.samples.begin() + first + need);

  const LogMagSpectrogram feat = featurize(stft(span, window, hop), stats);
  require(feat.frames == crop_frames, Err::ShapeMismatch, "crop frame mismatch");
  for (long f = 0; f < feat.bins; ++f)
    for (long t = 0; t < crop_frames; ++t)
      out.at(item, f, t) = static_cast<float>(feat.at(t, f));
}

}  // namespace

std::pair<Tensor<float>, Tensor<float>> sample_batch(const Manifest& train, long batch,
                                                     long crop_frames, Rng& rng_a,
                                                     Rng& rng_b, const NormStats& stats,
                                                     long window, long hop) {
  require(batch >= 1 && crop_frames >= 1, Err::BadConfig, "sample_batch: bad sizes");
  const auto idx_a = train.domain_indices('A');
  const auto idx_b = train.domain_indices('B');
  require(!idx_a.empty() && !idx_b.empty(), Err::InsufficientSegments,
          "sample_batch: both domains must be nonempty");
  const long bins = window / 2 + 1;
  Tensor<float> a(batch, bins, crop_frames);
  Tensor<float> b(batch, bins, crop_frames);
  for (long i = 0; i < batch; ++i) {
    sample_item(train, idx_a, crop_frames, rng_a, stats, window, hop, a, i);
    sample_item(train, idx_b, crop_frames, rng_b, stats, window, hop, b, i);
  }
  return {std::move(a), std::move(b)};
}

namespace {

// Harmonic tone with sinusoidal vibrato. The phase integrates the
// instantaneous frequency f0*(1 + depth*sin(2*pi*rate*t)) exactly.
AudioClip synth_tone(double f0, double seconds, int rate) {
  constexpr double kTau = 6.283185307179586;
  constexpr double kVibratoDepth = 0.02;
  constexpr double kVibratoRate = 5.0;
  constexpr int kPartials = 5;
  AudioClip clip;
  clip.sample_rate = rate;
  const long n = std::lround(seconds * rate);
  clip.samples.resize(static_cast<size_t>(n));
  for (long i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / rate;
    const double cycles =
        f0 * (t - kVibratoDepth * (std::cos(kTau * kVibratoRate * t) - 1.0) /
                      (kTau * kVibratoRate));
    double s = 0;
    for (int k = 1; k <= kPartials; ++k) s += std::sin(kTau * k * cycles) / k;
    clip.samples[static_cast<size_t>(i)] = s;
  }
  return peak_normalize(clip, 0.5);
}

}  // namespace

Manifest gen_toy_corpus(long n_per_domain, uint64_t seed, const std::string& out_dir) {
  require(n_per_domain >= 1, Err::BadConfig, "gen_toy_corpus: need n >= 1");
  fs::create_directories(out_dir);
  Rng rng(derive_seed(seed, "toy_corpus"));
  DomainLabels labels;
  char name[32];
  for (char domain : {'A', 'B'}) {
    const double lo = domain == 'A' ? 100.0 : 200.0;
    const double hi = domain == 'A' ? 200.0 : 400.0;
    for (long i = 0; i < n_per_domain; ++i) {
      const double f0 = rng.uniform(lo, hi);
      std::snprintf(name, sizeof name, "%c_%04ld.wav", domain == 'A' ? 'a' : 'b', i);
      write_wav((fs::path(out_dir) / name).string(),
                synth_tone(f0, kSegmentSeconds, kPipelineRate));
      labels[name] = domain;
    }
  }
  save_labels(labels, (fs::path(out_dir) / "labels.tsv").string());
  Manifest m = build_manifest(out_dir, labels);
  m.seed = seed;
  save_manifest(m, (fs::path(out_dir) / "manifest.tsv").string());
  return m;
}

}  // namespace cyclesing
