#include "cyclesing/audio_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace cyclesing {

const char* err_name(Err kind) {
  switch (kind) {
    case Err::NotFound: return "NotFound";
    case Err::IoError: return "IoError";
    case Err::UnsupportedFormat: return "UnsupportedFormat";
    case Err::UnsupportedRate: return "UnsupportedRate";
    case Err::TooShort: return "TooShort";
    case Err::InvalidGeometry: return "InvalidGeometry";
    case Err::DegenerateStats: return "DegenerateStats";
    case Err::ShapeMismatch: return "ShapeMismatch";
    case Err::ZeroTarget: return "ZeroTarget";
    case Err::InputTooShort: return "InputTooShort";
    case Err::BadConfig: return "BadConfig";
    case Err::UnknownVariant: return "UnknownVariant";
    case Err::NonFiniteLoss: return "NonFiniteLoss";
    case Err::VersionMismatch: return "VersionMismatch";
    case Err::CorruptChecksum: return "CorruptChecksum";
    case Err::UnlabeledFile: return "UnlabeledFile";
    case Err::InsufficientSegments: return "InsufficientSegments";
    case Err::CropTooLong: return "CropTooLong";
    case Err::NoVoicedFrames: return "NoVoicedFrames";
    case Err::LengthMismatch: return "LengthMismatch";
    case Err::ZeroReference: return "ZeroReference";
  }
  return "Unknown";
}

namespace {

uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint16_t read_u16(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

void write_u32(std::ostream& out, uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

void write_u16(std::ostream& out, uint16_t v) {
  char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
  out.write(b, 2);
}

struct WavLayout {
  WavInfo info;
  std::streamoff data_offset = 0;
  uint32_t data_bytes = 0;
};

// Walks the RIFF chunk list and locates fmt/data. Unknown chunks are
// skipped with word alignment.
WavLayout parse_wav_header(std::ifstream& in, const std::string& path) {
  char tag[4];
  in.read(tag, 4);
  if (!in || std::memcmp(tag, "RIFF", 4) != 0)
    fail(Err::UnsupportedFormat, path + ": not a RIFF file");
  read_u32(in);  // riff size, unused
  in.read(tag, 4);
  if (!in || std::memcmp(tag, "WAVE", 4) != 0)
    fail(Err::UnsupportedFormat, path + ": not a WAVE file");

  WavLayout lay;
  bool have_fmt = false, have_data = false;
  uint16_t block_align = 0;
  while (in.read(tag, 4)) {
    uint32_t chunk_size = read_u32(in);
    if (!in) break;
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      if (chunk_size < 16) fail(Err::UnsupportedFormat, path + ": short fmt chunk");
      uint16_t format = read_u16(in);
      lay.info.channels = read_u16(in);
      lay.info.sample_rate = static_cast<int>(read_u32(in));
      read_u32(in);  // byte rate
      block_align = read_u16(in);
      lay.info.bits_per_sample = read_u16(in);
      in.seekg(chunk_size - 16, std::ios::cur);
      if (format != 1)
        fail(Err::UnsupportedFormat, path + ": only integer PCM (format 1) supported");
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      lay.data_offset = in.tellg();
      lay.data_bytes = chunk_size;
      have_data = true;
      in.seekg(chunk_size + (chunk_size & 1), std::ios::cur);
    } else {
      in.seekg(chunk_size + (chunk_size & 1), std::ios::cur);
    }
    if (have_fmt && have_data) break;
  }
  if (!have_fmt || !have_data)
    fail(Err::UnsupportedFormat, path + ": missing fmt or data chunk");
  if (lay.info.bits_per_sample != 16)
    fail(Err::UnsupportedFormat, path + ": only 16-bit PCM supported, got " +
                                     std::to_string(lay.info.bits_per_sample) + "-bit");
  if (lay.info.channels < 1 || lay.info.channels > 2)
    fail(Err::UnsupportedFormat,
         path + ": expected 1 or 2 channels, got " + std::to_string(lay.info.channels));
  if (block_align != lay.info.channels * 2)
    fail(Err::UnsupportedFormat, path + ": inconsistent block alignment");
  lay.info.frames = lay.data_bytes / (2u * lay.info.channels);
  return lay;
}

std::ifstream open_existing(const std::string& path) {
  if (!std::filesystem::exists(path)) fail(Err::NotFound, path);
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Err::IoError, "cannot open " + path);
  return in;
}

}  // namespace

WavInfo wav_info(const std::string& path) {
  std::ifstream in = open_existing(path);
  return parse_wav_header(in, path).info;
}

AudioClip read_wav(const std::string& path) {
  std::ifstream in = open_existing(path);
  WavLayout lay = parse_wav_header(in, path);
  if (lay.info.sample_rate != kPipelineRate)
    fail(Err::UnsupportedRate, path + ": rate " + std::to_string(lay.info.sample_rate) +
                                   " != " + std::to_string(kPipelineRate));

  in.clear();
  in.seekg(lay.data_offset);
  std::vector<int16_t> raw(lay.info.frames * lay.info.channels);
  in.read(reinterpret_cast<char*>(raw.data()),
          static_cast<std::streamsize>(raw.size() * 2));
  if (static_cast<size_t>(in.gcount()) != raw.size() * 2)
    fail(Err::IoError, path + ": truncated data chunk");

  AudioClip clip;
  clip.sample_rate = lay.info.sample_rate;
  clip.samples.resize(lay.info.frames);
  constexpr double kScale = 1.0 / 32768.0;
  if (lay.info.channels == 1) {
    for (uint64_t i = 0; i < lay.info.frames; ++i) clip.samples[i] = raw[i] * kScale;
  } else {
    for (uint64_t i = 0; i < lay.info.frames; ++i) {
      clip.samples[i] = (raw[2 * i] + raw[2 * i + 1]) * (kScale * 0.5);
    }
  }
  return clip;
}

void write_wav(const std::string& path, const AudioClip& clip) {
  require(!clip.samples.empty(), Err::BadConfig, "write_wav: empty clip");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Err::IoError, "cannot create " + path);

  const uint32_t data_bytes = static_cast<uint32_t>(clip.samples.size() * 2);
  out.write("RIFF", 4);
  write_u32(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  write_u32(out, 16);
  write_u16(out, 1);  // integer PCM
  write_u16(out, 1);  // mono
  write_u32(out, static_cast<uint32_t>(clip.sample_rate));
  write_u32(out, static_cast<uint32_t>(clip.sample_rate * 2));
  write_u16(out, 2);   // block align
  write_u16(out, 16);  // bits
  out.write("data", 4);
  write_u32(out, data_bytes);

  constexpr double kMax = 1.0 - 1.0 / 32768.0;
  std::vector<int16_t> raw(clip.samples.size());
  for (size_t i = 0; i < clip.samples.size(); ++i) {
    double s = std::clamp(clip.samples[i], -1.0, kMax);
    raw[i] = static_cast<int16_t>(std::lround(s * 32768.0));
  }
  out.write(reinterpret_cast<const char*>(raw.data()),
            static_cast<std::streamsize>(raw.size() * 2));
  if (!out) fail(Err::IoError, "write failed: " + path);
}

std::vector<AudioClip> segment_clip(const AudioClip& clip, double seg_seconds,
                                    double hop_seconds) {
  require(seg_seconds > 0, Err::BadConfig, "segment length must be positive");
  require(hop_seconds > 0 && hop_seconds <= seg_seconds, Err::BadConfig,
          "hop must be in (0, seg]");
  const auto seg = static_cast<size_t>(std::llround(seg_seconds * clip.sample_rate));
  const auto hop = static_cast<size_t>(std::llround(hop_seconds * clip.sample_rate));
  std::vector<AudioClip> out;
  if (clip.samples.size() < seg) return out;
  const size_t count = (clip.samples.size() - seg) / hop + 1;
  out.reserve(count);
  for (size_t i = 0; i < count; ++i) {
    AudioClip s;
    s.sample_rate = clip.sample_rate;
    s.samples.assign(clip.samples.begin() + static_cast<std::ptrdiff_t>(i * hop),
                     clip.samples.begin() + static_cast<std::ptrdiff_t>(i * hop + seg));
    out.push_back(std::move(s));
  }
  return out;
}

AudioClip peak_normalize(const AudioClip& clip, double target_peak) {
  require(target_peak > 0 && target_peak <= 1.0, Err::BadConfig,
          "target peak must be in (0, 1]");
  double peak = 0;
  for (double s : clip.samples) peak = std::max(peak, std::abs(s));
  AudioClip out = clip;
  if (peak > 0) {
    const double g = target_peak / peak;
    for (double& s : out.samples) s *= g;
  }
  return out;
}

}  // namespace cyclesing
