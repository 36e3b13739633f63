#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "cyclesing/dataset.hpp"
#include "cyclesing/evalx.hpp"

using namespace cyclesing;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const char* tag) : path(fs::temp_directory_path() / tag) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

void write_tone(const fs::path& p, double freq, double seconds, int rate = kPipelineRate) {
  AudioClip clip;
  clip.sample_rate = rate;
  const long n = static_cast<long>(seconds * rate);
  clip.samples.resize(n);
  for (long i = 0; i < n; ++i)
    clip.samples[i] = 0.4 * std::sin(2.0 * std::numbers::pi * freq * i / rate);
  write_wav(p.string(), clip);
}

// In-memory manifest shaped like the full corpus: files * offsets per domain,
// no audio behind it (splitting never touches the samples).
Manifest synthetic_manifest(long files_per_domain, long segs_per_file) {
  Manifest m;
  m.seed = 1;
  for (char dom : {'A', 'B'}) {
    for (long f = 0; f < files_per_domain; ++f) {
      for (long s = 0; s < segs_per_file; ++s) {
        SegmentRecord rec;
        rec.source_file = std::string(1, dom) + "_" + std::to_string(f) + ".wav";
        rec.offset_s = static_cast<double>(s);
        rec.domain = dom;
        rec.id = rec.source_file + ":" + std::to_string(s);
        m.records.push_back(rec);
      }
    }
  }
  return m;
}

uint64_t file_hash(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string s = ss.str();
  return fnv1a(s.data(), s.size());
}

}  // namespace

TEST_CASE("build_manifest: segment counts follow the 5 s window / 1 s hop rule") {
  TempDir dir("cs_ds_build");
  write_tone(dir.path / "long.wav", 220.0, 30.0);
  write_tone(dir.path / "short.wav", 330.0, 6.0);
  DomainLabels labels{{"long.wav", 'A'}, {"short.wav", 'B'}};

  const Manifest m = build_manifest(dir.str(), labels);
  // 30 s -> 26 windows, 6 s -> 2 windows
  CHECK(m.records.size() == 28);
  CHECK(m.count('A') == 26);
  CHECK(m.count('B') == 2);

  std::set<std::string> ids;
  double max_offset_a = 0;
  for (const auto& r : m.records) {
    CHECK(r.duration_s == 5.0);
    CHECK(r.id.size() == 16);
    ids.insert(r.id);
    if (r.domain == 'A') max_offset_a = std::max(max_offset_a, r.offset_s);
  }
  CHECK(ids.size() == 28);       // ids unique
  CHECK(max_offset_a == 25.0);   // offsets 0..25
}

TEST_CASE("build_manifest: an unlabeled WAV is an error, not a skip") {
  TempDir dir("cs_ds_unlabeled");
  write_tone(dir.path / "known.wav", 220.0, 6.0);
  write_tone(dir.path / "stray.wav", 220.0, 6.0);
  DomainLabels labels{{"known.wav", 'A'}};
  try {
    build_manifest(dir.str(), labels);
    FAIL("expected UnlabeledFile");
  } catch (const Error& e) {
    CHECK(e.kind() == Err::UnlabeledFile);
  }
}

TEST_CASE("build_manifest: non-pipeline sample rates are rejected") {
  TempDir dir("cs_ds_rate");
  write_tone(dir.path / "a.wav", 220.0, 6.0, 22050);
  DomainLabels labels{{"a.wav", 'A'}};
  try {
    build_manifest(dir.str(), labels);
    FAIL("expected UnsupportedRate");
  } catch (const Error& e) {
    CHECK(e.kind() == Err::UnsupportedRate);
  }
}

TEST_CASE("build_manifest: ids are stable across rebuilds") {
  TempDir dir("cs_ds_stable");
  write_tone(dir.path / "a.wav", 220.0, 7.0);
  DomainLabels labels{{"a.wav", 'A'}};
  const Manifest m1 = build_manifest(dir.str(), labels);
  const Manifest m2 = build_manifest(dir.str(), labels);
  REQUIRE(m1.records.size() == m2.records.size());
  for (size_t i = 0; i < m1.records.size(); ++i)
    CHECK(m1.records[i].id == m2.records[i].id);
}

TEST_CASE("manifest save/load round trip") {
  TempDir dir("cs_ds_io");
  write_tone(dir.path / "a.wav", 220.0, 6.0);
  write_tone(dir.path / "b.wav", 330.0, 6.0);
  DomainLabels labels{{"a.wav", 'A'}, {"b.wav", 'B'}};
  Manifest m = build_manifest(dir.str(), labels);
  m.seed = 77;
  const std::string path = (dir.path / "manifest.tsv").string();
  save_manifest(m, path);
  const Manifest back = load_manifest(path);
  REQUIRE(back.records.size() == m.records.size());
  for (size_t i = 0; i < m.records.size(); ++i) {
    CHECK(back.records[i].id == m.records[i].id);
    CHECK(back.records[i].source_file == m.records[i].source_file);
    CHECK(back.records[i].offset_s == m.records[i].offset_s);
    CHECK(back.records[i].duration_s == m.records[i].duration_s);
    CHECK(back.records[i].domain == m.records[i].domain);
  }
}

TEST_CASE("labels save/load round trip and malformed rows fail loudly") {
  TempDir dir("cs_ds_labels");
  DomainLabels labels{{"x.wav", 'A'}, {"y.wav", 'B'}};
  const std::string path = (dir.path / "labels.tsv").string();
  save_labels(labels, path);
  CHECK(load_labels(path) == labels);

  std::ofstream(path, std::ios::trunc) << "x.wav\tC\n";
  CHECK_THROWS_AS(load_labels(path), Error);
}

TEST_CASE("split_dataset: full-scale counts, disjointness, determinism") {
  const Manifest m = synthetic_manifest(126, 26);  // 3276 per domain, 6552 total
  REQUIRE(m.records.size() == 6552);

  auto [train, test] = split_dataset(m, 2800, 100, 1);
  CHECK(train.count('A') == 2800);
  CHECK(train.count('B') == 2800);
  CHECK(test.count('A') == 100);
  CHECK(test.count('B') == 100);

  std::set<std::string> train_ids, test_ids;
  for (const auto& r : train.records) train_ids.insert(r.id);
  for (const auto& r : test.records) test_ids.insert(r.id);
  CHECK(train_ids.size() == 5600);
  CHECK(test_ids.size() == 200);
  for (const auto& id : test_ids) CHECK(train_ids.count(id) == 0);

  // same seed, same selection; the split is a pure function of (manifest, seed)
  auto [train2, test2] = split_dataset(m, 2800, 100, 1);
  REQUIRE(train2.records.size() == train.records.size());
  for (size_t i = 0; i < train.records.size(); ++i)
    CHECK(train2.records[i].id == train.records[i].id);

  auto [train3, test3] = split_dataset(m, 2800, 100, 2);
  bool differs = false;
  for (size_t i = 0; i < train.records.size() && !differs; ++i)
    differs = train3.records[i].id != train.records[i].id;
  CHECK(differs);
}

TEST_CASE("split_dataset: validity holds across many seeds") {
  const Manifest m = synthetic_manifest(10, 26);  // 260 per domain
  std::set<std::string> parent_ids;
  for (const auto& r : m.records) parent_ids.insert(r.id);

  for (uint64_t seed = 0; seed < 50; ++seed) {
    auto [train, test] = split_dataset(m, 200, 30, seed);
    CHECK(train.count('A') == 200);
    CHECK(train.count('B') == 200);
    CHECK(test.count('A') == 30);
    CHECK(test.count('B') == 30);
    std::set<std::string> seen;
    for (const auto& r : train.records) {
      CHECK(parent_ids.count(r.id) == 1);
      CHECK(seen.insert(r.id).second);  // no duplicates
    }
    for (const auto& r : test.records) {
      CHECK(parent_ids.count(r.id) == 1);
      CHECK(seen.insert(r.id).second);  // disjoint from train
    }
  }
}

TEST_CASE("split_dataset: refuses when a domain cannot cover the request") {
  const Manifest m = synthetic_manifest(10, 26);  // 260 per domain
  CHECK_THROWS_AS(split_dataset(m, 260, 1, 3), Error);
  try {
    split_dataset(m, 260, 1, 3);
  } catch (const Error& e) {
    CHECK(e.kind() == Err::InsufficientSegments);
  }
  CHECK_NOTHROW(split_dataset(m, 259, 1, 3));
}

TEST_CASE("toy corpus: deterministic, labelled, in-band") {
  TempDir dir("cs_ds_toy");
  const Manifest m = gen_toy_corpus(3, 11, dir.str());
  CHECK(m.count('A') == 3);
  CHECK(m.count('B') == 3);
  CHECK(fs::exists(dir.path / "labels.tsv"));
  CHECK(fs::exists(dir.path / "manifest.tsv"));
  CHECK(load_labels((dir.path / "labels.tsv").string()).size() == 6);

  // every tone sits in its domain's pitch band; the tracker is the oracle
  for (const auto& r : m.records) {
    const auto clip = read_wav(r.source_file);
    CHECK(clip.samples.size() == 220500);
    const double f0 = estimate_f0(clip).median_voiced();
    if (r.domain == 'A') {
      CHECK(f0 > 95.0);
      CHECK(f0 < 210.0);
    } else {
      CHECK(f0 > 190.0);
      CHECK(f0 < 420.0);
    }
  }

  // regeneration with the same seed is byte-identical
  TempDir dir2("cs_ds_toy2");
  gen_toy_corpus(3, 11, dir2.str());
  CHECK(file_hash(dir.path / "a_0000.wav") == file_hash(dir2.path / "a_0000.wav"));
  CHECK(file_hash(dir.path / "b_0002.wav") == file_hash(dir2.path / "b_0002.wav"));

  // a different seed draws different pitches
  TempDir dir3("cs_ds_toy3");
  gen_toy_corpus(3, 12, dir3.str());
  CHECK(file_hash(dir.path / "a_0000.wav") != file_hash(dir3.path / "a_0000.wav"));
}

TEST_CASE("toy corpus: zero tones is a configuration error") {
  TempDir dir("cs_ds_toy0");
  CHECK_THROWS_AS(gen_toy_corpus(0, 1, dir.str()), Error);
  try {
    gen_toy_corpus(0, 1, dir.str());
  } catch (const Error& e) {
    CHECK(e.kind() == Err::BadConfig);
  }
}

TEST_CASE("load_segment slices exactly the manifest window") {
  TempDir dir("cs_ds_seg");
  write_tone(dir.path / "a.wav", 220.0, 8.0);
  DomainLabels labels{{"a.wav", 'A'}};
  const Manifest m = build_manifest(dir.str(), labels);
  REQUIRE(m.records.size() == 4);

  const auto full = read_wav((dir.path / "a.wav").string());
  const auto& rec = m.records[2];  // offset 2 s
  const auto seg = load_segment(rec);
  REQUIRE(seg.samples.size() == 220500);
  const long base = static_cast<long>(rec.offset_s * kPipelineRate);
  for (long i = 0; i < 2000; ++i) CHECK(seg.samples[i] == full.samples[base + i]);
  CHECK(seg.samples[220499] == full.samples[base + 220499]);
}

TEST_CASE("compute_norm_stats: a real corpus yields a usable range") {
  TempDir dir("cs_ds_stats");
  const Manifest m = gen_toy_corpus(2, 5, dir.str());
  const NormStats stats = compute_norm_stats(m);
  CHECK(std::isfinite(stats.min));
  CHECK(std::isfinite(stats.max));
  CHECK(stats.min < stats.max);
  // silence floor: every segment has quiet bins near ln(eps)
  CHECK(stats.min == doctest::Approx(std::log(1e-5)).epsilon(0.2));
}

TEST_CASE("sample_batch: shape, range, domain separation, determinism") {
  TempDir dir("cs_ds_batch");
  const Manifest m = gen_toy_corpus(3, 7, dir.str());
  const NormStats stats = compute_norm_stats(m);

  Rng ra(derive_seed(7, "batch_a")), rb(derive_seed(7, "batch_b"));
  auto [ba, bb] = sample_batch(m, 4, 256, ra, rb, stats);
  REQUIRE(ba.rank() == 3);
  CHECK(ba.dim(0) == 4);
  CHECK(ba.dim(1) == 513);
  CHECK(ba.dim(2) == 256);
  CHECK(bb.dim(0) == 4);
  CHECK(bb.dim(1) == 513);
  CHECK(bb.dim(2) == 256);
  CHECK(ba.all_finite());
  for (size_t i = 0; i < ba.size(); ++i) {
    CHECK(ba[i] >= -1.0f);
    CHECK(ba[i] <= 1.0f);
  }

  // same streams, same batches, bitwise
  Rng ra2(derive_seed(7, "batch_a")), rb2(derive_seed(7, "batch_b"));
  auto [ba2, bb2] = sample_batch(m, 4, 256, ra2, rb2, stats);
  for (size_t i = 0; i < ba.size(); ++i) CHECK(ba[i] == ba2[i]);
  for (size_t i = 0; i < bb.size(); ++i) CHECK(bb[i] == bb2[i]);

  // batch larger than the record pool works (sampling with replacement)
  Rng ra3(1), rb3(2);
  auto [big_a, big_b] = sample_batch(m, 8, 64, ra3, rb3, stats);
  CHECK(big_a.dim(0) == 8);
  CHECK(big_b.dim(0) == 8);
}

TEST_CASE("sample_batch: a crop longer than the segment is rejected") {
  TempDir dir("cs_ds_crop");
  const Manifest m = gen_toy_corpus(1, 3, dir.str());
  const NormStats stats{std::log(1e-5), 3.0};
  Rng ra(1), rb(2);
  CHECK_NOTHROW(sample_batch(m, 1, 858, ra, rb, stats));  // exactly the segment
  try {
    sample_batch(m, 1, 859, ra, rb, stats);
    FAIL("expected CropTooLong");
  } catch (const Error& e) {
    CHECK(e.kind() == Err::CropTooLong);
  }
}
