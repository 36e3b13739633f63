// Command-line front end: corpus preparation, training, transfer, objective
// evaluation, and spectrogram rendering. Exit codes: 0 ok, 1 usage, 2 data
// or I/O failure, 3 numeric failure during training.

#include <atomic>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include <CLI11.hpp>

#include "cyclesing/dataset.hpp"
#include "cyclesing/evalx.hpp"
#include "cyclesing/models.hpp"
#include "cyclesing/spectral.hpp"
#include "cyclesing/training.hpp"

namespace cs = cyclesing;
namespace fs = std::filesystem;

namespace {

// Bounded producer/consumer queue for multi-worker batch prefetch. Arrival
// order depends on thread scheduling, so --workers > 1 is nondeterministic.
class BatchQueue {
 public:
  explicit BatchQueue(size_t cap) : cap_(cap) {}

  void push(std::pair<cs::Tensor<float>, cs::Tensor<float>> item) {
    std::unique_lock lock(mu_);
    cv_space_.wait(lock, [this] { return q_.size() < cap_ || stop_; });
    if (stop_) return;
    q_.push_back(std::move(item));
    cv_item_.notify_one();
  }

  std::pair<cs::Tensor<float>, cs::Tensor<float>> pop() {
    std::unique_lock lock(mu_);
    cv_item_.wait(lock, [this] { return !q_.empty(); });
    auto item = std::move(q_.front());
    q_.pop_front();
    cv_space_.notify_one();
    return item;
  }

  void stop() {
    std::lock_guard lock(mu_);
    stop_ = true;
    cv_space_.notify_all();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_item_, cv_space_;
  std::deque<std::pair<cs::Tensor<float>, cs::Tensor<float>>> q_;
  size_t cap_;
  bool stop_ = false;
};

cs::Tensor<float> feature_to_tensor(const cs::LogMagSpectrogram& feat) {
  cs::Tensor<float> x(1, feat.bins, feat.frames);
  for (long f = 0; f < feat.bins; ++f)
    for (long t = 0; t < feat.frames; ++t)
      x.at(0, f, t) = static_cast<float>(feat.at(t, f));
  return x;
}

cs::LogMagSpectrogram tensor_to_feature(const cs::Tensor<float>& x,
                                        const cs::LogMagSpectrogram& like) {
  cs::LogMagSpectrogram out = like;
  for (long f = 0; f < out.bins; ++f)
    for (long t = 0; t < out.frames; ++t)
      out.at(t, f) = static_cast<double>(x.at(0, f, t));
  return out;
}

struct PrepareOpts {
  bool toy = false;
  long n_per_domain = 200;
  std::string out_dir;
  std::string audio_dir, labels_path, manifest_out;
  long split_train = 0, split_test = 0;
  uint64_t seed = 1234;
};

int run_prepare(const PrepareOpts& o) {
  cs::Manifest manifest;
  fs::path split_dir;
  if (o.toy) {
    manifest = cs::gen_toy_corpus(o.n_per_domain, o.seed, o.out_dir);
    split_dir = o.out_dir;
    std::cout << "toy corpus: " << 2 * o.n_per_domain << " tones under " << o.out_dir
              << "\n";
  } else {
    cs::require(!o.audio_dir.empty() && !o.labels_path.empty() && !o.manifest_out.empty(),
                cs::Err::BadConfig,
                "prepare needs --toy or --audio-dir/--labels/--manifest-out");
    manifest = cs::build_manifest(o.audio_dir, cs::load_labels(o.labels_path));
    cs::save_manifest(manifest, o.manifest_out);
    split_dir = fs::path(o.manifest_out).parent_path();
  }
  std::cout << "manifest: " << manifest.records.size() << " segments (A="
            << manifest.count('A') << ", B=" << manifest.count('B') << ")\n";
  if (o.split_train > 0) {
    auto [train, test] = cs::split_dataset(manifest, o.split_train, o.split_test, o.seed);
    cs::save_manifest(train, (split_dir / "train.tsv").string());
    cs::save_manifest(test, (split_dir / "test.tsv").string());
    std::cout << "split: " << o.split_train << "+" << o.split_test
              << " per domain -> train.tsv/test.tsv\n";
  }
  return 0;
}

struct TrainOpts {
  std::string variant = "m5";
  std::string manifest_path;
  std::string out_dir = ".";
  std::string resume;
  std::string loss_log;
  long steps = 2000;
  long batch = 8;
  long crop = 256;
  long depth = 2;
  long base = 16;
  long kernel = 5;
  long hop = cs::kDefaultHop;
  long ckpt_every = 0;
  long workers = 1;
  double lr = 1e-4;
  double lambda_cyc = 10.0;
  double gamma = 0.5;
  double lambda_k = 0.001;
  uint64_t seed = 1234;
};

std::string ckpt_name(const std::string& variant, long step) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_step%04ld.ckpt", variant.c_str(), step);
  return buf;
}

int run_train(const TrainOpts& o) {
  const cs::Manifest train = cs::load_manifest(o.manifest_path);
  fs::create_directories(o.out_dir);
  const std::string loss_log =
      o.loss_log.empty() ? (fs::path(o.out_dir) / "losses.csv").string() : o.loss_log;

  cs::TrainState st = [&] {
    if (!o.resume.empty()) return cs::load_checkpoint(o.resume);
    cs::VariantSpec spec = cs::find_variant(o.variant);
    spec.depth = o.depth;
    spec.base_channels = o.base;
    cs::TrainConfig cfg;
    cfg.spec = spec;
    cfg.bins = cs::kDefaultWindow / 2 + 1;
    cfg.kernel = o.kernel;
    cfg.window = cs::kDefaultWindow;
    cfg.hop = o.hop;
    cfg.lr = o.lr;
    cfg.lambda_cyc = o.lambda_cyc;
    cfg.gamma = o.gamma;
    cfg.lambda_k = o.lambda_k;
    cfg.seed = o.seed;
    cs::TrainState fresh = cs::init_train_state(cfg);
    fresh.norm_stats = cs::compute_norm_stats(train, cfg.window, cfg.hop);
    return fresh;
  }();

  std::cout << cs::variant_summary(st.cfg.spec);
  std::cout << "features: " << st.cfg.bins << " bins, window " << st.cfg.window << ", hop "
            << st.cfg.hop << ", norm [" << st.norm_stats.min << ", " << st.norm_stats.max
            << "]\n";

  auto save = [&](long step) {
    const std::string path =
        (fs::path(o.out_dir) / ckpt_name(st.cfg.spec.name, step)).string();
    cs::save_checkpoint(st, path);
    std::cout << "saved " << path << "\n";
  };

  auto report_line = [&](const cs::LossReport& rep) {
    std::cout << "step " << st.step << "/" << o.steps << " adv=" << rep.adv_g_ab << "/"
              << rep.adv_g_ba << " cyc=" << rep.cyc_a << "/" << rep.cyc_b
              << " d=" << rep.d_a << "/" << rep.d_b << " k=" << st.k_a << "/" << st.k_b
              << std::endl;
  };

  if (o.workers <= 1) {
    while (st.step < o.steps) {
      auto [a, b] = cs::sample_batch(train, o.batch, o.crop, st.rng_a, st.rng_b,
                                     st.norm_stats, st.cfg.window, st.cfg.hop);
      const cs::LossReport rep = cs::train_step(st, a, b);
      cs::append_loss_log(loss_log, st.step, rep, st.k_a, st.k_b);
      if (st.step % 50 == 0 || st.step == o.steps) report_line(rep);
      if (o.ckpt_every > 0 && st.step % o.ckpt_every == 0 && st.step < o.steps)
        save(st.step);
    }
  } else {
    BatchQueue queue(static_cast<size_t>(2 * o.workers));
    std::atomic<long> remaining{o.steps - st.step};
    std::vector<std::thread> pool;
    for (long w = 0; w < o.workers; ++w) {
      pool.emplace_back([&, w] {
        cs::Rng rng_a(cs::derive_seed(st.cfg.seed, "worker_a" + std::to_string(w)));
        cs::Rng rng_b(cs::derive_seed(st.cfg.seed, "worker_b" + std::to_string(w)));
        while (remaining.fetch_sub(1) > 0) {
          queue.push(cs::sample_batch(train, o.batch, o.crop, rng_a, rng_b,
                                      st.norm_stats, st.cfg.window, st.cfg.hop));
        }
      });
    }
    while (st.step < o.steps) {
      auto [a, b] = queue.pop();
      const cs::LossReport rep = cs::train_step(st, a, b);
      cs::append_loss_log(loss_log, st.step, rep, st.k_a, st.k_b);
      if (st.step % 50 == 0 || st.step == o.steps) report_line(rep);
      if (o.ckpt_every > 0 && st.step % o.ckpt_every == 0 && st.step < o.steps)
        save(st.step);
    }
    queue.stop();
    for (auto& t : pool) t.join();
  }
  save(st.step);
  return 0;
}

struct TransferOpts {
  std::string ckpt, direction = "a2b", in_path, out_path, dump_features;
  long gl_iters = 100;
  int64_t gl_seed = -1;  // <0: deterministic zero-phase init
};

int run_transfer(const TransferOpts& o) {
  cs::TrainState st = cs::load_checkpoint(o.ckpt);
  cs::require(o.direction == "a2b" || o.direction == "b2a", cs::Err::BadConfig,
              "--direction must be a2b or b2a");
  cs::Generator<float>& gen = o.direction == "a2b" ? st.g_ab : st.g_ba;

  const cs::AudioClip clip = cs::read_wav(o.in_path);
  const cs::ComplexSpectrogram spec = cs::stft(clip, st.cfg.window, st.cfg.hop);
  const cs::LogMagSpectrogram feat = cs::featurize(spec, st.norm_stats);
  const cs::Tensor<float> y = gen.forward(feature_to_tensor(feat), nullptr);
  const cs::LogMagSpectrogram feat_out = tensor_to_feature(y, feat);
  if (!o.dump_features.empty()) cs::dump_feature(feat_out, o.dump_features);

  const cs::MagSpectrogram mag = cs::defeaturize(feat_out);
  std::optional<uint64_t> gl_seed;
  if (o.gl_seed >= 0) gl_seed = static_cast<uint64_t>(o.gl_seed);
  cs::GriffinLimResult gl = cs::griffin_lim(mag, o.gl_iters, gl_seed);

  cs::AudioClip out = std::move(gl.clip);
  out.samples.resize(clip.size(), 0.0);  // stft drops the tail remainder
  cs::write_wav(o.out_path, out);
  std::cout << "transfer " << o.direction << ": " << o.in_path << " -> " << o.out_path
            << " (" << out.samples.size() << " samples, final convergence "
            << gl.convergence.back() << ")\n";
  return 0;
}

struct EvalOpts {
  std::string source, transferred, reference, report;
};

int run_eval(const EvalOpts& o) {
  const cs::AudioClip src = cs::read_wav(o.source);
  const cs::AudioClip dst = cs::read_wav(o.transferred);
  std::vector<std::string> lines;
  char buf[96];

  std::snprintf(buf, sizeof buf, "f0_shift_semitones=%.6g", cs::mean_f0_shift(src, dst));
  lines.emplace_back(buf);
  cs::AudioClip ref_storage;
  const cs::AudioClip* ref = &src;
  if (!o.reference.empty()) {
    ref_storage = cs::read_wav(o.reference);
    ref = &ref_storage;
  }
  std::snprintf(buf, sizeof buf, "snr_db=%.6g", cs::reconstruction_snr(*ref, dst));
  lines.emplace_back(buf);
  std::snprintf(buf, sizeof buf, "contrast_source=%.6g",
                cs::spectral_contrast(cs::featurize(cs::stft(src))));
  lines.emplace_back(buf);
  std::snprintf(buf, sizeof buf, "contrast_transferred=%.6g",
                cs::spectral_contrast(cs::featurize(cs::stft(dst))));
  lines.emplace_back(buf);
  // no objective stand-in exists for these listening-test axes
  lines.emplace_back("lyrics=not_evaluated");
  lines.emplace_back("naturalness=not_evaluated");
  lines.emplace_back("overall=not_evaluated");

  for (const auto& l : lines) std::cout << l << "\n";
  if (!o.report.empty()) {
    std::ofstream f(o.report, std::ios::app);
    cs::require(f.good(), cs::Err::IoError, "cannot open report: " + o.report);
    for (const auto& l : lines) f << l << '\n';
  }
  return 0;
}

struct PlotOpts {
  std::string in_wav, in_features, out_path;
  long hop = cs::kDefaultHop;
};

int run_plot(const PlotOpts& o) {
  cs::require(o.in_wav.empty() != o.in_features.empty(), cs::Err::BadConfig,
              "plot needs exactly one of --in / --features");
  cs::LogMagSpectrogram feat;
  if (!o.in_wav.empty())
    feat = cs::featurize(cs::stft(cs::read_wav(o.in_wav), cs::kDefaultWindow, o.hop));
  else
    feat = cs::load_feature(o.in_features);
  cs::export_spectrogram_image(feat, o.out_path);
  std::cout << "wrote " << o.out_path << " (" << feat.frames << "x" << feat.bins << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-domain singing style transfer over log-magnitude spectrograms"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value defaults file (flags override)");
  app.fallthrough(false);

  PrepareOpts prep;
  CLI::App* c_prep = app.add_subcommand("prepare", "Build a manifest or a toy corpus");
  c_prep->add_flag("--toy", prep.toy, "generate the synthetic two-domain tone corpus");
  c_prep->add_option("--n-per-domain", prep.n_per_domain, "tones per domain (toy mode)");
  c_prep->add_option("--out", prep.out_dir, "output directory (toy mode)");
  c_prep->add_option("--audio-dir", prep.audio_dir, "directory of 44.1 kHz WAVs");
  c_prep->add_option("--labels", prep.labels_path, "filename<TAB>domain labeling file");
  c_prep->add_option("--manifest-out", prep.manifest_out, "manifest output path");
  c_prep->add_option("--split-train", prep.split_train, "train segments per domain");
  c_prep->add_option("--split-test", prep.split_test, "test segments per domain");
  c_prep->add_option("--seed", prep.seed, "rng seed")->envname("CBGAN_SEED");

  TrainOpts tr;
  CLI::App* c_train = app.add_subcommand("train", "Train a variant on a manifest");
  c_train->add_option("--variant", tr.variant, "m1..m5")->required();
  c_train->add_option("--manifest", tr.manifest_path, "training manifest")->required();
  c_train->add_option("--out-dir", tr.out_dir, "checkpoint/log directory");
  c_train->add_option("--steps", tr.steps, "total optimization steps");
  c_train->add_option("--batch", tr.batch, "batch size");
  c_train->add_option("--crop", tr.crop, "temporal crop in frames");
  c_train->add_option("--depth", tr.depth, "encoder levels");
  c_train->add_option("--base-channels", tr.base, "first encoder width");
  c_train->add_option("--kernel", tr.kernel, "conv kernel size (odd)");
  c_train->add_option("--hop", tr.hop, "stft hop in samples (256 or literal 768)");
  c_train->add_option("--lr", tr.lr, "adam learning rate");
  c_train->add_option("--lambda-cyc", tr.lambda_cyc, "cycle-consistency weight");
  c_train->add_option("--gamma", tr.gamma, "equilibrium diversity ratio");
  c_train->add_option("--lambda-k", tr.lambda_k, "equilibrium gain");
  c_train->add_option("--ckpt-every", tr.ckpt_every, "save every N steps (0 = final only)");
  c_train->add_option("--workers", tr.workers,
                      "batch prefetch workers; >1 is nondeterministic");
  c_train->add_option("--resume", tr.resume, "checkpoint to continue from");
  c_train->add_option("--loss-log", tr.loss_log, "loss csv path");
  c_train->add_option("--seed", tr.seed, "rng seed")->envname("CBGAN_SEED");

  TransferOpts tf;
  CLI::App* c_tf = app.add_subcommand("transfer", "Run one WAV through a generator");
  c_tf->add_option("--ckpt", tf.ckpt, "checkpoint path")->required();
  c_tf->add_option("--direction", tf.direction, "a2b or b2a")->required();
  c_tf->add_option("--in", tf.in_path, "input WAV")->required();
  c_tf->add_option("--out", tf.out_path, "output WAV")->required();
  c_tf->add_option("--gl-iters", tf.gl_iters, "phase reconstruction iterations");
  c_tf->add_option("--gl-seed", tf.gl_seed, "random-phase seed (default zero phase)");
  c_tf->add_option("--dump-features", tf.dump_features, "write transferred features");

  EvalOpts ev;
  CLI::App* c_ev = app.add_subcommand("eval", "Objective metrics for a transfer");
  c_ev->add_option("--source", ev.source, "source WAV")->required();
  c_ev->add_option("--transferred", ev.transferred, "transferred WAV")->required();
  c_ev->add_option("--reference", ev.reference, "SNR reference (default: source)");
  c_ev->add_option("--report", ev.report, "append metric lines to this file");

  PlotOpts pl;
  CLI::App* c_pl = app.add_subcommand("plot", "Render a spectrogram image");
  c_pl->add_option("--in", pl.in_wav, "input WAV");
  c_pl->add_option("--features", pl.in_features, "dumped feature file");
  c_pl->add_option("--out", pl.out_path, "output PGM path")->required();
  c_pl->add_option("--hop", pl.hop, "stft hop in samples");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help/--version
    app.exit(e);
    return 1;
  }

  try {
    if (app.got_subcommand(c_prep)) return run_prepare(prep);
    if (app.got_subcommand(c_train)) return run_train(tr);
    if (app.got_subcommand(c_tf)) return run_transfer(tf);
    if (app.got_subcommand(c_ev)) return run_eval(ev);
    if (app.got_subcommand(c_pl)) return run_plot(pl);
  } catch (const cs::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == cs::Err::NonFiniteLoss ? 3 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
