#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cyclesing/nn.hpp"

namespace cyclesing {

inline constexpr long kFeatureBins = 513;  // window 1024 -> one-sided bins

// Ablation flags for the five model variants m1..m5.
struct VariantSpec {
  std::string name;
  bool began = false;      // auto-encoder discriminator + equilibrium control
  bool skip = false;       // encoder->decoder channel concatenation
  bool recurrent = false;  // GRU before the output convolution
  long base_channels = 16;
  long depth = 2;  // encoder levels
};

const std::vector<VariantSpec>& variant_registry();

// Looks up m1..m5; throws UnknownVariant otherwise. base/depth keep defaults.
VariantSpec find_variant(const std::string& name);

// ---------------------------------------------------------------------------
// Encoder/decoder translation network over (B, bins, T) features.
// Encoder: depth stride-2 convs (bins -> c -> 2c -> ...), bottleneck conv,
// decoder: stride-2 transposed convs back to base width (skip variants concat
// the same-resolution encoder activation first), optional GRU, then a final
// stride-1 conv to bins with tanh. Output length always equals input length.
// ---------------------------------------------------------------------------
template <typename T>
class Generator {
 public:
  struct Config {
    long bins = kFeatureBins;
    long base = 16;
    long depth = 2;
    long kernel = 5;
    bool skip = false;
    bool recurrent = false;
  };

  struct Ctx {
    std::vector<typename Conv1d<T>::Ctx> enc_conv;
    std::vector<typename InstanceNorm<T>::Ctx> enc_norm;
    std::vector<typename LeakyRelu<T>::Ctx> enc_act;
    typename Conv1d<T>::Ctx mid_conv;
    typename InstanceNorm<T>::Ctx mid_norm;
    typename LeakyRelu<T>::Ctx mid_act;
    std::vector<typename ConvTranspose1d<T>::Ctx> dec_conv;
    std::vector<typename InstanceNorm<T>::Ctx> dec_norm;
    std::vector<typename LeakyRelu<T>::Ctx> dec_act;
    typename GruLayer<T>::Ctx gru;
    typename Conv1d<T>::Ctx out_conv;
    typename TanhAct<T>::Ctx out_act;
    std::vector<long> lengths;        // lengths[i] = frames at encoder level i
    std::vector<Tensor<T>> enc_acts;  // saved activations (skip wiring only)
    std::vector<long> pre_crop;       // transposed-conv output length per level
  };

  Generator() = default;

  Generator(std::string prefix, Config cfg) : prefix_(std::move(prefix)), cfg_(cfg) {
    require(cfg.depth >= 1 && cfg.base >= 1, Err::BadConfig, "generator: depth/base >= 1");
    for (long i = 0; i < cfg.depth; ++i) {
      enc_conv_.emplace_back(prefix_ + ".enc" + std::to_string(i), ch(i), ch(i + 1),
                             cfg.kernel, 2, Pad::Same);
      enc_norm_.emplace_back(prefix_ + ".enc" + std::to_string(i) + ".norm", ch(i + 1));
    }
    mid_conv_ = Conv1d<T>(prefix_ + ".mid", ch(cfg.depth), ch(cfg.depth), cfg.kernel, 1,
                          Pad::Same);
    mid_norm_ = InstanceNorm<T>(prefix_ + ".mid.norm", ch(cfg.depth));
    for (long j = 0; j < cfg.depth; ++j) {
      const long in_act = ch(cfg.depth - j);
      const long out = (j + 1 < cfg.depth) ? ch(cfg.depth - j - 1) : ch(1);
      const long in_conv = cfg.skip ? 2 * in_act : in_act;
      dec_conv_.emplace_back(prefix_ + ".dec" + std::to_string(j), in_conv, out, cfg.kernel,
                             2);
      dec_norm_.emplace_back(prefix_ + ".dec" + std::to_string(j) + ".norm", out);
    }
    if (cfg.recurrent) gru_ = GruLayer<T>(prefix_ + ".gru", ch(1), ch(cfg.depth));
    const long head_in = cfg.recurrent ? ch(cfg.depth) : ch(1);
    out_conv_ = Conv1d<T>(prefix_ + ".out", head_in, cfg.bins, cfg.kernel, 1, Pad::Same);
  }

  void init(uint64_t seed) {
    Rng rng(seed);
    for (auto& c : enc_conv_) c.init(rng);
    mid_conv_.init(rng);
    for (auto& c : dec_conv_) c.init(rng);
    if (cfg_.recurrent) gru_.init(rng);
    out_conv_.init(rng);
  }

  Tensor<T> forward(const Tensor<T>& x, Ctx* ctx) const {
    require(x.rank() == 3 && x.dim(1) == cfg_.bins, Err::ShapeMismatch,
            "generator: expected (B," + std::to_string(cfg_.bins) + ",T), got " +
                x.shape_str());
    require(x.dim(2) >= (1L << cfg_.depth), Err::InputTooShort,
            "generator: need T >= " + std::to_string(1L << cfg_.depth) + ", got " +
                std::to_string(x.dim(2)));
    Ctx local;
    Ctx& c = ctx ? *ctx : local;
    c.enc_conv.resize(enc_conv_.size());
    c.enc_norm.resize(enc_norm_.size());
    c.enc_act.resize(enc_conv_.size());
    c.dec_conv.resize(dec_conv_.size());
    c.dec_norm.resize(dec_norm_.size());
    c.dec_act.resize(dec_conv_.size());
    c.lengths.assign(static_cast<size_t>(cfg_.depth) + 1, 0);
    c.enc_acts.clear();
    c.pre_crop.assign(dec_conv_.size(), 0);

    Tensor<T> h = x;
    c.lengths[0] = h.dim(2);
    for (size_t i = 0; i < enc_conv_.size(); ++i) {
      h = enc_conv_[i].forward(h, ctx ? &c.enc_conv[i] : nullptr);
      h = enc_norm_[i].forward(h, ctx ? &c.enc_norm[i] : nullptr);
      h = lrelu_.forward(h, ctx ? &c.enc_act[i] : nullptr);
      c.lengths[i + 1] = h.dim(2);
      if (cfg_.skip) c.enc_acts.push_back(h);
    }
    h = mid_conv_.forward(h, ctx ? &c.mid_conv : nullptr);
    h = mid_norm_.forward(h, ctx ? &c.mid_norm : nullptr);
    h = lrelu_.forward(h, ctx ? &c.mid_act : nullptr);
    for (size_t j = 0; j < dec_conv_.size(); ++j) {
      if (cfg_.skip) h = concat_channels(c.enc_acts[c.enc_acts.size() - 1 - j], h);
      h = dec_conv_[j].forward(h, ctx ? &c.dec_conv[j] : nullptr);
      c.pre_crop[j] = h.dim(2);
      h = crop_time(h, c.lengths[static_cast<size_t>(cfg_.depth) - 1 - j]);
      h = dec_norm_[j].forward(h, ctx ? &c.dec_norm[j] : nullptr);
      h = relu_.forward(h, ctx ? &c.dec_act[j] : nullptr);
    }
    if (cfg_.recurrent) h = gru_.forward(h, ctx ? &c.gru : nullptr);
    h = out_conv_.forward(h, ctx ? &c.out_conv : nullptr);
    h = tanh_.forward(h, ctx ? &c.out_act : nullptr);
    return h;
  }

  // Accumulates parameter gradients and returns the input gradient.
  Tensor<T> backward(const Tensor<T>& gy, const Ctx& c) {
    Tensor<T> g = tanh_.backward(gy, c.out_act);
    g = out_conv_.backward(g, c.out_conv);
    if (cfg_.recurrent) g = gru_.backward(g, c.gru);
    std::vector<Tensor<T>> skip_grads(enc_conv_.size());
    for (size_t jr = 0; jr < dec_conv_.size(); ++jr) {
      const size_t j = dec_conv_.size() - 1 - jr;
      g = relu_.backward(g, c.dec_act[j]);
      g = dec_norm_[j].backward(g, c.dec_norm[j]);
      g = crop_time_grad(g, c.pre_crop[j]);
      g = dec_conv_[j].backward(g, c.dec_conv[j]);
      if (cfg_.skip) {
        Tensor<T> ge, gm;
        split_channels_grad(g, c.enc_acts[c.enc_acts.size() - 1 - j].dim(1), ge, gm);
        skip_grads[c.enc_acts.size() - 1 - j] = std::move(ge);
        g = std::move(gm);
      }
    }
    g = lrelu_.backward(g, c.mid_act);
    g = mid_norm_.backward(g, c.mid_norm);
    g = mid_conv_.backward(g, c.mid_conv);
    for (size_t ir = 0; ir < enc_conv_.size(); ++ir) {
      const size_t i = enc_conv_.size() - 1 - ir;
      if (cfg_.skip && skip_grads[i].size() > 0) {
        check_same_shape(g, skip_grads[i], "generator skip grad");
        for (size_t n = 0; n < g.size(); ++n) g[n] += skip_grads[i][n];
      }
      g = lrelu_.backward(g, c.enc_act[i]);
      g = enc_norm_[i].backward(g, c.enc_norm[i]);
      g = enc_conv_[i].backward(g, c.enc_conv[i]);
    }
    return g;
  }

  std::vector<Parameter<T>*> params() {
    std::vector<Parameter<T>*> out;
    for (auto& l : enc_conv_) append(out, l.params());
    for (auto& l : enc_norm_) append(out, l.params());
    append(out, mid_conv_.params());
    append(out, mid_norm_.params());
    for (auto& l : dec_conv_) append(out, l.params());
    for (auto& l : dec_norm_) append(out, l.params());
    if (cfg_.recurrent) append(out, gru_.params());
    append(out, out_conv_.params());
    return out;
  }

  void zero_grad() {
    for (Parameter<T>* p : params()) p->zero_grad();
  }

  std::vector<std::string> layer_shapes() const {
    std::vector<std::string> out;
    for (const auto& l : enc_conv_)
      out.push_back("conv " + dims(l.in_channels(), l.out_channels(), l.kernel()) + " s" +
                    std::to_string(l.stride()) + " +norm +lrelu");
    out.push_back("conv " + dims(mid_conv_.in_channels(), mid_conv_.out_channels(),
                                 mid_conv_.kernel()) +
                  " s1 +norm +lrelu");
    for (const auto& l : dec_conv_)
      out.push_back(std::string(cfg_.skip ? "skip-concat " : "") + "tconv " +
                    dims(l.in_channels(), l.out_channels(), l.kernel()) + " s" +
                    std::to_string(l.stride()) + " +norm +relu");
    if (cfg_.recurrent)
      out.push_back("gru " + std::to_string(gru_.in_channels()) + "->" +
                    std::to_string(gru_.hidden()));
    out.push_back("conv " + dims(out_conv_.in_channels(), out_conv_.out_channels(),
                                 out_conv_.kernel()) +
                  " s1 +tanh");
    return out;
  }

  const Config& config() const { return cfg_; }
  const std::string& prefix() const { return prefix_; }

 private:
  long ch(long level) const { return level == 0 ? cfg_.bins : cfg_.base << (level - 1); }

  static void append(std::vector<Parameter<T>*>& dst, std::vector<Parameter<T>*> src) {
    dst.insert(dst.end(), src.begin(), src.end());
  }

  static std::string dims(long cin, long cout, long k) {
    return std::to_string(cin) + "->" + std::to_string(cout) + " k" + std::to_string(k);
  }

  std::string prefix_;
  Config cfg_;
  std::vector<Conv1d<T>> enc_conv_;
  std::vector<InstanceNorm<T>> enc_norm_;
  Conv1d<T> mid_conv_;
  InstanceNorm<T> mid_norm_;
  std::vector<ConvTranspose1d<T>> dec_conv_;
  std::vector<InstanceNorm<T>> dec_norm_;
  GruLayer<T> gru_;
  Conv1d<T> out_conv_;
  LeakyRelu<T> lrelu_{0.2};
  LeakyRelu<T> relu_{0.0};
  TanhAct<T> tanh_;
};

// ---------------------------------------------------------------------------
// Discriminator. Auto-encoder mode reuses the generator architecture (own
// parameters) and returns a reconstruction of the input; patch mode is a
// stride-2 conv stack emitting raw per-time scores (B, 1, ceil(T/2^depth)).
// ---------------------------------------------------------------------------
template <typename T>
class Discriminator {
 public:
  enum class Kind { AutoEncoder, Patch };

  struct Ctx {
    typename Generator<T>::Ctx core;
    std::vector<typename Conv1d<T>::Ctx> conv;
    std::vector<typename InstanceNorm<T>::Ctx> norm;
    std::vector<typename LeakyRelu<T>::Ctx> act;
    typename Conv1d<T>::Ctx head;
  };

  Discriminator() = default;

  Discriminator(std::string prefix, typename Generator<T>::Config cfg, Kind kind)
      : prefix_(std::move(prefix)), kind_(kind) {
    if (kind_ == Kind::AutoEncoder) {
      core_ = Generator<T>(prefix_, cfg);
      return;
    }
    long c = cfg.base;
    long in = cfg.bins;
    for (long i = 0; i < cfg.depth; ++i) {
      conv_.emplace_back(prefix_ + ".lvl" + std::to_string(i), in, c, cfg.kernel, 2,
                         Pad::Same);
      if (i > 0) norm_.emplace_back(prefix_ + ".lvl" + std::to_string(i) + ".norm", c);
      in = c;
      c *= 2;
    }
    head_ = Conv1d<T>(prefix_ + ".head", in, 1, cfg.kernel, 1, Pad::Same);
    depth_ = cfg.depth;
  }

  void init(uint64_t seed) {
    if (kind_ == Kind::AutoEncoder) {
      core_.init(seed);
      return;
    }
    Rng rng(seed);
    for (auto& l : conv_) l.init(rng);
    head_.init(rng);
  }

  Tensor<T> forward(const Tensor<T>& x, Ctx* ctx) const {
    if (kind_ == Kind::AutoEncoder) return core_.forward(x, ctx ? &ctx->core : nullptr);
    require(x.dim(2) >= (1L << depth_), Err::InputTooShort,
            "discriminator: need T >= " + std::to_string(1L << depth_));
    if (ctx) {
      ctx->conv.resize(conv_.size());
      ctx->norm.resize(norm_.size());
      ctx->act.resize(conv_.size());
    }
    Tensor<T> h = x;
    for (size_t i = 0; i < conv_.size(); ++i) {
      h = conv_[i].forward(h, ctx ? &ctx->conv[i] : nullptr);
      if (i > 0) h = norm_[i - 1].forward(h, ctx ? &ctx->norm[i - 1] : nullptr);
      h = lrelu_.forward(h, ctx ? &ctx->act[i] : nullptr);
    }
    return head_.forward(h, ctx ? &ctx->head : nullptr);
  }

  Tensor<T> backward(const Tensor<T>& gy, const Ctx& ctx) {
    if (kind_ == Kind::AutoEncoder) return core_.backward(gy, ctx.core);
    Tensor<T> g = head_.backward(gy, ctx.head);
    for (size_t ir = 0; ir < conv_.size(); ++ir) {
      const size_t i = conv_.size() - 1 - ir;
      g = lrelu_.backward(g, ctx.act[i]);
      if (i > 0) g = norm_[i - 1].backward(g, ctx.norm[i - 1]);
      g = conv_[i].backward(g, ctx.conv[i]);
    }
    return g;
  }

  std::vector<Parameter<T>*> params() {
    if (kind_ == Kind::AutoEncoder) return core_.params();
    std::vector<Parameter<T>*> out;
    for (auto& l : conv_) {
      auto p = l.params();
      out.insert(out.end(), p.begin(), p.end());
    }
    for (auto& l : norm_) {
      auto p = l.params();
      out.insert(out.end(), p.begin(), p.end());
    }
    auto p = head_.params();
    out.insert(out.end(), p.begin(), p.end());
    return out;
  }

  void zero_grad() {
    for (Parameter<T>* p : params()) p->zero_grad();
  }

  std::vector<std::string> layer_shapes() const {
    if (kind_ == Kind::AutoEncoder) return core_.layer_shapes();
    std::vector<std::string> out;
    for (size_t i = 0; i < conv_.size(); ++i)
      out.push_back("conv " + std::to_string(conv_[i].in_channels()) + "->" +
                    std::to_string(conv_[i].out_channels()) + " k" +
                    std::to_string(conv_[i].kernel()) + " s2" +
                    (i > 0 ? " +norm +lrelu" : " +lrelu"));
    out.push_back("conv " + std::to_string(head_.in_channels()) + "->1 k" +
                  std::to_string(head_.kernel()) + " s1 (scores)");
    return out;
  }

  Kind kind() const { return kind_; }

 private:
  std::string prefix_;
  Kind kind_ = Kind::Patch;
  Generator<T> core_;
  std::vector<Conv1d<T>> conv_;
  std::vector<InstanceNorm<T>> norm_;
  Conv1d<T> head_;
  LeakyRelu<T> lrelu_{0.2};
  long depth_ = 0;
};

template <typename T>
typename Generator<T>::Config generator_config(const VariantSpec& spec,
                                               long bins = kFeatureBins, long kernel = 5) {
  typename Generator<T>::Config cfg;
  cfg.bins = bins;
  cfg.base = spec.base_channels;
  cfg.depth = spec.depth;
  cfg.kernel = kernel;
  cfg.skip = spec.skip;
  cfg.recurrent = spec.recurrent;
  return cfg;
}

template <typename T>
Generator<T> build_generator(const VariantSpec& spec, uint64_t seed,
                             const std::string& prefix = "g") {
  Generator<T> gen(prefix, generator_config<T>(spec));
  gen.init(seed);
  return gen;
}

template <typename T>
Discriminator<T> build_discriminator(const VariantSpec& spec, uint64_t seed,
                                     const std::string& prefix = "d") {
  const auto kind =
      spec.began ? Discriminator<T>::Kind::AutoEncoder : Discriminator<T>::Kind::Patch;
  Discriminator<T> disc(prefix, generator_config<T>(spec), kind);
  disc.init(seed);
  return disc;
}

// One-line-per-layer architecture description used by tests and the trainer.
std::string variant_summary(const VariantSpec& spec);

}  // namespace cyclesing
