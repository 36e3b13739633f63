#include "cyclesing/training.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace cyclesing {

namespace {

Tensor<float> scaled(const Tensor<float>& t, double s) {
  Tensor<float> out = t;
  for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(out[i] * s);
  return out;
}

void add_into(Tensor<float>& dst, const Tensor<float>& src) {
  check_same_shape(dst, src, "gradient accumulation");
  for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void sub_into(Tensor<float>& dst, const Tensor<float>& src) {
  check_same_shape(dst, src, "gradient accumulation");
  for (size_t i = 0; i < dst.size(); ++i) dst[i] -= src[i];
}

}  // namespace

TrainState init_train_state(const TrainConfig& cfg) {
  TrainState st;
  st.cfg = cfg;
  const auto gcfg = generator_config<float>(cfg.spec, cfg.bins, cfg.kernel);
  const auto dkind = cfg.spec.began ? Discriminator<float>::Kind::AutoEncoder
                                    : Discriminator<float>::Kind::Patch;
  st.g_ab = Generator<float>("g_ab", gcfg);
  st.g_ba = Generator<float>("g_ba", gcfg);
  st.d_a = Discriminator<float>("d_a", gcfg, dkind);
  st.d_b = Discriminator<float>("d_b", gcfg, dkind);
  st.g_ab.init(derive_seed(cfg.seed, "g_ab"));
  st.g_ba.init(derive_seed(cfg.seed, "g_ba"));
  st.d_a.init(derive_seed(cfg.seed, "d_a"));
  st.d_b.init(derive_seed(cfg.seed, "d_b"));
  auto setup = [&cfg](AdamState<float>& opt, std::vector<Parameter<float>*> params) {
    opt.lr = cfg.lr;
    opt.beta1 = cfg.beta1;
    opt.beta2 = cfg.beta2;
    opt.eps = cfg.eps;
    adam_init(opt, params);
  };
  setup(st.opt_g_ab, st.g_ab.params());
  setup(st.opt_g_ba, st.g_ba.params());
  setup(st.opt_d_a, st.d_a.params());
  setup(st.opt_d_b, st.d_b.params());
  st.rng_a = Rng(derive_seed(cfg.seed, "batch_a"));
  st.rng_b = Rng(derive_seed(cfg.seed, "batch_b"));
  return st;
}

LossReport train_step(TrainState& st, const Tensor<float>& batch_a,
                      const Tensor<float>& batch_b) {
  check_same_shape(batch_a, batch_b, "train_step batches");
  require(batch_a.rank() == 3 && batch_a.dim(1) == st.cfg.bins, Err::ShapeMismatch,
          "train_step: expected (B," + std::to_string(st.cfg.bins) + ",T), got " +
              batch_a.shape_str());
  const bool began = st.cfg.spec.began;
  const double lambda = st.cfg.lambda_cyc;
  LossReport rep;

  // --- generator update -----------------------------------------------------
  st.g_ab.zero_grad();
  st.g_ba.zero_grad();

  Generator<float>::Ctx ctx_gab_fwd, ctx_gba_fwd, ctx_gab_cyc, ctx_gba_cyc;
  Discriminator<float>::Ctx ctx_da_fake, ctx_db_fake;

  Tensor<float> fake_b = st.g_ab.forward(batch_a, &ctx_gab_fwd);
  Tensor<float> fake_a = st.g_ba.forward(batch_b, &ctx_gba_fwd);
  Tensor<float> rec_a = st.g_ba.forward(fake_b, &ctx_gba_cyc);
  Tensor<float> rec_b = st.g_ab.forward(fake_a, &ctx_gab_cyc);

  ScalarLoss<float> cyc_a = l1_mean(rec_a, batch_a);
  ScalarLoss<float> cyc_b = l1_mean(rec_b, batch_b);
  rep.cyc_a = cyc_a.value;
  rep.cyc_b = cyc_b.value;

  Tensor<float> d_fake_b = st.d_b.forward(fake_b, &ctx_db_fake);
  Tensor<float> d_fake_a = st.d_a.forward(fake_a, &ctx_da_fake);

  // Adversarial gradient w.r.t. each fake. The discriminator backward also
  // leaks gradients into discriminator parameters; those are zeroed before
  // the discriminator update below.
  Tensor<float> gfake_b_adv, gfake_a_adv;
  ScalarLoss<float> rec_fake_b, rec_fake_a;  // auto-encoder reconstruction errs
  ScalarLoss<float> sc_fake_b, sc_fake_a;    // patch score losses
  if (began) {
    rec_fake_b = l1_mean(d_fake_b, fake_b);
    rec_fake_a = l1_mean(d_fake_a, fake_a);
    rep.adv_g_ab = rec_fake_b.value;
    rep.adv_g_ba = rec_fake_a.value;
    gfake_b_adv = st.d_b.backward(rec_fake_b.grad, ctx_db_fake);
    sub_into(gfake_b_adv, rec_fake_b.grad);  // d|pred-target|/dtarget term
    gfake_a_adv = st.d_a.backward(rec_fake_a.grad, ctx_da_fake);
    sub_into(gfake_a_adv, rec_fake_a.grad);
  } else {
    sc_fake_b = mse_to_constant(d_fake_b, 1.0);
    sc_fake_a = mse_to_constant(d_fake_a, 1.0);
    rep.adv_g_ab = sc_fake_b.value;
    rep.adv_g_ba = sc_fake_a.value;
    gfake_b_adv = st.d_b.backward(sc_fake_b.grad, ctx_db_fake);
    gfake_a_adv = st.d_a.backward(sc_fake_a.grad, ctx_da_fake);
  }

  // Cycle terms flow through both generators.
  Tensor<float> gfake_b = st.g_ba.backward(scaled(cyc_a.grad, lambda), ctx_gba_cyc);
  Tensor<float> gfake_a = st.g_ab.backward(scaled(cyc_b.grad, lambda), ctx_gab_cyc);
  add_into(gfake_b, gfake_b_adv);
  add_into(gfake_a, gfake_a_adv);
  st.g_ab.backward(gfake_b, ctx_gab_fwd);
  st.g_ba.backward(gfake_a, ctx_gba_fwd);

  auto g_ab_params = st.g_ab.params();
  auto g_ba_params = st.g_ba.params();
  adam_step(g_ab_params, st.opt_g_ab);
  adam_step(g_ba_params, st.opt_g_ba);

  // --- discriminator update (same detached fakes; D params are unchanged
  // since the fake forwards above, so their contexts are reusable) ----------
  st.d_a.zero_grad();
  st.d_b.zero_grad();

  Discriminator<float>::Ctx ctx_da_real, ctx_db_real;
  Tensor<float> d_real_a = st.d_a.forward(batch_a, &ctx_da_real);
  Tensor<float> d_real_b = st.d_b.forward(batch_b, &ctx_db_real);

  double l_real_a = 0, l_fake_a = 0, l_real_b = 0, l_fake_b = 0;
  if (began) {
    ScalarLoss<float> rec_real_a = l1_mean(d_real_a, batch_a);
    ScalarLoss<float> rec_real_b = l1_mean(d_real_b, batch_b);
    l_real_a = rec_real_a.value;
    l_real_b = rec_real_b.value;
    l_fake_a = rec_fake_a.value;
    l_fake_b = rec_fake_b.value;
    rep.d_a = began_losses(l_real_a, l_fake_a, st.k_a).d_loss;
    rep.d_b = began_losses(l_real_b, l_fake_b, st.k_b).d_loss;
    st.d_a.backward(rec_real_a.grad, ctx_da_real);
    st.d_a.backward(scaled(rec_fake_a.grad, -st.k_a), ctx_da_fake);
    st.d_b.backward(rec_real_b.grad, ctx_db_real);
    st.d_b.backward(scaled(rec_fake_b.grad, -st.k_b), ctx_db_fake);
  } else {
    ScalarLoss<float> sc_real_a = mse_to_constant(d_real_a, 1.0);
    ScalarLoss<float> sc_real_b = mse_to_constant(d_real_b, 1.0);
    ScalarLoss<float> sc_fake_a0 = mse_to_constant(d_fake_a, 0.0);
    ScalarLoss<float> sc_fake_b0 = mse_to_constant(d_fake_b, 0.0);
    rep.d_a = sc_real_a.value + sc_fake_a0.value;
    rep.d_b = sc_real_b.value + sc_fake_b0.value;
    st.d_a.backward(sc_real_a.grad, ctx_da_real);
    st.d_a.backward(sc_fake_a0.grad, ctx_da_fake);
    st.d_b.backward(sc_real_b.grad, ctx_db_real);
    st.d_b.backward(sc_fake_b0.grad, ctx_db_fake);
  }

  auto d_a_params = st.d_a.params();
  auto d_b_params = st.d_b.params();
  adam_step(d_a_params, st.opt_d_a);
  adam_step(d_b_params, st.opt_d_b);

  if (began) {
    Equilibrium eq_a = update_equilibrium(st.k_a, l_real_a, l_fake_a, st.cfg.gamma,
                                          st.cfg.lambda_k);
    Equilibrium eq_b = update_equilibrium(st.k_b, l_real_b, l_fake_b, st.cfg.gamma,
                                          st.cfg.lambda_k);
    st.k_a = eq_a.k_next;
    st.k_b = eq_b.k_next;
    rep.convergence_m_a = eq_a.convergence;
    rep.convergence_m_b = eq_b.convergence;
  }

  st.step += 1;

  const double checks[] = {rep.adv_g_ab, rep.adv_g_ba, rep.cyc_a,
                           rep.cyc_b,    rep.d_a,      rep.d_b,
                           rep.convergence_m_a, rep.convergence_m_b};
  for (double v : checks) {
    if (!std::isfinite(v)) {
      std::ostringstream msg;
      msg << "non-finite loss at step " << st.step << ": adv_ab=" << rep.adv_g_ab
          << " adv_ba=" << rep.adv_g_ba << " cyc_a=" << rep.cyc_a << " cyc_b=" << rep.cyc_b
          << " d_a=" << rep.d_a << " d_b=" << rep.d_b;
      fail(Err::NonFiniteLoss, msg.str());
    }
  }
  return rep;
}

// --- checkpoint format ------------------------------------------------------
// magic "CSCK" | u32 version | header | u32 blob count | blobs | u64 fnv1a.
// Blob: u32 name length | name | u32 rank | u32 dims... | f32 data (LE).

namespace {

constexpr char kMagic[4] = {'C', 'S', 'C', 'K'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

void put_u64(std::string& out, uint64_t v) {
  char b[8];
  std::memcpy(b, &v, 8);
  out.append(b, 8);
}

void put_f64(std::string& out, double v) {
  char b[8];
  std::memcpy(b, &v, 8);
  out.append(b, 8);
}

void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<uint32_t>(s.size()));
  out.append(s);
}

void put_blob(std::string& out, const std::string& name, const Tensor<float>& t) {
  put_str(out, name);
  put_u32(out, static_cast<uint32_t>(t.rank()));
  for (size_t d = 0; d < t.rank(); ++d) put_u32(out, static_cast<uint32_t>(t.dim(d)));
  out.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(float));
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;

  void need(size_t n) const {
    require(pos + n <= buf.size(), Err::CorruptChecksum, "checkpoint truncated");
  }
  uint32_t u32() {
    need(4);
    uint32_t v;
    std::memcpy(&v, buf.data() + pos, 4);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v;
    std::memcpy(&v, buf.data() + pos, 8);
    pos += 8;
    return v;
  }
  double f64() {
    need(8);
    double v;
    std::memcpy(&v, buf.data() + pos, 8);
    pos += 8;
    return v;
  }
  std::string str() {
    const uint32_t n = u32();
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
  Tensor<float> blob(std::string& name) {
    name = str();
    const uint32_t rank = u32();
    require(rank >= 1 && rank <= 3, Err::CorruptChecksum, "checkpoint: bad tensor rank");
    std::vector<long> dims;
    for (uint32_t d = 0; d < rank; ++d) dims.push_back(static_cast<long>(u32()));
    Tensor<float> t(dims);
    need(t.size() * sizeof(float));
    std::memcpy(t.data(), buf.data() + pos, t.size() * sizeof(float));
    pos += t.size() * sizeof(float);
    return t;
  }
};

struct NamedOpt {
  const char* tag;
  AdamState<float>* opt;
  std::vector<Parameter<float>*> params;
};

std::vector<NamedOpt> optimizer_table(TrainState& st) {
  return {{"g_ab", &st.opt_g_ab, st.g_ab.params()},
          {"g_ba", &st.opt_g_ba, st.g_ba.params()},
          {"d_a", &st.opt_d_a, st.d_a.params()},
          {"d_b", &st.opt_d_b, st.d_b.params()}};
}

}  // namespace

void save_checkpoint(TrainState& st, const std::string& path) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_str(out, st.cfg.spec.name);
  put_u32(out, static_cast<uint32_t>(st.cfg.spec.began));
  put_u32(out, static_cast<uint32_t>(st.cfg.spec.skip));
  put_u32(out, static_cast<uint32_t>(st.cfg.spec.recurrent));
  put_u32(out, static_cast<uint32_t>(st.cfg.spec.base_channels));
  put_u32(out, static_cast<uint32_t>(st.cfg.spec.depth));
  put_u32(out, static_cast<uint32_t>(st.cfg.bins));
  put_u32(out, static_cast<uint32_t>(st.cfg.kernel));
  put_u32(out, static_cast<uint32_t>(st.cfg.window));
  put_u32(out, static_cast<uint32_t>(st.cfg.hop));
  put_f64(out, st.cfg.lr);
  put_f64(out, st.cfg.beta1);
  put_f64(out, st.cfg.beta2);
  put_f64(out, st.cfg.eps);
  put_f64(out, st.cfg.gamma);
  put_f64(out, st.cfg.lambda_k);
  put_f64(out, st.cfg.lambda_cyc);
  put_u64(out, st.cfg.seed);
  put_f64(out, st.k_a);
  put_f64(out, st.k_b);
  put_u64(out, static_cast<uint64_t>(st.step));
  put_f64(out, st.norm_stats.min);
  put_f64(out, st.norm_stats.max);
  put_str(out, st.rng_a.save_state());
  put_str(out, st.rng_b.save_state());

  auto opts = optimizer_table(st);
  uint32_t count = 0;
  for (auto& o : opts) count += static_cast<uint32_t>(o.params.size() * 3);
  put_u32(out, count);
  for (auto& o : opts) {
    put_u64(out, static_cast<uint64_t>(o.opt->step));
    for (size_t i = 0; i < o.params.size(); ++i) {
      put_blob(out, o.params[i]->name, o.params[i]->value);
      put_blob(out, std::string("adam.") + o.tag + ".m." + o.params[i]->name,
               o.opt->m[i]);
      put_blob(out, std::string("adam.") + o.tag + ".v." + o.params[i]->name,
               o.opt->v[i]);
    }
  }

  put_u64(out, fnv1a(out.data(), out.size()));
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), Err::IoError, "cannot open checkpoint for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  f.flush();
  require(f.good(), Err::IoError, "short write to checkpoint: " + path);
}

TrainState load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), Err::IoError, "cannot open checkpoint: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  const std::string buf = ss.str();
  require(buf.size() >= 16, Err::CorruptChecksum, "checkpoint too small: " + path);

  uint64_t stored;
  std::memcpy(&stored, buf.data() + buf.size() - 8, 8);
  require(fnv1a(buf.data(), buf.size() - 8) == stored, Err::CorruptChecksum,
          "checkpoint checksum mismatch: " + path);

  Reader r{buf};
  r.need(4);
  require(std::memcmp(buf.data(), kMagic, 4) == 0, Err::IoError,
          "not a checkpoint file: " + path);
  r.pos = 4;
  const uint32_t version = r.u32();
  require(version == kVersion, Err::VersionMismatch,
          "checkpoint format v" + std::to_string(version) + ", this build reads v" +
              std::to_string(kVersion));

  TrainConfig cfg;
  cfg.spec.name = r.str();
  cfg.spec.began = r.u32() != 0;
  cfg.spec.skip = r.u32() != 0;
  cfg.spec.recurrent = r.u32() != 0;
  cfg.spec.base_channels = static_cast<long>(r.u32());
  cfg.spec.depth = static_cast<long>(r.u32());
  cfg.bins = static_cast<long>(r.u32());
  cfg.kernel = static_cast<long>(r.u32());
  cfg.window = static_cast<long>(r.u32());
  cfg.hop = static_cast<long>(r.u32());
  cfg.lr = r.f64();
  cfg.beta1 = r.f64();
  cfg.beta2 = r.f64();
  cfg.eps = r.f64();
  cfg.gamma = r.f64();
  cfg.lambda_k = r.f64();
  cfg.lambda_cyc = r.f64();
  cfg.seed = r.u64();

  TrainState st = init_train_state(cfg);
  st.k_a = r.f64();
  st.k_b = r.f64();
  st.step = static_cast<long>(r.u64());
  st.norm_stats.min = r.f64();
  st.norm_stats.max = r.f64();
  st.rng_a.restore_state(r.str());
  st.rng_b.restore_state(r.str());

  const uint32_t count = r.u32();
  auto opts = optimizer_table(st);
  uint32_t seen = 0;
  for (auto& o : opts) {
    o.opt->step = static_cast<long>(r.u64());
    for (size_t i = 0; i < o.params.size(); ++i) {
      for (int which = 0; which < 3; ++which) {
        std::string name;
        Tensor<float> t = r.blob(name);
        Tensor<float>* dst = nullptr;
        if (which == 0)
          dst = &o.params[i]->value;
        else if (which == 1)
          dst = &o.opt->m[i];
        else
          dst = &o.opt->v[i];
        const std::string expect =
            which == 0 ? o.params[i]->name
                       : std::string("adam.") + o.tag + (which == 1 ? ".m." : ".v.") +
                             o.params[i]->name;
        require(name == expect, Err::IoError,
                "checkpoint layout mismatch: expected blob '" + expect + "', found '" +
                    name + "'");
        check_same_shape(t, *dst, ("checkpoint blob " + name).c_str());
        *dst = std::move(t);
        ++seen;
      }
    }
  }
  require(seen == count, Err::IoError, "checkpoint blob count mismatch");
  return st;
}

void append_loss_log(const std::string& path, long step, const LossReport& r, double k_a,
                     double k_b) {
  std::ofstream f(path, std::ios::app);
  require(f.good(), Err::IoError, "cannot open loss log: " + path);
  auto line = [&f, step](const char* name, double v) {
    f << step << ',' << name << ',' << v << '\n';
  };
  line("adv_g_ab", r.adv_g_ab);
  line("adv_g_ba", r.adv_g_ba);
  line("cyc_a", r.cyc_a);
  line("cyc_b", r.cyc_b);
  line("d_a", r.d_a);
  line("d_b", r.d_b);
  line("m_a", r.convergence_m_a);
  line("m_b", r.convergence_m_b);
  line("k_a", k_a);
  line("k_b", k_b);
  require(f.good(), Err::IoError, "short write to loss log: " + path);
}

}  // namespace cyclesing
