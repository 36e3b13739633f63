#pragma once

#include <Eigen/Core>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "cyclesing/rng.hpp"
#include "cyclesing/tensor.hpp"

namespace cyclesing {

enum class Pad { Same, Valid };

template <typename T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using MatXR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
inline void ensure_finite(const Tensor<T>& x, const char* what) {
  if (!x.all_finite()) fail(Err::NonFiniteLoss, std::string(what) + " produced NaN/Inf");
}

// He-uniform in [-sqrt(6/fan_in), +sqrt(6/fan_in)].
template <typename T>
void he_uniform_init(Tensor<T>& w, long fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (size_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
void scaled_uniform_init(Tensor<T>& w, long fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (size_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(rng.uniform(-bound, bound));
}

// ---------------------------------------------------------------------------
// 1D convolution, cross-correlation semantics, zero same-padding.
// Input (B, Cin, T) -> output (B, Cout, T') with T' = ceil(T/stride) for
// same-padding and floor((T-K)/stride)+1 for valid.
// ---------------------------------------------------------------------------
template <typename T>
class Conv1d {
 public:
  Parameter<T> weight;  // (Cout, Cin, K)
  Parameter<T> bias;    // (Cout)

  struct Ctx {
    Tensor<T> input;
  };

  Conv1d() = default;
  Conv1d(std::string name, long cin, long cout, long kernel, long stride, Pad pad)
      : weight(name + ".weight", {cout, cin, kernel}),
        bias(name + ".bias", {cout}),
        cin_(cin),
        cout_(cout),
        kernel_(kernel),
        stride_(stride),
        pad_(pad) {
    require(stride >= 1, Err::BadConfig, "conv1d: stride must be >= 1");
    require(kernel >= 1, Err::BadConfig, "conv1d: kernel must be >= 1");
    if (pad == Pad::Same)
      require(kernel % 2 == 1, Err::BadConfig, "conv1d: same-padding needs odd kernel");
  }

  void init(Rng& rng) {
    he_uniform_init(weight.value, cin_ * kernel_, rng);
    bias.value.zero();
  }

  long out_length(long t) const {
    if (pad_ == Pad::Same) return (t + stride_ - 1) / stride_;
    require(t >= kernel_, Err::ShapeMismatch, "conv1d: input shorter than kernel");
    return (t - kernel_) / stride_ + 1;
  }

  long pad_left(long t) const {
    if (pad_ == Pad::Valid) return 0;
    const long t_out = (t + stride_ - 1) / stride_;
    const long total = std::max<long>(0, (t_out - 1) * stride_ + kernel_ - t);
    return total / 2;
  }

  Tensor<T> forward(const Tensor<T>& x, Ctx* ctx) const {
    require(x.rank() == 3 && x.dim(1) == cin_, Err::ShapeMismatch,
            "conv1d: expected (B," + std::to_string(cin_) + ",T), got " + x.shape_str());
    const long batch = x.dim(0), t_in = x.dim(2);
    const long t_out = out_length(t_in);
    const long pl = pad_left(t_in);

    Tensor<T> y(batch, cout_, t_out);
    MatXR<T> patches(cin_ * kernel_, t_out);
    Eigen::Map<const MatXR<T>> w_mat(weight.value.data(), cout_, cin_ * kernel_);
    Eigen::Map<const MatX<T>> b_vec(bias.value.data(), cout_, 1);
    for (long b = 0; b < batch; ++b) {
      im2col(x, b, pl, t_out, patches);
      Eigen::Map<MatXR<T>> y_mat(y.data() + b * cout_ * t_out, cout_, t_out);
      y_mat.noalias() = w_mat * patches;
      y_mat.colwise() += b_vec.col(0);
    }
    ensure_finite(y, "conv1d");
    if (ctx) ctx->input = x;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy, const Ctx& ctx) {
    const Tensor<T>& x = ctx.input;
    const long batch = x.dim(0), t_in = x.dim(2);
    const long t_out = out_length(t_in);
    const long pl = pad_left(t_in);
    require(gy.rank() == 3 && gy.dim(0) == batch && gy.dim(1) == cout_ && gy.dim(2) == t_out,
            Err::ShapeMismatch, "conv1d backward: bad grad shape " + gy.shape_str());

    Tensor<T> gx(batch, cin_, t_in);
    MatXR<T> patches(cin_ * kernel_, t_out);
    MatXR<T> gpatches(cin_ * kernel_, t_out);
    Eigen::Map<const MatXR<T>> w_mat(weight.value.data(), cout_, cin_ * kernel_);
    Eigen::Map<MatXR<T>> gw_mat(weight.grad.data(), cout_, cin_ * kernel_);
    for (long b = 0; b < batch; ++b) {
      im2col(x, b, pl, t_out, patches);
      Eigen::Map<const MatXR<T>> gy_mat(gy.data() + b * cout_ * t_out, cout_, t_out);
      gw_mat.noalias() += gy_mat * patches.transpose();
      // fixed-order scalar sum: Eigen's reduction over an unaligned map peels
      // to the buffer address, which would make the rounding allocation-dependent
      for (long co = 0; co < cout_; ++co) {
        const T* gy_row = gy.data() + (b * cout_ + co) * t_out;
        T acc = 0;
        for (long t = 0; t < t_out; ++t) acc += gy_row[t];
        bias.grad.at(co) += acc;
      }
      gpatches.noalias() = w_mat.transpose() * gy_mat;
      // col2im scatter
      for (long ci = 0; ci < cin_; ++ci) {
        T* gx_row = gx.data() + (b * cin_ + ci) * t_in;
        for (long k = 0; k < kernel_; ++k) {
          const T* gp_row = gpatches.data() + (ci * kernel_ + k) * t_out;
          const long shift = k - pl;
          for (long t = 0; t < t_out; ++t) {
            const long src = t * stride_ + shift;
            if (src >= 0 && src < t_in) gx_row[src] += gp_row[t];
          }
        }
      }
    }
    return gx;
  }

  std::vector<Parameter<T>*> params() { return {&weight, &bias}; }

  long in_channels() const { return cin_; }
  long out_channels() const { return cout_; }
  long kernel() const { return kernel_; }
  long stride() const { return stride_; }

 private:
  void im2col(const Tensor<T>& x, long b, long pl, long t_out, MatXR<T>& patches) const {
    const long t_in = x.dim(2);
    for (long ci = 0; ci < cin_; ++ci) {
      const T* x_row = x.data() + (b * cin_ + ci) * t_in;
      for (long k = 0; k < kernel_; ++k) {
        T* p_row = patches.data() + (ci * kernel_ + k) * t_out;
        const long shift = k - pl;
        for (long t = 0; t < t_out; ++t) {
          const long src = t * stride_ + shift;
          p_row[t] = (src >= 0 && src < t_in) ? x_row[src] : T(0);
        }
      }
    }
  }

  long cin_ = 0, cout_ = 0, kernel_ = 1, stride_ = 1;
  Pad pad_ = Pad::Same;
};

// ---------------------------------------------------------------------------
// Transposed 1D convolution. Output length is exactly T*stride: the full
// transposed output (T-1)*stride + K is cropped symmetrically, which keeps
// encoder/decoder lengths aligned without per-model bookkeeping.
// ---------------------------------------------------------------------------
template <typename T>
class ConvTranspose1d {
 public:
  Parameter<T> weight;  // (Cin, Cout, K)
  Parameter<T> bias;    // (Cout)

  struct Ctx {
    Tensor<T> input;
  };

  ConvTranspose1d() = default;
  ConvTranspose1d(std::string name, long cin, long cout, long kernel, long stride)
      : weight(name + ".weight", {cin, cout, kernel}),
        bias(name + ".bias", {cout}),
        cin_(cin),
        cout_(cout),
        kernel_(kernel),
        stride_(stride) {
    require(stride >= 1, Err::BadConfig, "conv1d_transpose: stride must be >= 1");
    require(kernel >= 1, Err::BadConfig, "conv1d_transpose: kernel must be >= 1");
  }

  void init(Rng& rng) {
    he_uniform_init(weight.value, cin_ * kernel_, rng);
    bias.value.zero();
  }

  long offset() const { return kernel_ >= stride_ ? (kernel_ - stride_) / 2 : 0; }

  Tensor<T> forward(const Tensor<T>& x, Ctx* ctx) const {
    require(x.rank() == 3 && x.dim(1) == cin_, Err::ShapeMismatch,
            "conv1d_transpose: expected (B," + std::to_string(cin_) + ",T), got " +
                x.shape_str());
    const long batch = x.dim(0), t_in = x.dim(2);
    const long t_out = t_in * stride_;
    const long off = offset();

    Tensor<T> y(batch, cout_, t_out);
    MatXR<T> contrib(cout_ * kernel_, t_in);
    Eigen::Map<const MatXR<T>> w_mat(weight.value.data(), cin_, cout_ * kernel_);
    for (long b = 0; b < batch; ++b) {
      Eigen::Map<const MatXR<T>> x_mat(x.data() + b * cin_ * t_in, cin_, t_in);
      contrib.noalias() = w_mat.transpose() * x_mat;
      for (long co = 0; co < cout_; ++co) {
        T* y_row = y.data() + (b * cout_ + co) * t_out;
        const T bv = bias.value.at(co);
        for (long t = 0; t < t_out; ++t) y_row[t] = bv;
        for (long k = 0; k < kernel_; ++k) {
          const T* c_row = contrib.data() + (co * kernel_ + k) * t_in;
          const long shift = k - off;
          for (long t = 0; t < t_in; ++t) {
            const long dst = t * stride_ + shift;
            if (dst >= 0 && dst < t_out) y_row[dst] += c_row[t];
          }
        }
      }
    }
    ensure_finite(y, "conv1d_transpose");
    if (ctx) ctx->input = x;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy, const Ctx& ctx) {
    const Tensor<T>& x = ctx.input;
    const long batch = x.dim(0), t_in = x.dim(2);
    const long t_out = t_in * stride_;
    const long off = offset();
    require(gy.rank() == 3 && gy.dim(0) == batch && gy.dim(1) == cout_ && gy.dim(2) == t_out,
            Err::ShapeMismatch, "conv1d_transpose backward: bad grad shape " + gy.shape_str());

    Tensor<T> gx(batch, cin_, t_in);
    MatXR<T> gcontrib(cout_ * kernel_, t_in);
    Eigen::Map<const MatXR<T>> w_mat(weight.value.data(), cin_, cout_ * kernel_);
    Eigen::Map<MatXR<T>> gw_mat(weight.grad.data(), cin_, cout_ * kernel_);
    for (long b = 0; b < batch; ++b) {
      for (long co = 0; co < cout_; ++co) {
        const T* gy_row = gy.data() + (b * cout_ + co) * t_out;
        T acc = 0;
        for (long t = 0; t < t_out; ++t) acc += gy_row[t];
        bias.grad.at(co) += acc;
        for (long k = 0; k < kernel_; ++k) {
          T* gc_row = gcontrib.data() + (co * kernel_ + k) * t_in;
          const long shift = k - off;
          for (long t = 0; t < t_in; ++t) {
            const long dst = t * stride_ + shift;
            gc_row[t] = (dst >= 0 && dst < t_out) ? gy_row[dst] : T(0);
          }
        }
      }
      Eigen::Map<const MatXR<T>> x_mat(x.data() + b * cin_ * t_in, cin_, t_in);
      Eigen::Map<MatXR<T>> gx_mat(gx.data() + b * cin_ * t_in, cin_, t_in);
      gw_mat.noalias() += x_mat * gcontrib.transpose();
      gx_mat.noalias() = w_mat * gcontrib;
    }
    return gx;
  }

  std::vector<Parameter<T>*> params() { return {&weight, &bias}; }

  long in_channels() const { return cin_; }
  long out_channels() const { return cout_; }
  long kernel() const { return kernel_; }
  long stride() const { return stride_; }

 private:
  long cin_ = 0, cout_ = 0, kernel_ = 1, stride_ = 1;
};

// ---------------------------------------------------------------------------
// Per-(batch, channel) normalization over time with learned affine.
// ---------------------------------------------------------------------------
template <typename T>
class InstanceNorm {
 public:
  static constexpr double kEps = 1e-5;

  Parameter<T> gain;  // (C)
  Parameter<T> bias;  // (C)

  struct Ctx {
    Tensor<T> xhat;     // (B, C, T)
    Tensor<T> inv_std;  // (B, C)
  };

  InstanceNorm() = default;
  InstanceNorm(std::string name, long channels)
      : gain(name + ".gain", {channels}), bias(name + ".bias", {channels}), c_(channels) {
    gain.value.fill(T(1));
  }

  Tensor<T> forward(const Tensor<T>& x, Ctx* ctx) const {
    require(x.rank() == 3 && x.dim(1) == c_, Err::ShapeMismatch,
            "instance_norm: expected (B," + std::to_string(c_) + ",T), got " + x.shape_str());
    const long batch = x.dim(0), t_len = x.dim(2);
    Tensor<T> y(batch, c_, t_len);
    Tensor<T> xhat(batch, c_, t_len);
    Tensor<T> inv_std(batch, c_);
    for (long b = 0; b < batch; ++b) {
      for (long c = 0; c < c_; ++c) {
        const T* xr = x.data() + (b * c_ + c) * t_len;
        double mean = 0;
        for (long t = 0; t < t_len; ++t) mean += xr[t];
        mean /= static_cast<double>(t_len);
        double var = 0;
        for (long t = 0; t < t_len; ++t) {
          const double d = xr[t] - mean;
          var += d * d;
        }
        var /= static_cast<double>(t_len);
        const T is = static_cast<T>(1.0 / std::sqrt(var + kEps));
        inv_std.at(b, c) = is;
        T* xh = xhat.data() + (b * c_ + c) * t_len;
        T* yr = y.data() + (b * c_ + c) * t_len;
        const T g = gain.value.at(c), bv = bias.value.at(c);
        for (long t = 0; t < t_len; ++t) {
          xh[t] = static_cast<T>((xr[t] - mean) * is);
          yr[t] = g * xh[t] + bv;
        }
      }
    }
    ensure_finite(y, "instance_norm");
    if (ctx) {
      ctx->xhat = std::move(xhat);
      ctx->inv_std = std::move(inv_std);
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy, const Ctx& ctx) {
    const long batch = ctx.xhat.dim(0), t_len = ctx.xhat.dim(2);
    check_same_shape(gy, ctx.xhat, "instance_norm backward");
    Tensor<T> gx(batch, c_, t_len);
    for (long b = 0; b < batch; ++b) {
      for (long c = 0; c < c_; ++c) {
        const T* gyr = gy.data() + (b * c_ + c) * t_len;
        const T* xh = ctx.xhat.data() + (b * c_ + c) * t_len;
        double sum_gy = 0, sum_gy_xhat = 0;
        for (long t = 0; t < t_len; ++t) {
          sum_gy += gyr[t];
          sum_gy_xhat += static_cast<double>(gyr[t]) * xh[t];
        }
        gain.grad.at(c) += static_cast<T>(sum_gy_xhat);
        bias.grad.at(c) += static_cast<T>(sum_gy);
        const double mean_gy = sum_gy / static_cast<double>(t_len);
        const double mean_gy_xhat = sum_gy_xhat / static_cast<double>(t_len);
        const double scale = static_cast<double>(gain.value.at(c)) * ctx.inv_std.at(b, c);
        T* gxr = gx.data() + (b * c_ + c) * t_len;
        for (long t = 0; t < t_len; ++t) {
          gxr[t] = static_cast<T>(scale * (gyr[t] - mean_gy - xh[t] * mean_gy_xhat));
        }
      }
    }
    return gx;
  }

  std::vector<Parameter<T>*> params() { return {&gain, &bias}; }

 private:
  long c_ = 0;
};

// ---------------------------------------------------------------------------
// GRU over (B, C, T), left to right, returning every hidden state (B, H, T).
// Gates: z = sig(Wz x + Uz h + bz), r = sig(Wr x + Ur h + br),
// cand = tanh(Wh x + Uh (r.h) + bh), h' = z.h + (1-z).cand.
// ---------------------------------------------------------------------------
template <typename T>
class GruLayer {
 public:
  Parameter<T> wz, wr, wh;  // (H, C)
  Parameter<T> uz, ur, uh;  // (H, H)
  Parameter<T> bz, br, bh;  // (H)

  struct Ctx {
    Tensor<T> input;                 // (B, C, T)
    MatX<T> h0;                      // (H, B)
    std::vector<MatX<T>> z, r, cand, rh, h;
  };

  GruLayer() = default;
  GruLayer(std::string name, long in_channels, long hidden)
      : wz(name + ".wz", {hidden, in_channels}),
        wr(name + ".wr", {hidden, in_channels}),
        wh(name + ".wh", {hidden, in_channels}),
        uz(name + ".uz", {hidden, hidden}),
        ur(name + ".ur", {hidden, hidden}),
        uh(name + ".uh", {hidden, hidden}),
        bz(name + ".bz", {hidden}),
        br(name + ".br", {hidden}),
        bh(name + ".bh", {hidden}),
        c_(in_channels),
        h_(hidden) {}

  void init(Rng& rng) {
    scaled_uniform_init(wz.value, c_, rng);
    scaled_uniform_init(wr.value, c_, rng);
    scaled_uniform_init(wh.value, c_, rng);
    scaled_uniform_init(uz.value, h_, rng);
    scaled_uniform_init(ur.value, h_, rng);
    scaled_uniform_init(uh.value, h_, rng);
    bz.value.zero();
    br.value.zero();
    bh.value.zero();
  }

  // state0 may be empty (all-zero initial state).
  Tensor<T> forward(const Tensor<T>& x, Ctx* ctx, const Tensor<T>* state0 = nullptr) const {
    require(x.rank() == 3 && x.dim(1) == c_, Err::ShapeMismatch,
            "gru: expected (B," + std::to_string(c_) + ",T), got " + x.shape_str());
    const long batch = x.dim(0), t_len = x.dim(2);

    MatX<T> h = MatX<T>::Zero(h_, batch);
    if (state0) {
      require(state0->rank() == 2 && state0->dim(0) == batch && state0->dim(1) == h_,
              Err::ShapeMismatch, "gru: bad state0 shape " + state0->shape_str());
      for (long b = 0; b < batch; ++b)
        for (long j = 0; j < h_; ++j) h(j, b) = state0->at(b, j);
    }

    Eigen::Map<const MatXR<T>> wz_m(wz.value.data(), h_, c_);
    Eigen::Map<const MatXR<T>> wr_m(wr.value.data(), h_, c_);
    Eigen::Map<const MatXR<T>> wh_m(wh.value.data(), h_, c_);
    Eigen::Map<const MatXR<T>> uz_m(uz.value.data(), h_, h_);
    Eigen::Map<const MatXR<T>> ur_m(ur.value.data(), h_, h_);
    Eigen::Map<const MatXR<T>> uh_m(uh.value.data(), h_, h_);
    Eigen::Map<const MatX<T>> bz_v(bz.value.data(), h_, 1);
    Eigen::Map<const MatX<T>> br_v(br.value.data(), h_, 1);
    Eigen::Map<const MatX<T>> bh_v(bh.value.data(), h_, 1);

    Tensor<T> y(batch, h_, t_len);
    if (ctx) {
      ctx->input = x;
      ctx->h0 = h;
      ctx->z.resize(static_cast<size_t>(t_len));
      ctx->r.resize(static_cast<size_t>(t_len));
      ctx->cand.resize(static_cast<size_t>(t_len));
      ctx->rh.resize(static_cast<size_t>(t_len));
      ctx->h.resize(static_cast<size_t>(t_len));
    }

    MatX<T> xt(c_, batch), az(h_, batch), ar(h_, batch), ah(h_, batch), rh(h_, batch);
    for (long t = 0; t < t_len; ++t) {
      for (long b = 0; b < batch; ++b)
        for (long c = 0; c < c_; ++c) xt(c, b) = x.at(b, c, t);
      az.noalias() = wz_m * xt + uz_m * h;
      az.colwise() += bz_v.col(0);
      ar.noalias() = wr_m * xt + ur_m * h;
      ar.colwise() += br_v.col(0);
      MatX<T> z = az.unaryExpr([](T v) { return sigmoid(v); });
      MatX<T> r = ar.unaryExpr([](T v) { return sigmoid(v); });
      rh = r.cwiseProduct(h);
      ah.noalias() = wh_m * xt + uh_m * rh;
      ah.colwise() += bh_v.col(0);
      MatX<T> cand = ah.array().tanh().matrix();
      MatX<T> h_new = z.cwiseProduct(h) + (MatX<T>::Ones(h_, batch) - z).cwiseProduct(cand);
      if (ctx) {
        ctx->z[static_cast<size_t>(t)] = z;
        ctx->r[static_cast<size_t>(t)] = r;
        ctx->cand[static_cast<size_t>(t)] = cand;
        ctx->rh[static_cast<size_t>(t)] = rh;
        ctx->h[static_cast<size_t>(t)] = h_new;
      }
      h = std::move(h_new);
      for (long b = 0; b < batch; ++b)
        for (long j = 0; j < h_; ++j) y.at(b, j, t) = h(j, b);
    }
    ensure_finite(y, "gru");
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy, const Ctx& ctx, Tensor<T>* gstate0 = nullptr) {
    const Tensor<T>& x = ctx.input;
    const long batch = x.dim(0), t_len = x.dim(2);
    require(gy.rank() == 3 && gy.dim(0) == batch && gy.dim(1) == h_ && gy.dim(2) == t_len,
            Err::ShapeMismatch, "gru backward: bad grad shape " + gy.shape_str());

    Eigen::Map<const MatXR<T>> wz_m(wz.value.data(), h_, c_);
    Eigen::Map<const MatXR<T>> wr_m(wr.value.data(), h_, c_);
    Eigen::Map<const MatXR<T>> wh_m(wh.value.data(), h_, c_);
    Eigen::Map<const MatXR<T>> uz_m(uz.value.data(), h_, h_);
    Eigen::Map<const MatXR<T>> ur_m(ur.value.data(), h_, h_);
    Eigen::Map<const MatXR<T>> uh_m(uh.value.data(), h_, h_);
    Eigen::Map<MatXR<T>> gwz(wz.grad.data(), h_, c_);
    Eigen::Map<MatXR<T>> gwr(wr.grad.data(), h_, c_);
    Eigen::Map<MatXR<T>> gwh(wh.grad.data(), h_, c_);
    Eigen::Map<MatXR<T>> guz(uz.grad.data(), h_, h_);
    Eigen::Map<MatXR<T>> gur(ur.grad.data(), h_, h_);
    Eigen::Map<MatXR<T>> guh(uh.grad.data(), h_, h_);
    Tensor<T> gx(batch, c_, t_len);
    MatX<T> dh = MatX<T>::Zero(h_, batch);
    MatX<T> xt(c_, batch);
    for (long t = t_len - 1; t >= 0; --t) {
      const size_t ts = static_cast<size_t>(t);
      for (long b = 0; b < batch; ++b)
        for (long j = 0; j < h_; ++j) dh(j, b) += gy.at(b, j, t);
      const MatX<T>& h_prev = (t > 0) ? ctx.h[ts - 1] : ctx.h0;
      const MatX<T>& z = ctx.z[ts];
      const MatX<T>& r = ctx.r[ts];
      const MatX<T>& cand = ctx.cand[ts];

      MatX<T> dz = dh.cwiseProduct(h_prev - cand);
      MatX<T> dcand = dh.cwiseProduct(MatX<T>::Ones(h_, batch) - z);
      MatX<T> daz = dz.cwiseProduct(z.cwiseProduct(MatX<T>::Ones(h_, batch) - z));
      MatX<T> dah =
          dcand.cwiseProduct(MatX<T>::Ones(h_, batch) - cand.cwiseProduct(cand));
      MatX<T> drh = uh_m.transpose() * dah;
      MatX<T> dr = drh.cwiseProduct(h_prev);
      MatX<T> dar = dr.cwiseProduct(r.cwiseProduct(MatX<T>::Ones(h_, batch) - r));

      for (long b = 0; b < batch; ++b)
        for (long c = 0; c < c_; ++c) xt(c, b) = x.at(b, c, t);
      gwz.noalias() += daz * xt.transpose();
      gwr.noalias() += dar * xt.transpose();
      gwh.noalias() += dah * xt.transpose();
      guz.noalias() += daz * h_prev.transpose();
      gur.noalias() += dar * h_prev.transpose();
      guh.noalias() += dah * ctx.rh[ts].transpose();
      // fixed-order scalar sums, same reasoning as the conv1d bias gradient
      for (long j = 0; j < h_; ++j) {
        T az_acc = 0, ar_acc = 0, ah_acc = 0;
        for (long b = 0; b < batch; ++b) {
          az_acc += daz(j, b);
          ar_acc += dar(j, b);
          ah_acc += dah(j, b);
        }
        bz.grad.at(j) += az_acc;
        br.grad.at(j) += ar_acc;
        bh.grad.at(j) += ah_acc;
      }

      MatX<T> dxt = wz_m.transpose() * daz + wr_m.transpose() * dar + wh_m.transpose() * dah;
      for (long b = 0; b < batch; ++b)
        for (long c = 0; c < c_; ++c) gx.at(b, c, t) = dxt(c, b);

      dh = dh.cwiseProduct(z) + drh.cwiseProduct(r) + uz_m.transpose() * daz +
           ur_m.transpose() * dar;
    }
    if (gstate0) {
      Tensor<T> g0(batch, h_);
      for (long b = 0; b < batch; ++b)
        for (long j = 0; j < h_; ++j) g0.at(b, j) = dh(j, b);
      *gstate0 = std::move(g0);
    }
    return gx;
  }

  std::vector<Parameter<T>*> params() {
    return {&wz, &wr, &wh, &uz, &ur, &uh, &bz, &br, &bh};
  }

  long hidden() const { return h_; }
  long in_channels() const { return c_; }

  static T sigmoid(T v) {
    if (v >= 0) {
      const T e = std::exp(-v);
      return T(1) / (T(1) + e);
    }
    const T e = std::exp(v);
    return e / (T(1) + e);
  }

 private:
  long c_ = 0, h_ = 0;
};

// ---------------------------------------------------------------------------
// Activations.
// ---------------------------------------------------------------------------
template <typename T>
class LeakyRelu {
 public:
  struct Ctx {
    Tensor<T> input;
  };

  explicit LeakyRelu(double slope = 0.2) : slope_(static_cast<T>(slope)) {}

  Tensor<T> forward(const Tensor<T>& x, Ctx* ctx) const {
    Tensor<T> y = x;
    for (size_t i = 0; i < y.size(); ++i)
      if (y[i] < T(0)) y[i] *= slope_;
    if (ctx) ctx->input = x;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy, const Ctx& ctx) const {
    check_same_shape(gy, ctx.input, "leaky_relu backward");
    Tensor<T> gx = gy;
    for (size_t i = 0; i < gx.size(); ++i)
      if (ctx.input[i] < T(0)) gx[i] *= slope_;
    return gx;
  }

 private:
  T slope_;
};

template <typename T>
class TanhAct {
 public:
  struct Ctx {
    Tensor<T> output;
  };

  Tensor<T> forward(const Tensor<T>& x, Ctx* ctx) const {
    Tensor<T> y = x;
    for (size_t i = 0; i < y.size(); ++i) y[i] = std::tanh(y[i]);
    if (ctx) ctx->output = y;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy, const Ctx& ctx) const {
    check_same_shape(gy, ctx.output, "tanh backward");
    Tensor<T> gx = gy;
    for (size_t i = 0; i < gx.size(); ++i) gx[i] *= T(1) - ctx.output[i] * ctx.output[i];
    return gx;
  }
};

// ---------------------------------------------------------------------------
// Structural helpers used by the U-Net wiring: channel concat and right-crop.
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2),
          Err::ShapeMismatch,
          "concat_channels: " + a.shape_str() + " vs " + b.shape_str());
  const long batch = a.dim(0), ca = a.dim(1), cb = b.dim(1), t_len = a.dim(2);
  Tensor<T> y(batch, ca + cb, t_len);
  for (long bi = 0; bi < batch; ++bi) {
    std::copy_n(a.data() + bi * ca * t_len, ca * t_len, y.data() + bi * (ca + cb) * t_len);
    std::copy_n(b.data() + bi * cb * t_len, cb * t_len,
                y.data() + (bi * (ca + cb) + ca) * t_len);
  }
  return y;
}

template <typename T>
void split_channels_grad(const Tensor<T>& gy, long ca, Tensor<T>& ga, Tensor<T>& gb) {
  const long batch = gy.dim(0), c_all = gy.dim(1), t_len = gy.dim(2);
  const long cb = c_all - ca;
  ga = Tensor<T>(batch, ca, t_len);
  gb = Tensor<T>(batch, cb, t_len);
  for (long bi = 0; bi < batch; ++bi) {
    std::copy_n(gy.data() + bi * c_all * t_len, ca * t_len, ga.data() + bi * ca * t_len);
    std::copy_n(gy.data() + (bi * c_all + ca) * t_len, cb * t_len,
                gb.data() + bi * cb * t_len);
  }
}

// Trims trailing frames; inverse pads the gradient with zeros.
template <typename T>
Tensor<T> crop_time(const Tensor<T>& x, long new_t) {
  require(new_t >= 1 && new_t <= x.dim(2), Err::ShapeMismatch, "crop_time: bad length");
  if (new_t == x.dim(2)) return x;
  const long batch = x.dim(0), c = x.dim(1), t_in = x.dim(2);
  Tensor<T> y(batch, c, new_t);
  for (long bi = 0; bi < batch; ++bi)
    for (long ci = 0; ci < c; ++ci)
      std::copy_n(x.data() + (bi * c + ci) * t_in, new_t, y.data() + (bi * c + ci) * new_t);
  return y;
}

template <typename T>
Tensor<T> crop_time_grad(const Tensor<T>& gy, long orig_t) {
  if (gy.dim(2) == orig_t) return gy;
  const long batch = gy.dim(0), c = gy.dim(1), t_crop = gy.dim(2);
  Tensor<T> gx(batch, c, orig_t);
  for (long bi = 0; bi < batch; ++bi)
    for (long ci = 0; ci < c; ++ci)
      std::copy_n(gy.data() + (bi * c + ci) * t_crop, t_crop,
                  gx.data() + (bi * c + ci) * orig_t);
  return gx;
}

// ---------------------------------------------------------------------------
// Adam optimizer.
// ---------------------------------------------------------------------------
template <typename T>
struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
};

template <typename T>
void adam_init(AdamState<T>& st, const std::vector<Parameter<T>*>& params) {
  st.step = 0;
  st.m.clear();
  st.v.clear();
  for (const Parameter<T>* p : params) {
    st.m.emplace_back(p->value.shape());
    st.v.emplace_back(p->value.shape());
  }
}

// One bias-corrected Adam update over the parameter list. Pure function of
// (values, grads, state): identical inputs give bitwise-identical outputs.
template <typename T>
void adam_step(std::vector<Parameter<T>*>& params, AdamState<T>& st) {
  require(params.size() == st.m.size(), Err::ShapeMismatch,
          "adam_step: state does not match parameter list");
  st.step += 1;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (size_t i = 0; i < params.size(); ++i) {
    Parameter<T>& p = *params[i];
    check_same_shape(p.grad, p.value, "adam_step");
    Tensor<T>& m = st.m[i];
    Tensor<T>& v = st.v[i];
    for (size_t j = 0; j < p.value.size(); ++j) {
      const double g = static_cast<double>(p.grad[j]);
      const double mj = st.beta1 * static_cast<double>(m[j]) + (1.0 - st.beta1) * g;
      const double vj = st.beta2 * static_cast<double>(v[j]) + (1.0 - st.beta2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double m_hat = mj / bc1;
      const double v_hat = vj / bc2;
      p.value[j] = static_cast<T>(static_cast<double>(p.value[j]) -
                                  st.lr * m_hat / (std::sqrt(v_hat) + st.eps));
    }
  }
}

// ---------------------------------------------------------------------------
// Central finite-difference gradient check. Returns the max over
// coordinates of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
// ---------------------------------------------------------------------------
double finite_diff_check(const std::function<double(const std::vector<double>&)>& objective,
                         const std::vector<double>& x0,
                         const std::vector<double>& analytic_grad, double h = 1e-5);

}  // namespace cyclesing
