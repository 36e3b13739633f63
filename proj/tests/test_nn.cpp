#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>
#include <vector>

#include "cyclesing/losses.hpp"
#include "cyclesing/nn.hpp"
#include "cyclesing/rng.hpp"
#include "fd_checks.hpp"

using namespace cyclesing;
using fdx::fd_conv;
using fdx::fd_gru;
using fdx::fd_instance_norm;
using fdx::fd_l1;
using fdx::fd_mse;
using fdx::fd_tconv;
using fdx::random_tensor;

namespace {

// Reference convolution written as the plain quintuple loop.
Tensor<double> naive_conv1d(const Tensor<double>& x, const Tensor<double>& w,
                            const Tensor<double>& b, long stride, long pad_left,
                            long t_out) {
  const long B = x.dim(0), Cin = x.dim(1), T = x.dim(2);
  const long Cout = w.dim(0), K = w.dim(2);
  Tensor<double> y(B, Cout, t_out);
  for (long n = 0; n < B; ++n)
    for (long co = 0; co < Cout; ++co)
      for (long t = 0; t < t_out; ++t) {
        double acc = b.at(co);
        for (long ci = 0; ci < Cin; ++ci)
          for (long k = 0; k < K; ++k) {
            const long src = t * stride + k - pad_left;
            if (src >= 0 && src < T) acc += w.at(co, ci, k) * x.at(n, ci, src);
          }
        y.at(n, co, t) = acc;
      }
  return y;
}

// Reference transposed convolution: every input step scatters a kernel copy.
Tensor<double> naive_tconv1d(const Tensor<double>& x, const Tensor<double>& w,
                             const Tensor<double>& b, long stride, long offset) {
  const long B = x.dim(0), Cin = x.dim(1), T = x.dim(2);
  const long Cout = w.dim(1), K = w.dim(2);
  const long t_out = T * stride;
  Tensor<double> y(B, Cout, t_out);
  for (long n = 0; n < B; ++n)
    for (long co = 0; co < Cout; ++co)
      for (long t = 0; t < t_out; ++t) y.at(n, co, t) = b.at(co);
  for (long n = 0; n < B; ++n)
    for (long ci = 0; ci < Cin; ++ci)
      for (long t = 0; t < T; ++t)
        for (long co = 0; co < Cout; ++co)
          for (long k = 0; k < K; ++k) {
            const long dst = t * stride + k - offset;
            if (dst >= 0 && dst < t_out)
              y.at(n, co, dst) += w.at(ci, co, k) * x.at(n, ci, t);
          }
  return y;
}

Tensor<double> naive_instance_norm(const Tensor<double>& x, const Tensor<double>& gain,
                                   const Tensor<double>& bias) {
  const long B = x.dim(0), C = x.dim(1), T = x.dim(2);
  Tensor<double> y(B, C, T);
  for (long n = 0; n < B; ++n)
    for (long c = 0; c < C; ++c) {
      double mean = 0;
      for (long t = 0; t < T; ++t) mean += x.at(n, c, t);
      mean /= T;
      double var = 0;
      for (long t = 0; t < T; ++t) {
        const double d = x.at(n, c, t) - mean;
        var += d * d;
      }
      var /= T;
      const double inv = 1.0 / std::sqrt(var + 1e-5);
      for (long t = 0; t < T; ++t)
        y.at(n, c, t) = gain.at(c) * (x.at(n, c, t) - mean) * inv + bias.at(c);
    }
  return y;
}

double sigmoid_ref(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Reference GRU unrolled with scalar arithmetic only.
Tensor<double> naive_gru(const GruLayer<double>& g, const Tensor<double>& x) {
  const long B = x.dim(0), C = x.dim(1), T = x.dim(2);
  const long H = g.hidden();
  Tensor<double> y(B, H, T);
  for (long n = 0; n < B; ++n) {
    std::vector<double> h(H, 0.0);
    for (long t = 0; t < T; ++t) {
      std::vector<double> hn(H);
      for (long i = 0; i < H; ++i) {
        double az = g.bz.value.at(i), ar = g.br.value.at(i);
        for (long c = 0; c < C; ++c) {
          az += g.wz.value.at(i, c) * x.at(n, c, t);
          ar += g.wr.value.at(i, c) * x.at(n, c, t);
        }
        for (long j = 0; j < H; ++j) {
          az += g.uz.value.at(i, j) * h[j];
          ar += g.ur.value.at(i, j) * h[j];
        }
        const double z = sigmoid_ref(az);
        const double r = sigmoid_ref(ar);
        double ah = g.bh.value.at(i);
        for (long c = 0; c < C; ++c) ah += g.wh.value.at(i, c) * x.at(n, c, t);
        for (long j = 0; j < H; ++j) {
          const double rj = sigmoid_ref([&] {
            double a = g.br.value.at(j);
            for (long c = 0; c < C; ++c) a += g.wr.value.at(j, c) * x.at(n, c, t);
            for (long k = 0; k < H; ++k) a += g.ur.value.at(j, k) * h[k];
            return a;
          }());
          ah += g.uh.value.at(i, j) * (rj * h[j]);
        }
        const double cand = std::tanh(ah);
        hn[i] = z * h[i] + (1.0 - z) * cand;
        (void)r;
      }
      for (long i = 0; i < H; ++i) y.at(n, i, t) = hn[i];
      h = hn;
    }
  }
  return y;
}

}  // namespace

TEST_CASE("conv1d: same padding matches the hand-worked example") {
  // x = [1,2,3], w = [1,0,-1], same padding pads one zero each side
  Conv1d<double> conv("c", 1, 1, 3, 1, Pad::Same);
  conv.weight.value.at(0, 0, 0) = 1;
  conv.weight.value.at(0, 0, 1) = 0;
  conv.weight.value.at(0, 0, 2) = -1;
  Tensor<double> x(1, 1, 3);
  x.at(0, 0, 0) = 1;
  x.at(0, 0, 1) = 2;
  x.at(0, 0, 2) = 3;
  const auto y = conv.forward(x, nullptr);
  REQUIRE(y.dim(2) == 3);
  CHECK(y.at(0, 0, 0) == -2.0);  // 0*1 + 1*0 + 2*(-1)
  CHECK(y.at(0, 0, 1) == -2.0);  // 1 - 3
  CHECK(y.at(0, 0, 2) == 2.0);   // 2 - 0
}

TEST_CASE("conv1d: valid padding reduces to a single dot product") {
  Conv1d<double> conv("c", 1, 1, 3, 1, Pad::Valid);
  conv.weight.value.at(0, 0, 0) = 1;
  conv.weight.value.at(0, 0, 1) = 0;
  conv.weight.value.at(0, 0, 2) = -1;
  Tensor<double> x(1, 1, 3);
  x.at(0, 0, 0) = 1;
  x.at(0, 0, 1) = 2;
  x.at(0, 0, 2) = 3;
  const auto y = conv.forward(x, nullptr);
  REQUIRE(y.dim(2) == 1);
  CHECK(y.at(0, 0, 0) == -2.0);  // 1 - 3
}

TEST_CASE("conv1d: forward matches the naive loop") {
  for (uint64_t seed : {1ull, 2ull}) {
    for (long stride : {1L, 2L, 3L}) {
      Rng rng(seed);
      Conv1d<double> conv("c", 3, 4, 5, stride, Pad::Same);
      conv.init(rng);
      const Tensor<double> x = random_tensor({2, 3, 11}, rng);
      const auto y = conv.forward(x, nullptr);
      const long t_out = conv.out_length(11);
      const auto ref = naive_conv1d(x, conv.weight.value, conv.bias.value, stride,
                                    conv.pad_left(11), t_out);
      REQUIRE(y.same_shape(ref));
      for (size_t i = 0; i < y.size(); ++i)
        CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("conv1d: stride-1 same padding preserves every length") {
  Rng rng(5);
  Conv1d<double> conv("c", 2, 3, 5, 1, Pad::Same);
  conv.init(rng);
  for (long t = 1; t <= 20; ++t) {
    const Tensor<double> x = random_tensor({1, 2, t}, rng);
    CHECK(conv.forward(x, nullptr).dim(2) == t);
  }
}

TEST_CASE("conv1d: stride-2 same padding yields ceil(T/2)") {
  Rng rng(5);
  Conv1d<double> conv("c", 1, 1, 5, 2, Pad::Same);
  conv.init(rng);
  CHECK(conv.forward(random_tensor({1, 1, 8}, rng), nullptr).dim(2) == 4);
  CHECK(conv.forward(random_tensor({1, 1, 9}, rng), nullptr).dim(2) == 5);
  CHECK(conv.forward(random_tensor({1, 1, 1}, rng), nullptr).dim(2) == 1);
}

TEST_CASE("conv1d: even kernel with same padding is rejected") {
  CHECK_THROWS_AS(Conv1d<double>("c", 1, 1, 4, 1, Pad::Same), Error);
  CHECK_NOTHROW(Conv1d<double>("c", 1, 1, 4, 1, Pad::Valid));
}

TEST_CASE("conv1d_transpose: forward matches the naive scatter") {
  for (uint64_t seed : {3ull, 4ull}) {
    Rng rng(seed);
    ConvTranspose1d<double> tc("t", 3, 2, 5, 2);
    tc.init(rng);
    const Tensor<double> x = random_tensor({2, 3, 5}, rng);
    const auto y = tc.forward(x, nullptr);
    const auto ref = naive_tconv1d(x, tc.weight.value, tc.bias.value, 2, tc.offset());
    REQUIRE(y.same_shape(ref));
    for (size_t i = 0; i < y.size(); ++i)
      CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv1d_transpose: output length is exactly T*stride") {
  Rng rng(1);
  ConvTranspose1d<double> tc("t", 2, 2, 5, 2);
  tc.init(rng);
  CHECK(tc.forward(random_tensor({1, 2, 5}, rng), nullptr).dim(2) == 10);
  CHECK(tc.forward(random_tensor({1, 2, 1}, rng), nullptr).dim(2) == 2);
  CHECK(tc.offset() == 1);  // (K - s) / 2 for K=5, s=2
}

TEST_CASE("instance_norm: forward matches the naive formula") {
  Rng rng(9);
  InstanceNorm<double> norm("n", 3);
  for (size_t i = 0; i < norm.gain.value.size(); ++i)
    norm.gain.value[i] = rng.uniform(0.5, 1.5);
  for (size_t i = 0; i < norm.bias.value.size(); ++i)
    norm.bias.value[i] = rng.uniform(-0.5, 0.5);
  const Tensor<double> x = random_tensor({2, 3, 7}, rng);
  const auto y = norm.forward(x, nullptr);
  const auto ref = naive_instance_norm(x, norm.gain.value, norm.bias.value);
  for (size_t i = 0; i < y.size(); ++i)
    CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("instance_norm: normalized activations have zero mean, unit variance") {
  Rng rng(10);
  InstanceNorm<double> norm("n", 2);
  norm.gain.value.fill(1.0);
  const Tensor<double> x = random_tensor({1, 2, 64}, rng, 3.0);
  const auto y = norm.forward(x, nullptr);
  for (long c = 0; c < 2; ++c) {
    double mean = 0, var = 0;
    for (long t = 0; t < 64; ++t) mean += y.at(0, c, t);
    mean /= 64;
    for (long t = 0; t < 64; ++t) var += (y.at(0, c, t) - mean) * (y.at(0, c, t) - mean);
    var /= 64;
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("instance_norm: a single frame degenerates to the bias") {
  Rng rng(11);
  InstanceNorm<double> norm("n", 2);
  norm.gain.value.fill(1.3);
  norm.bias.value.at(0) = 0.25;
  norm.bias.value.at(1) = -0.5;
  const Tensor<double> x = random_tensor({1, 2, 1}, rng, 100.0);
  InstanceNorm<double>::Ctx ctx;
  const auto y = norm.forward(x, &ctx);
  CHECK(y.at(0, 0, 0) == doctest::Approx(0.25).epsilon(1e-6));
  CHECK(y.at(0, 1, 0) == doctest::Approx(-0.5).epsilon(1e-6));
  Tensor<double> gy(1, 2, 1);
  gy.fill(1.0);
  const auto gx = norm.backward(gy, ctx);
  CHECK(std::abs(gx.at(0, 0, 0)) < 1e-6);
  CHECK(std::abs(gx.at(0, 1, 0)) < 1e-6);
}

TEST_CASE("instance_norm: survives extreme input magnitudes") {
  Rng rng(12);
  InstanceNorm<double> norm("n", 2);
  norm.gain.value.fill(1.0);
  const Tensor<double> x = random_tensor({1, 2, 16}, rng, 1e6);
  const auto y = norm.forward(x, nullptr);
  CHECK(y.all_finite());
  for (size_t i = 0; i < y.size(); ++i) CHECK(std::abs(y[i]) < 10.0);
}

TEST_CASE("gru: forward matches the scalar reference") {
  Rng rng(13);
  GruLayer<double> gru("g", 3, 4);
  gru.init(rng);
  const Tensor<double> x = random_tensor({2, 3, 5}, rng);
  const auto y = gru.forward(x, nullptr);
  const auto ref = naive_gru(gru, x);
  REQUIRE(y.same_shape(ref));
  for (size_t i = 0; i < y.size(); ++i)
    CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("gru: zero input with zero biases is a fixed point at zero") {
  Rng rng(14);
  GruLayer<double> gru("g", 3, 4);
  gru.init(rng);  // keeps biases zero
  Tensor<double> x(2, 3, 6);
  const auto y = gru.forward(x, nullptr);
  for (size_t i = 0; i < y.size(); ++i) CHECK(y[i] == 0.0);
}

TEST_CASE("finite-difference harness flags a scaled-wrong gradient") {
  auto objective = [](const std::vector<double>& q) {
    double acc = 0;
    for (double v : q) acc += v * v;
    return acc;
  };
  const std::vector<double> x0 = {0.7, -1.2, 2.5};
  std::vector<double> right = {1.4, -2.4, 5.0};
  std::vector<double> wrong = {2.8, -4.8, 10.0};
  CHECK(finite_diff_check(objective, x0, right) < 1e-6);
  CHECK(finite_diff_check(objective, x0, wrong) > 0.3);
}

TEST_CASE("gradient check: conv1d, five seeds, both paddings and strides") {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    CHECK(fd_conv(seed, 2, Pad::Same) < 1e-4);
    CHECK(fd_conv(seed, 1, Pad::Same) < 1e-4);
    CHECK(fd_conv(seed, 1, Pad::Valid) < 1e-4);
  }
}

TEST_CASE("gradient check: conv1d_transpose, five seeds") {
  for (uint64_t seed = 0; seed < 5; ++seed) CHECK(fd_tconv(seed) < 1e-4);
}

TEST_CASE("gradient check: instance_norm, five seeds") {
  for (uint64_t seed = 0; seed < 5; ++seed) CHECK(fd_instance_norm(seed, 7) < 1e-4);
}

TEST_CASE("gradient check: gru with and without an initial state, five seeds") {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    CHECK(fd_gru(seed, false) < 1e-4);
    CHECK(fd_gru(seed, true) < 1e-4);
  }
}

TEST_CASE("gradient check: both loss heads, five seeds") {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    CHECK(fd_l1(seed) < 1e-4);
    CHECK(fd_mse(seed) < 1e-4);
  }
}

TEST_CASE("losses: mean absolute difference example") {
  Tensor<double> pred(1, 1, 2);
  pred.at(0, 0, 0) = 1;
  pred.at(0, 0, 1) = -1;
  Tensor<double> target(1, 1, 2);
  const auto loss = l1_mean(pred, target);
  CHECK(loss.value == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(loss.grad.at(0, 0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(loss.grad.at(0, 0, 1) == doctest::Approx(-0.5).epsilon(1e-12));
}

TEST_CASE("losses: least-squares head example") {
  Tensor<double> pred(1, 1, 2);
  pred.at(0, 0, 0) = 0.5;
  pred.at(0, 0, 1) = 0.5;
  CHECK(mse_to_constant(pred, 1.0).value == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(mse_to_constant(pred, 0.0).value == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("losses: equilibrium discriminator/generator split") {
  const auto b = began_losses(1.0, 0.2, 0.5);
  CHECK(b.d_loss == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(b.g_adv == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("losses: equilibrium update and convergence measure") {
  const auto eq = update_equilibrium(0.0, 1.0, 0.2, 0.5, 0.001);
  CHECK(eq.k_next == doctest::Approx(0.0003).epsilon(1e-12));
  CHECK(eq.convergence == doctest::Approx(1.3).epsilon(1e-12));

  // clamping at both rails
  CHECK(update_equilibrium(0.0, 0.0, 5.0, 0.5, 1.0).k_next == 0.0);
  CHECK(update_equilibrium(1.0, 5.0, 0.0, 0.5, 1.0).k_next == 1.0);
}

TEST_CASE("adam: first step moves by the learning rate against the gradient sign") {
  Parameter<double> p("p", {2});
  p.value.at(0) = 1.0;
  p.value.at(1) = -1.0;
  p.grad.at(0) = 0.5;
  p.grad.at(1) = -2.0;
  std::vector<Parameter<double>*> params = {&p};
  AdamState<double> st;
  st.lr = 1e-4;
  adam_init(st, params);
  adam_step(params, st);
  // bias-corrected m-hat/sqrt(v-hat) is exactly sign(g) for a first step
  CHECK(p.value.at(0) == doctest::Approx(1.0 - 1e-4).epsilon(1e-9));
  CHECK(p.value.at(1) == doctest::Approx(-1.0 + 1e-4).epsilon(1e-9));
  CHECK(st.step == 1);
}

TEST_CASE("adam: zero gradient leaves parameters untouched") {
  Parameter<double> p("p", {3});
  p.value.at(0) = 0.25;
  p.value.at(1) = -4.0;
  p.value.at(2) = 7.5;
  std::vector<Parameter<double>*> params = {&p};
  AdamState<double> st;
  adam_init(st, params);
  for (int i = 0; i < 3; ++i) adam_step(params, st);
  CHECK(p.value.at(0) == 0.25);
  CHECK(p.value.at(1) == -4.0);
  CHECK(p.value.at(2) == 7.5);
}

TEST_CASE("adam: identical runs are bitwise identical") {
  auto run = [] {
    Parameter<float> p("p", {4});
    for (long i = 0; i < 4; ++i) p.value.at(i) = 0.1f * static_cast<float>(i + 1);
    std::vector<Parameter<float>*> params = {&p};
    AdamState<float> st;
    adam_init(st, params);
    Rng rng(3);
    for (int it = 0; it < 50; ++it) {
      for (long i = 0; i < 4; ++i)
        p.grad.at(i) = static_cast<float>(rng.uniform(-1.0, 1.0));
      adam_step(params, st);
    }
    std::vector<float> out(p.value.data(), p.value.data() + 4);
    return out;
  };
  const auto a = run();
  const auto b = run();
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("leaky relu and tanh behave as stated") {
  LeakyRelu<double> act(0.2);
  Tensor<double> x(1, 1, 3);
  x.at(0, 0, 0) = -2.0;
  x.at(0, 0, 1) = 0.0;
  x.at(0, 0, 2) = 3.0;
  LeakyRelu<double>::Ctx ctx;
  const auto y = act.forward(x, &ctx);
  CHECK(y.at(0, 0, 0) == doctest::Approx(-0.4));
  CHECK(y.at(0, 0, 1) == 0.0);
  CHECK(y.at(0, 0, 2) == 3.0);
  Tensor<double> gy(1, 1, 3);
  gy.fill(1.0);
  const auto gx = act.backward(gy, ctx);
  CHECK(gx.at(0, 0, 0) == doctest::Approx(0.2));
  CHECK(gx.at(0, 0, 2) == doctest::Approx(1.0));

  TanhAct<double> th;
  TanhAct<double>::Ctx tctx;
  const auto ty = th.forward(x, &tctx);
  for (size_t i = 0; i < ty.size(); ++i) {
    CHECK(ty[i] == doctest::Approx(std::tanh(x[i])).epsilon(1e-12));
    CHECK(std::abs(ty[i]) < 1.0);
  }
  const auto tgx = th.backward(gy, tctx);
  for (size_t i = 0; i < tgx.size(); ++i)
    CHECK(tgx[i] == doctest::Approx(1.0 - std::tanh(x[i]) * std::tanh(x[i])).epsilon(1e-12));
}

TEST_CASE("concat/split and crop helpers invert each other") {
  Rng rng(21);
  const Tensor<double> a = random_tensor({2, 3, 4}, rng);
  const Tensor<double> b = random_tensor({2, 2, 4}, rng);
  const auto cat = concat_channels(a, b);
  REQUIRE(cat.dim(1) == 5);
  CHECK(cat.at(1, 0, 2) == a.at(1, 0, 2));  // a occupies the leading channels
  CHECK(cat.at(1, 3, 2) == b.at(1, 0, 2));

  Tensor<double> ga, gb;
  split_channels_grad(cat, 3, ga, gb);
  REQUIRE(ga.same_shape(a));
  REQUIRE(gb.same_shape(b));
  for (size_t i = 0; i < a.size(); ++i) CHECK(ga[i] == a[i]);
  for (size_t i = 0; i < b.size(); ++i) CHECK(gb[i] == b[i]);

  const auto cropped = crop_time(a, 3);
  REQUIRE(cropped.dim(2) == 3);
  CHECK(cropped.at(1, 2, 2) == a.at(1, 2, 2));
  const auto widened = crop_time_grad(cropped, 4);
  REQUIRE(widened.same_shape(a));
  CHECK(widened.at(1, 2, 3) == 0.0);  // the cropped tail receives no gradient
  CHECK(widened.at(1, 2, 1) == a.at(1, 2, 1));
}

TEST_CASE("ensure_finite trips on NaN activations") {
  Tensor<double> x(1, 1, 2);
  x.at(0, 0, 0) = 1.0;
  CHECK_NOTHROW(ensure_finite(x, "probe"));
  x.at(0, 0, 1) = std::nan("");
  CHECK_THROWS_AS(ensure_finite(x, "probe"), Error);
  try {
    ensure_finite(x, "probe");
  } catch (const Error& e) {
    CHECK(e.kind() == Err::NonFiniteLoss);
  }
}
