#pragma once

#include <string>

#include "cyclesing/losses.hpp"
#include "cyclesing/models.hpp"
#include "cyclesing/rng.hpp"
#include "cyclesing/spectral.hpp"

namespace cyclesing {

struct TrainConfig {
  VariantSpec spec;
  long bins = kFeatureBins;
  long kernel = 5;
  long window = kDefaultWindow;  // feature geometry, persisted for transfer
  long hop = kDefaultHop;
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  double gamma = 0.5;        // equilibrium diversity ratio
  double lambda_k = 0.001;   // equilibrium proportional gain
  double lambda_cyc = 10.0;  // cycle-consistency weight
  uint64_t seed = 0;
};

struct LossReport {
  double adv_g_ab = 0;
  double adv_g_ba = 0;
  double cyc_a = 0;
  double cyc_b = 0;
  double d_a = 0;
  double d_b = 0;
  double convergence_m_a = 0;  // 0 for non-equilibrium variants
  double convergence_m_b = 0;
};

// Everything a resumable training run owns: both generators, both
// discriminators, optimizer state, equilibrium variables, sampling streams.
struct TrainState {
  TrainConfig cfg;
  Generator<float> g_ab, g_ba;
  Discriminator<float> d_a, d_b;
  AdamState<float> opt_g_ab, opt_g_ba, opt_d_a, opt_d_b;
  double k_a = 0.0;
  double k_b = 0.0;
  long step = 0;
  Rng rng_a{1};  // domain-A batch stream
  Rng rng_b{2};  // domain-B batch stream, independent of rng_a
  NormStats norm_stats{0.0, 1.0};
};

TrainState init_train_state(const TrainConfig& cfg);

// One optimization step on an unpaired batch pair: generator update (joint
// adversarial + cycle backward), then discriminator update on the same
// detached fakes, then equilibrium updates. Throws NonFiniteLoss with a
// diagnostic if any reported loss leaves the finite range.
LossReport train_step(TrainState& st, const Tensor<float>& batch_a,
                      const Tensor<float>& batch_b);

// Versioned binary checkpoint: header + named parameter/moment blobs +
// trailing 64-bit checksum. load(save(s)) restores every tensor bitwise.
void save_checkpoint(TrainState& st, const std::string& path);
TrainState load_checkpoint(const std::string& path);

// Appends `step,loss_name,value` lines covering the report and k values.
void append_loss_log(const std::string& path, long step, const LossReport& r, double k_a,
                     double k_b);

}  // namespace cyclesing
