// Copyright (C) 2026 rigidflow contributors
// SPDX-License-Identifier: Apache-2.0

#include "rigidflow/flowmatch.hpp"

#include <chrono>
#include <cmath>

namespace rigidflow {

TrainingPair make_pair(const SystemSpec& sys, const MinimaSet& minima, Rng& rng) {
  if (minima.minima.empty()) {
    throw EmptyMinimaError("make_pair: system " + sys.system_id + " has no minima");
  }
  TrainingPair pair;
  pair.system_id = sys.system_id;
  const auto& m = minima.minima[rng.uniform_int(minima.minima.size())];
  pair.x0.t = m.pose.t;
  pair.x0.R = m.pose.R;
  pair.e_rel = m.e_rel;
  pair.x1.t = Vec2(rng.uniform() * sys.box.x(), rng.uniform() * sys.box.y());
  pair.x1.R = sample_rotation(rng);
  return pair;
}

Pose interpolate(const TrainingPair& pair, double t, const Vec2& box) {
  const Vec2 delta = torus_displacement({pair.x0.t, box}, {pair.x1.t, box});
  Pose out;
  out.t = wrap_vec(pair.x0.t + t * delta, box);
  out.R = geodesic<double>(pair.x0.R, pair.x1.R, t);
  return out;
}

std::pair<Vec2, Vec3> teacher_velocity(const TrainingPair& pair, const Vec2& box) {
  return {torus_displacement({pair.x0.t, box}, {pair.x1.t, box}),
          rotation_target<double>(pair.x0.R, pair.x1.R)};
}

void TrainConfig::validate() const {
  if (p_cfg < 0.0 || p_cfg >= 1.0) throw InvalidConfigError("train: p_cfg must be in [0, 1)");
  if (lambda_rot < 0.0) throw InvalidConfigError("train: lambda_rot must be >= 0");
  if (batch_size < 1) throw InvalidConfigError("train: batch_size must be >= 1");
  if (lr <= 0.0) throw InvalidConfigError("train: lr must be positive");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
    throw InvalidConfigError("train: moment coefficients must be in [0, 1)");
  if (steps < 0) throw InvalidConfigError("train: steps must be >= 0");
  if (grad_clip < 0.0) throw InvalidConfigError("train: grad_clip must be >= 0");
  if (checkpoint_every < 1) throw InvalidConfigError("train: checkpoint_every must be >= 1");
}

namespace {

ParamStore zeros_like(const ParamStore& ref) {
  ParamStore out;
  out.names = ref.names;
  for (const auto& t : ref.tensors) out.tensors.push_back(Mat::Zero(t.rows(), t.cols()));
  return out;
}

constexpr std::uint64_t kStepStream = 0x57e9a1b2c3d4e5f6ull;

}  // namespace

TrainState init_train_state(const Dataset& data, const FieldConfig& fc,
                            const TrainConfig& tc) {
  tc.validate();
  if (data.empty()) throw InvalidConfigError("train: dataset is empty");
  double diag = 0.0;
  int max_species = 0;
  for (const auto& entry : data) {
    diag = std::max(diag, entry.system.box.norm());
    for (const auto& a : entry.system.slab_atoms) max_species = std::max(max_species, a.species);
    for (const auto& a : entry.system.adsorbate) max_species = std::max(max_species, a.species);
  }
  if (max_species >= fc.n_species) {
    throw InvalidConfigError("train: dataset species ids exceed model n_species");
  }
  TrainState st;
  st.params = init_field_params(fc, tc.seed, diag, M_PI);
  st.adam.m = zeros_like(st.params.store);
  st.adam.v = zeros_like(st.params.store);
  st.step = 0;
  return st;
}

StepStats training_step(TrainState& state, const Dataset& data, const TrainConfig& tc) {
  const int step = state.step;
  Rng rng(hash_combine(hash_combine(tc.seed, kStepStream), static_cast<std::uint64_t>(step)));

  StepStats stats;
  std::vector<BatchItem> batch;
  batch.reserve(tc.batch_size);
  std::vector<int> sys_of_item(tc.batch_size);
  std::vector<TrainingPair> pairs(tc.batch_size);
  for (int b = 0; b < tc.batch_size; ++b) {
    const int si = static_cast<int>(rng.uniform_int(data.size()));
    sys_of_item[b] = si;
    pairs[b] = make_pair(data[si].system, data[si].minima, rng);
    BatchItem item;
    item.t = rng.uniform();
    const bool drop = rng.uniform() < tc.p_cfg;
    item.cond = drop ? Condition::null_cond() : Condition::energy(pairs[b].e_rel);
    if (drop) ++stats.n_null;
    batch.push_back(std::move(item));
  }
  for (int b = 0; b < tc.batch_size; ++b) {
    const SystemSpec& sys = data[sys_of_item[b]].system;
    const Pose pt = interpolate(pairs[b], batch[b].t, sys.box);
    const auto [td, om] = teacher_velocity(pairs[b], sys.box);
    batch[b].t_dot_teacher = td;
    batch[b].omega_teacher = om;
    batch[b].graph = build_graph(sys, FullPose{pt.t, sys.z_init, pt.R},
                                 state.params.cfg.r_cut, state.params.cfg.max_neighbors);
  }

  ParamStore grads;
  const LossParts parts =
      loss_and_grad(state.params, batch, tc.lambda_rot, tc.rot_head, grads, tc.jobs);
  stats.total = parts.total;
  stats.trans = parts.trans;
  stats.rot = parts.rot;

  if (tc.grad_clip > 0.0) {
    double sq = 0.0;
    for (const auto& g : grads.tensors) sq += g.squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > tc.grad_clip) {
      const double scale = tc.grad_clip / norm;
      for (auto& g : grads.tensors) g *= scale;
    }
  }

  // Bias-corrected moment update.
  const double t_adam = static_cast<double>(step + 1);
  const double bc1 = 1.0 - std::pow(tc.beta1, t_adam);
  const double bc2 = 1.0 - std::pow(tc.beta2, t_adam);
  for (std::size_t k = 0; k < state.params.store.tensors.size(); ++k) {
    Mat& m = state.adam.m.tensors[k];
    Mat& v = state.adam.v.tensors[k];
    const Mat& g = grads.tensors[k];
    m = tc.beta1 * m + (1.0 - tc.beta1) * g;
    v = tc.beta2 * v + (1.0 - tc.beta2) * g.cwiseProduct(g);
    state.params.store.tensors[k].array() -=
        tc.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + tc.adam_eps);
  }
  state.step = step + 1;
  return stats;
}

void train_continue(TrainState& state, const Dataset& data, const TrainConfig& tc,
                    const TrainHooks& hooks) {
  tc.validate();
  while (state.step < tc.steps) {
    const auto t0 = std::chrono::steady_clock::now();
    const StepStats stats = training_step(state, data, tc);
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (hooks.on_step) hooks.on_step(state.step - 1, stats, ms);
    if (hooks.on_checkpoint &&
        (state.step % tc.checkpoint_every == 0 || state.step == tc.steps)) {
      hooks.on_checkpoint(state);
    }
  }
  if (hooks.on_checkpoint && tc.steps == 0) hooks.on_checkpoint(state);
}

TrainState train(const Dataset& data, const TrainConfig& tc, const FieldConfig& fc,
                 const TrainHooks& hooks) {
  TrainState state = init_train_state(data, fc, tc);
  train_continue(state, data, tc, hooks);
  return state;
}

}  // namespace rigidflow
