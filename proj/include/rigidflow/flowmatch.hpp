// Copyright (C) 2026 rigidflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// Rectified conditional flow-matching training: pair construction on
// T^2 x SO(3), constant teacher velocities, condition dropout, and the
// moment-based optimization loop. Training is a pure function of
// (dataset, config, seed); per-step randomness is derived by hashing the
// seed with the step index so resumed runs replay exactly.

#pragma once

#include <functional>
#include <utility>

#include "rigidflow/fieldnet.hpp"
#include "rigidflow/manifold.hpp"
#include "rigidflow/scene.hpp"

namespace rigidflow {

/// The generative state x = (t, R).
struct Pose {
  Vec2 t = Vec2::Zero();
  Mat3 R = Mat3::Identity();
};

struct DatasetEntry {
  SystemSpec system;
  MinimaSet minima;
};
using Dataset = std::vector<DatasetEntry>;

struct TrainingPair {
  Pose x0;  // relaxed minimum, t = 0 end
  Pose x1;  // prior draw, t = 1 end
  double e_rel = 0.0;
  std::string system_id;
};

/// x0 uniform over the minima entries, x1 = (uniform torus point, Haar
/// rotation). Throws EmptyMinimaError.
TrainingPair make_pair(const SystemSpec& sys, const MinimaSet& minima, Rng& rng);

/// PBC-aware linear interpolant for translation, geodesic for rotation.
Pose interpolate(const TrainingPair& pair, double t, const Vec2& box);

/// Constant velocities of the interpolant path: minimal-image displacement
/// x0 -> x1 and the geodesic angular velocity. Independent of t.
std::pair<Vec2, Vec3> teacher_velocity(const TrainingPair& pair, const Vec2& box);

struct TrainConfig {
  double p_cfg = 0.2;      // condition dropout probability
  double lambda_rot = 1.0; // rotation loss weight
  int batch_size = 16;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 0.0;  // global L2 clip on the stacked gradient; 0 = off
  int steps = 10000;
  std::uint64_t seed = 0;
  RotHead rot_head = RotHead::Torque;
  int checkpoint_every = 1000;
  int jobs = 1;

  void validate() const;
};

struct AdamState {
  ParamStore m;
  ParamStore v;
};

struct TrainState {
  FieldParams params;
  AdamState adam;
  int step = 0;  // next step index; doubles as the Adam bias-correction count
};

struct StepStats {
  double total = 0.0;
  double trans = 0.0;
  double rot = 0.0;
  int n_null = 0;  // batch elements that took the null-condition path
};

/// Fresh state: seeded parameter init (translation scale set to the largest
/// box diagonal in the dataset) and zeroed moments.
TrainState init_train_state(const Dataset& data, const FieldConfig& fc,
                            const TrainConfig& tc);

/// One optimization step; advances state.step.
StepStats training_step(TrainState& state, const Dataset& data, const TrainConfig& tc);

struct TrainHooks {
  // step stats after each step; wall_ms is that step's wall time
  std::function<void(int step, const StepStats&, double wall_ms)> on_step;
  // called every checkpoint_every steps and at the end
  std::function<void(const TrainState&)> on_checkpoint;
};

/// Full loop from scratch; steps == 0 returns the initialized state.
TrainState train(const Dataset& data, const TrainConfig& tc, const FieldConfig& fc,
                 const TrainHooks& hooks = {});

/// Continue an existing state (e.g. loaded from a checkpoint) to tc.steps.
void train_continue(TrainState& state, const Dataset& data, const TrainConfig& tc,
                    const TrainHooks& hooks = {});

}  // namespace rigidflow
