// Copyright (C) 2026 rigidflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic generation: prior sampling, classifier-free-guidance velocity
// combination, and K-step backward Heun integration on T^2 x SO(3). The
// integrator core is generic over a velocity callback so it can be driven by
// the trained field or by analytic fields in tests.

#pragma once

#include <functional>
#include <vector>

#include "rigidflow/fieldnet.hpp"
#include "rigidflow/flowmatch.hpp"

namespace rigidflow {

struct SampleConfig {
  int k_steps = 5;          // K
  double guidance_w = 0.0;  // w >= 0
  double e_rel_target = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Uniform in-plane position and Haar-uniform rotation.
Pose sample_prior(const SystemSpec& sys, Rng& rng);

/// (1+w) v(.|E_rel) - w v(.|null), componentwise for both outputs. With
/// w = 0 only the conditional forward is evaluated, so the identity with the
/// plain conditional output is bit-exact.
VelocityOut cfg_velocity(const FieldParams& params, const GraphInput& graph, double t,
                         double e_rel_target, double w, RotHead rot_head);

using VelocityFn = std::function<VelocityOut(const Pose&, double)>;

/// One Heun step: Euler predictor, corrector at t + dt, then the averaged
/// increment applied to the original pose. Translation wraps; the rotation
/// increments are averaged in the Lie algebra and applied by a single exp.
Pose heun_step(const VelocityFn& field, const Vec2& box, const Pose& pose, double t,
               double dt);

/// K uniform backward steps from t = 1 to t = 0. Intermediate rotations are
/// re-orthonormalized by polar projection when Frobenius drift exceeds 1e-9.
Pose integrate_field(const VelocityFn& field, const Vec2& box, const Pose& x1,
                     int k_steps, std::vector<Pose>* trace = nullptr);

/// Model-driven wrappers: the velocity is cfg_velocity on a graph rebuilt at
/// every evaluation (poses move by large fractions of r_cut across steps).
Pose heun_step(const FieldParams& params, const SystemSpec& sys, const Pose& pose,
               double t, double dt, const SampleConfig& cfg, RotHead rot_head);

Pose integrate(const FieldParams& params, const SystemSpec& sys, const Pose& x1,
               const SampleConfig& cfg, RotHead rot_head,
               std::vector<Pose>* trace = nullptr);

}  // namespace rigidflow
