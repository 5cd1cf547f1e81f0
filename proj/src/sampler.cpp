// Copyright (C) 2026 rigidflow contributors
// SPDX-License-Identifier: Apache-2.0

#include "rigidflow/sampler.hpp"

namespace rigidflow {

void SampleConfig::validate() const {
  if (k_steps < 1) throw InvalidConfigError("sample: k_steps must be >= 1");
  if (guidance_w < 0.0) throw InvalidConfigError("sample: guidance must be >= 0");
  if (e_rel_target < 0.0) throw InvalidConfigError("sample: e_rel_target must be >= 0");
}

Pose sample_prior(const SystemSpec& sys, Rng& rng) {
  Pose p;
  p.t = Vec2(rng.uniform() * sys.box.x(), rng.uniform() * sys.box.y());
  p.R = sample_rotation(rng);
  return p;
}

VelocityOut cfg_velocity(const FieldParams& params, const GraphInput& graph, double t,
                         double e_rel_target, double w, RotHead rot_head) {
  const VelocityOut cond =
      forward(params, graph, t, Condition::energy(e_rel_target), rot_head);
  if (w == 0.0) return cond;
  const VelocityOut uncond = forward(params, graph, t, Condition::null_cond(), rot_head);
  VelocityOut out;
  out.t_dot = (1.0 + w) * cond.t_dot - w * uncond.t_dot;
  out.omega = (1.0 + w) * cond.omega - w * uncond.omega;
  return out;
}

Pose heun_step(const VelocityFn& field, const Vec2& box, const Pose& pose, double t,
               double dt) {
  const VelocityOut v1 = field(pose, t);
  Pose provisional;
  provisional.t = wrap_vec(pose.t + dt * v1.t_dot, box);
  provisional.R = exp_so3<double>(Vec3(dt * v1.omega)) * pose.R;
  const VelocityOut v2 = field(provisional, t + dt);

  Pose out;
  out.t = wrap_vec(pose.t + dt * 0.5 * (v1.t_dot + v2.t_dot), box);
  out.R = exp_so3<double>(Vec3(dt * 0.5 * (v1.omega + v2.omega))) * pose.R;
  return out;
}

Pose integrate_field(const VelocityFn& field, const Vec2& box, const Pose& x1,
                     int k_steps, std::vector<Pose>* trace) {
  if (k_steps < 1) throw InvalidConfigError("integrate: k_steps must be >= 1");
  Pose x;
  x.t = wrap_vec(x1.t, box);
  x.R = x1.R;
  const double dt = -1.0 / k_steps;
  if (trace) trace->push_back(x);
  for (int k = 0; k < k_steps; ++k) {
    const double t = 1.0 - static_cast<double>(k) / k_steps;
    x = heun_step(field, box, x, t, dt);
    if ((x.R.transpose() * x.R - Mat3::Identity()).norm() > 1e-9) {
      x.R = project_to_so3(x.R);
    }
    if (trace) trace->push_back(x);
  }
  return x;
}

Pose heun_step(const FieldParams& params, const SystemSpec& sys, const Pose& pose,
               double t, double dt, const SampleConfig& cfg, RotHead rot_head) {
  const VelocityFn field = [&](const Pose& p, double tt) {
    const GraphInput g = build_graph(sys, FullPose{p.t, sys.z_init, p.R},
                                     params.cfg.r_cut, params.cfg.max_neighbors);
    return cfg_velocity(params, g, tt, cfg.e_rel_target, cfg.guidance_w, rot_head);
  };
  return heun_step(field, sys.box, pose, t, dt);
}

Pose integrate(const FieldParams& params, const SystemSpec& sys, const Pose& x1,
               const SampleConfig& cfg, RotHead rot_head, std::vector<Pose>* trace) {
  cfg.validate();
  const VelocityFn field = [&](const Pose& p, double tt) {
    const GraphInput g = build_graph(sys, FullPose{p.t, sys.z_init, p.R},
                                     params.cfg.r_cut, params.cfg.max_neighbors);
    return cfg_velocity(params, g, tt, cfg.e_rel_target, cfg.guidance_w, rot_head);
  };
  return integrate_field(field, sys.box, x1, cfg.k_steps, trace);
}

}  // namespace rigidflow
