// Copyright (C) 2026 rigidflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// The learnable conditioned vector field v(x, t | c) -> (t_dot, omega):
// neighbor-graph construction, radial/time/energy embeddings with FiLM
// conditioning and a learned null embedding, scalar+vector message passing,
// a pooled translation head, and two rotation heads (torque aggregation and
// direct pooling), with exact reverse-mode gradients for every parameter.

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "rigidflow/scene.hpp"
#include "rigidflow/tape.hpp"
#include "rigidflow/types.hpp"

namespace rigidflow {

struct GraphInput {
  int n_atoms = 0;
  int n_slab = 0;
  int n_ads = 0;
  std::vector<Vec3> positions;  // slab atoms first, then adsorbate atoms
  std::vector<int> species;
  std::vector<int> tag;            // 0 slab, 1 adsorbate
  std::vector<int> edge_tgt;       // message receiver i
  std::vector<int> edge_src;       // neighbor j
  std::vector<Vec3> edge_vec;      // minimal image r_j - r_i
  std::vector<double> edge_len;
  std::vector<Vec3> ads_offsets;   // R * template offsets (lever arms about the COM)
};

/// Deterministic neighbor graph: per node the max_neighbors nearest others
/// within r_cut (minimal image in x,y), ties broken by atom index.
GraphInput build_graph(const SystemSpec& sys, const FullPose& pose, double r_cut,
                       int max_neighbors);

/// Gaussian radial bases on [0, r_cut] times a cosine cutoff envelope that
/// vanishes (with zero slope) at r_cut.
Vec rbf_embed(double d, double r_cut, int n_rbf);
double envelope(double d, double r_cut);

/// Sinusoidal features of t at geometrically spaced frequencies, sin block
/// then cos block; dim must be even.
Vec time_embed_raw(double t, int dim);

enum class RotHead { Torque, Direct };

std::string to_string(RotHead h);
RotHead rot_head_from_string(const std::string& s);

struct Condition {
  bool is_null = true;
  double e_rel = 0.0;

  static Condition null_cond() { return {}; }
  static Condition energy(double e_rel) { return {false, e_rel}; }
};

struct FieldConfig {
  int n_species = 8;
  int scalar_channels = 64;
  int vector_channels = 64;  // must equal scalar_channels (shared mixing widths)
  int n_rbf = 32;
  int n_layers = 3;
  double r_cut = 3.0;
  int max_neighbors = 50;
  int time_dim = 32;
  int cond_dim = 64;  // energy-embedding output width; the null embedding matches it
  int cond_feat_dim = 16;  // sinusoidal featurization of E_rel ahead of its MLP
  double e_max = 10.0;       // E_rel clip before embedding
  double tik_rel = 1e-4;     // inertia Tikhonov: tik_rel * tr(I)/3 + tik_abs
  double tik_abs = 1e-8;
  double inertia_mass = 1.0; // uniform atom mass entering the inertia tensor

  void validate() const;
};

/// Flat, ordered parameter container; tensor order is the canonical layout
/// used by the optimizer and the checkpoint format.
struct ParamStore {
  std::vector<std::string> names;
  std::vector<Mat> tensors;

  void add(const std::string& name, Mat t);
  int find(const std::string& name) const;  // -1 if absent
  Mat& operator[](const std::string& name);
  const Mat& at(const std::string& name) const;
  std::size_t total_entries() const;
};

struct FieldParams {
  FieldConfig cfg;
  ParamStore store;
};

/// All tensor names and shapes for a config, in canonical order.
std::vector<std::pair<std::string, std::pair<int, int>>> param_shapes(const FieldConfig& cfg);

/// Seeded initialization; saturation scales start at trans_scale (cover the
/// largest translation teacher, e.g. the box diagonal) and rot_scale (pi).
FieldParams init_field_params(const FieldConfig& cfg, std::uint64_t seed,
                              double trans_scale, double rot_scale = M_PI);

struct VelocityOut {
  Vec2 t_dot = Vec2::Zero();
  Vec3 omega = Vec3::Zero();
};

VelocityOut forward(const FieldParams& params, const GraphInput& graph, double t,
                    const Condition& cond, RotHead rot_head);

/// FiLM scale/shift for one message layer under a condition; gamma starts at
/// 1 and beta at 0 because the generator weights are zero-initialized.
std::pair<Vec, Vec> film_condition(const FieldParams& params, const Condition& cond,
                                   int layer);

/// Rigid-body inertia tensor about the COM (no regularizer).
Mat3 inertia_tensor(const std::vector<Vec3>& offsets, const std::vector<double>& masses);

/// Torque-aggregation rotation head on projected per-atom vectors:
/// L = sum r x v, omega = (I + eps)^(-1) L, then radial tanh bound.
Vec3 torque_head(const std::vector<Vec3>& atom_vectors, const std::vector<Vec3>& offsets,
                 const std::vector<double>& masses, double tik_rel, double tik_abs,
                 double scale);

/// Direct pooling rotation head: mean of the per-atom vectors, bounded.
/// Flips sign under point inversion (polar behavior), unlike torque_head.
Vec3 direct_head(const std::vector<Vec3>& atom_vectors, double scale);

struct BatchItem {
  GraphInput graph;
  double t = 0.0;
  Condition cond;
  Vec2 t_dot_teacher = Vec2::Zero();
  Vec3 omega_teacher = Vec3::Zero();
};

struct LossParts {
  double total = 0.0;
  double trans = 0.0;
  double rot = 0.0;
};

/// Mean-squared velocity regression over the batch with rotation weight
/// lambda_rot; grads is overwritten with d loss / d params (canonical order).
/// Deterministic for every jobs value (per-item contributions are summed in
/// batch-index order).
LossParts loss_and_grad(const FieldParams& params, const std::vector<BatchItem>& batch,
                        double lambda_rot, RotHead rot_head, ParamStore& grads,
                        int jobs = 1);

}  // namespace rigidflow
