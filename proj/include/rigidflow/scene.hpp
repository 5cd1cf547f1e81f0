// Copyright (C) 2026 rigidflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic slab-adsorbate systems: procedural generation, an analytic
// periodic pair energy with exact gradients and torques, rigid-pose
// relaxation, and dense-minima enumeration.

#pragma once

#include <string>
#include <vector>

#include "rigidflow/manifold.hpp"
#include "rigidflow/rng.hpp"
#include "rigidflow/types.hpp"

namespace rigidflow {

struct Atom {
  Vec3 pos;     // slab: absolute position; adsorbate: offset from the COM
  int species;  // index into the pair-parameter tables
};

struct SystemSpec {
  std::string system_id;
  std::vector<Atom> slab_atoms;
  std::vector<Atom> adsorbate;  // COM-centered template (offsets sum to zero)
  Vec2 box;                     // periods (L_x, L_y)
  Mat eps_table;                // symmetric, n_species x n_species, energy units
  Mat sigma_table;              // symmetric, n_species x n_species, length units
  double z_init = 0.0;          // COM height for fresh placements

  int n_species() const { return static_cast<int>(eps_table.rows()); }
  double z_surface() const;   // max slab-atom z
  double sigma_max() const;
};

/// In-plane COM translation, COM height, and rotation about the COM.
struct FullPose {
  Vec2 t;
  double z = 0.0;
  Mat3 R = Mat3::Identity();
};

/// Adsorbate atom positions for a pose: R * offset + (t_x, t_y, z).
std::vector<Vec3> adsorbate_positions(const SystemSpec& sys, const FullPose& pose);

struct Minimum {
  FullPose pose;
  double energy = 0.0;
  double e_rel = 0.0;  // energy - e_min, >= 0
};

struct MinimaSet {
  std::string system_id;
  std::vector<Minimum> minima;  // sorted ascending by energy
  double e_min = 0.0;
};

enum class Anomaly { None, Desorbed, Diverged };

std::string to_string(Anomaly a);
Anomaly anomaly_from_string(const std::string& s);

struct RelaxResult {
  FullPose pose;
  double energy = 0.0;
  bool converged = false;
  int n_steps = 0;
  Anomaly anomaly = Anomaly::None;
};

struct SceneConfig {
  int cells_x = 6;          // surface cells per box edge
  int cells_y = 6;
  double spacing = 1.0;     // lattice constant; box = cells * spacing
  double layer_gap = 0.8;   // z distance between the two slab layers
  int n_species = 3;
  int ads_atoms_min = 2;    // adsorbate template size range
  int ads_atoms_max = 4;
  double ads_radius = 0.7;  // template offsets drawn within this radius
  double eps_min = 0.4;     // pair well depths
  double eps_max = 1.6;
  double sigma_min = 0.9;   // pair radii
  double sigma_max = 1.1;
  bool fixed_pair_table = false;  // deterministic species-pair grid instead of
                                  // per-system random draws; gives species ids a
                                  // consistent energetic meaning across systems
  double jitter = 0.03;     // slab position noise, fraction of spacing
  double z_init_factor = 1.5;  // z_init = z_surface + factor * max sigma

  void validate() const;  // throws InvalidConfigError
};

/// Deterministic in (config, seed). Slab is a two-layer periodic lattice with
/// the second layer offset by half a cell.
SystemSpec generate_system(const SceneConfig& cfg, std::uint64_t seed);

/// Total adsorbate-slab pair energy: Lennard-Jones with minimal image in x,y,
/// cut at r_c = min(L)/2 and shifted to zero there. Distances below 0.3 sigma
/// are evaluated by linear extrapolation from r = 0.3 sigma so pathological
/// starts stay finite.
double energy(const SystemSpec& sys, const FullPose& pose);

struct ForceTorque {
  Vec2 f_xy = Vec2::Zero();   // -dE/d(t_x, t_y)
  double f_z = 0.0;           // -dE/dz
  Vec3 torque = Vec3::Zero(); // sum of (r_a - r_COM) x F_a, space frame

  double max_abs() const;
};

ForceTorque force_torque(const SystemSpec& sys, const FullPose& pose);

struct RelaxConfig {
  int max_steps = 200;
  double ftol = 1e-3;            // max |force or torque component|
  double z_desorb_factor = 6.0;  // desorbed if z - z_surface > factor * max sigma
  int history = 8;               // quasi-Newton memory
  double max_step = 0.5;         // trust cap on a single move (length/rad)
};

/// Quasi-Newton descent over (t_x, t_y, z, rotation), the rotation advanced
/// through the exp map in the chart at the current iterate.
RelaxResult relax(const SystemSpec& sys, const FullPose& start,
                  const RelaxConfig& cfg = {});

struct EnumerateConfig {
  int grid_density = 6;    // (t_x, t_y) starts per box period, >= 4
  int n_rot = 4;           // Haar rotations per grid start, plus identity
  std::uint64_t rot_seed = 12345;
  double dedup_dist = 0.25;    // torus distance, units of max sigma
  double dedup_angle = 0.15;   // geodesic angle, rad
  double dedup_energy = 1e-3;  // |dE|, energy units
  int jobs = 1;
  RelaxConfig relax;
};

/// Relax a grid x rotation set of starts, deduplicate converged results, and
/// label relative energies. Throws NoMinimaFoundError if every start is
/// anomalous or unconverged. Deterministic for every jobs value.
MinimaSet enumerate_minima(const SystemSpec& sys, const EnumerateConfig& cfg = {});

}  // namespace rigidflow
