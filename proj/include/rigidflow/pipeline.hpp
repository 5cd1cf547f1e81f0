// Copyright (C) 2026 rigidflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end evaluation: N-seed candidate generation, relaxation and anomaly
// screening, SR@k / anomaly@k aggregation, and the w x K grid search.
// Per-system seeds are derived by hashing (base seed, system id, seed index)
// so adding systems never shifts existing candidates.

#pragma once

#include <map>
#include <string>
#include <vector>

#include "rigidflow/sampler.hpp"

namespace rigidflow {

struct CandidateRecord {
  std::string system_id;
  int seed_index = 0;
  Pose generated;
  RelaxResult relax;
};

struct Selection {
  bool success = false;
  bool all_anomalous = false;
  double delta_e = std::numeric_limits<double>::quiet_NaN();  // selected E - e_min
  int selected_seed = -1;
};

struct PipelineConfig {
  int n_seeds = 10;  // N
  std::vector<int> k_levels = {1, 2, 5, 10};
  double tol = 0.1;
  std::uint64_t base_seed = 0;
  bool baseline = false;  // relax raw prior draws instead of integrating
  int jobs = 1;
  SampleConfig sample;
  RelaxConfig relax;

  void validate() const;
};

std::uint64_t candidate_seed(std::uint64_t base_seed, const std::string& system_id,
                             int seed_index);

/// N independent integrations from hashed per-seed priors. With baseline set
/// the prior draws are returned unintegrated (the enumeration arm).
std::vector<Pose> generate_candidates(const FieldParams& params, const SystemSpec& sys,
                                      int n, const SampleConfig& cfg, RotHead rot_head,
                                      std::uint64_t base_seed, bool baseline = false);

/// Relax every pose from z_init and attach anomaly flags; seed order is
/// preserved.
std::vector<CandidateRecord> screen(const SystemSpec& sys, const std::vector<Pose>& poses,
                                    const RelaxConfig& cfg);

/// Among records with seed < k and no anomaly, select the lowest relaxed
/// energy (ties to the lowest seed); success iff E - e_min <= tol.
Selection success_at_k(const std::vector<CandidateRecord>& records, const MinimaSet& minima,
                       int k, double tol);

struct SystemReport {
  std::string system_id;
  std::vector<CandidateRecord> candidates;
  std::map<int, Selection> at_k;
};

struct EvalReport {
  // config echo
  int n_seeds = 0;
  int k_steps = 0;
  double guidance_w = 0.0;
  double e_rel_target = 0.0;
  double tol = 0.0;
  std::uint64_t base_seed = 0;
  bool baseline = false;
  std::string rot_head;
  std::vector<int> k_levels;

  std::vector<SystemReport> systems;
  std::map<int, double> sr_at_k;    // fraction of systems, in [0, 1]
  std::map<int, double> anom_at_k;  // fraction with all first-k candidates anomalous
  double mean_abs_delta_e =
      std::numeric_limits<double>::quiet_NaN();  // |dE| of the selection at max k
};

/// Fully deterministic in (params, dataset, config); systems evaluated
/// concurrently and merged in dataset order.
EvalReport evaluate(const FieldParams& params, const Dataset& data,
                    const PipelineConfig& cfg, RotHead rot_head);

struct GridCell {
  int k_steps = 0;
  double w = 0.0;
  EvalReport report;
};

/// One evaluate per (w, K) cell with a shared base seed.
std::vector<GridCell> grid_search(const FieldParams& params, const Dataset& data,
                                  const std::vector<double>& w_set,
                                  const std::vector<int>& k_set,
                                  const PipelineConfig& cfg, RotHead rot_head);

}  // namespace rigidflow
