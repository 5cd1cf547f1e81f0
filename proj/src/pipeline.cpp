// Copyright (C) 2026 rigidflow contributors
// SPDX-License-Identifier: Apache-2.0

#include "rigidflow/pipeline.hpp"

#include <algorithm>
#include <cmath>

#include "rigidflow/parallel.hpp"

namespace rigidflow {

void PipelineConfig::validate() const {
  if (n_seeds < 1) throw InvalidConfigError("pipeline: n_seeds must be >= 1");
  if (tol <= 0.0) throw InvalidConfigError("pipeline: tol must be positive");
  if (k_levels.empty()) throw InvalidConfigError("pipeline: k_levels must be non-empty");
  for (int k : k_levels) {
    if (k < 1 || k > n_seeds) {
      throw InvalidConfigError("pipeline: every k level must satisfy 1 <= k <= n_seeds");
    }
  }
  sample.validate();
}

std::uint64_t candidate_seed(std::uint64_t base_seed, const std::string& system_id,
                             int seed_index) {
  return hash_combine(hash_combine(base_seed, hash_string(system_id)),
                      static_cast<std::uint64_t>(seed_index));
}

std::vector<Pose> generate_candidates(const FieldParams& params, const SystemSpec& sys,
                                      int n, const SampleConfig& cfg, RotHead rot_head,
                                      std::uint64_t base_seed, bool baseline) {
  std::vector<Pose> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    Rng rng(candidate_seed(base_seed, sys.system_id, i));
    const Pose x1 = sample_prior(sys, rng);
    out.push_back(baseline ? x1 : integrate(params, sys, x1, cfg, rot_head));
  }
  return out;
}

std::vector<CandidateRecord> screen(const SystemSpec& sys, const std::vector<Pose>& poses,
                                    const RelaxConfig& cfg) {
  std::vector<CandidateRecord> out;
  out.reserve(poses.size());
  for (std::size_t i = 0; i < poses.size(); ++i) {
    CandidateRecord rec;
    rec.system_id = sys.system_id;
    rec.seed_index = static_cast<int>(i);
    rec.generated = poses[i];
    rec.relax = relax(sys, FullPose{poses[i].t, sys.z_init, poses[i].R}, cfg);
    out.push_back(std::move(rec));
  }
  return out;
}

Selection success_at_k(const std::vector<CandidateRecord>& records, const MinimaSet& minima,
                       int k, double tol) {
  Selection sel;
  for (const auto& rec : records) {
    if (rec.seed_index >= k) continue;
    if (rec.relax.anomaly != Anomaly::None) continue;
    if (sel.selected_seed < 0 || rec.relax.energy < records[sel.selected_seed].relax.energy) {
      sel.selected_seed = rec.seed_index;
    }
  }
  if (sel.selected_seed < 0) {
    sel.all_anomalous = true;
    return sel;
  }
  sel.delta_e = records[sel.selected_seed].relax.energy - minima.e_min;
  sel.success = sel.delta_e <= tol;
  return sel;
}

EvalReport evaluate(const FieldParams& params, const Dataset& data,
                    const PipelineConfig& cfg, RotHead rot_head) {
  cfg.validate();
  if (data.empty()) throw InvalidConfigError("evaluate: dataset is empty");

  EvalReport rep;
  rep.n_seeds = cfg.n_seeds;
  rep.k_steps = cfg.sample.k_steps;
  rep.guidance_w = cfg.sample.guidance_w;
  rep.e_rel_target = cfg.sample.e_rel_target;
  rep.tol = cfg.tol;
  rep.base_seed = cfg.base_seed;
  rep.baseline = cfg.baseline;
  rep.rot_head = to_string(rot_head);
  rep.k_levels = cfg.k_levels;
  rep.systems.resize(data.size());

  parallel_for(static_cast<int>(data.size()), cfg.jobs, [&](int i) {
    const SystemSpec& sys = data[i].system;
    SystemReport sr;
    sr.system_id = sys.system_id;
    const auto poses = generate_candidates(params, sys, cfg.n_seeds, cfg.sample, rot_head,
                                           cfg.base_seed, cfg.baseline);
    sr.candidates = screen(sys, poses, cfg.relax);
    for (int k : cfg.k_levels) {
      sr.at_k[k] = success_at_k(sr.candidates, data[i].minima, k, cfg.tol);
    }
    rep.systems[i] = std::move(sr);
  });

  const double n = static_cast<double>(data.size());
  const int k_max = *std::max_element(cfg.k_levels.begin(), cfg.k_levels.end());
  double abs_de_sum = 0.0;
  int abs_de_count = 0;
  for (int k : cfg.k_levels) {
    int succ = 0, anom = 0;
    for (const auto& sr : rep.systems) {
      const Selection& sel = sr.at_k.at(k);
      if (sel.success) ++succ;
      if (sel.all_anomalous) ++anom;
    }
    rep.sr_at_k[k] = succ / n;
    rep.anom_at_k[k] = anom / n;
  }
  for (const auto& sr : rep.systems) {
    const Selection& sel = sr.at_k.at(k_max);
    if (!sel.all_anomalous) {
      abs_de_sum += std::abs(sel.delta_e);
      ++abs_de_count;
    }
  }
  if (abs_de_count > 0) rep.mean_abs_delta_e = abs_de_sum / abs_de_count;
  return rep;
}

std::vector<GridCell> grid_search(const FieldParams& params, const Dataset& data,
                                  const std::vector<double>& w_set,
                                  const std::vector<int>& k_set,
                                  const PipelineConfig& cfg, RotHead rot_head) {
  if (w_set.empty() || k_set.empty()) {
    throw InvalidConfigError("grid_search: w_set and k_set must be non-empty");
  }
  std::vector<GridCell> cells;
  for (int k_steps : k_set) {
    for (double w : w_set) {
      PipelineConfig cell_cfg = cfg;
      cell_cfg.sample.k_steps = k_steps;
      cell_cfg.sample.guidance_w = w;
      GridCell cell;
      cell.k_steps = k_steps;
      cell.w = w;
      cell.report = evaluate(params, data, cell_cfg, rot_head);
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

}  // namespace rigidflow
