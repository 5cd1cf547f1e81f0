// Copyright (C) 2026 rigidflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// rigidflow command-line driver: gen-dataset, train, sample, eval.
// Exit codes: 0 success, 2 validation, 3 numerical failure, 4 I/O.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "rigidflow/config.hpp"
#include "rigidflow/io.hpp"
#include "rigidflow/parallel.hpp"

namespace rf = rigidflow;

namespace {

struct CommonArgs {
  std::string config_path;
  bool print_config = false;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
};

rf::RunConfig resolve_config(const CommonArgs& args) {
  rf::RunConfig cfg;
  if (!args.config_path.empty()) cfg = rf::load_run_config(args.config_path);
  if (args.seed) cfg.seed = *args.seed;
  if (args.jobs) cfg.jobs = *args.jobs;
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "Config file (key = value sections)");
  cmd->add_flag("--print-config", args.print_config,
                "Print the effective configuration and exit");
  cmd->add_option("--seed", args.seed, "Override the global seed");
  cmd->add_option("--jobs", args.jobs, "Worker threads (0 = hardware)");
}

int maybe_print_config(const CommonArgs& args, const rf::RunConfig& cfg) {
  if (!args.print_config) return -1;
  std::cout << rf::config_to_text(cfg);
  return 0;
}

std::vector<int> k_levels_for(int n_seeds) {
  std::vector<int> ks;
  for (int k : {1, 2, 5, 10}) {
    if (k <= n_seeds) ks.push_back(k);
  }
  if (ks.empty() || ks.back() != n_seeds) ks.push_back(n_seeds);
  return ks;
}

int cmd_gen_dataset(const CommonArgs& common, const std::string& out_path) {
  const rf::RunConfig cfg = resolve_config(common);
  if (int rc = maybe_print_config(common, cfg); rc >= 0) return rc;

  rf::EnumerateConfig ecfg = cfg.dataset.enumerate;
  ecfg.relax = cfg.relax;
  ecfg.jobs = 1;  // parallelism across systems below

  const int want = cfg.dataset.n_systems;
  const int max_attempts = 10 * want;
  rf::Dataset data;
  int attempt = 0;
  while (static_cast<int>(data.size()) < want && attempt < max_attempts) {
    const int chunk = std::min(want, max_attempts - attempt);
    std::vector<std::optional<rf::DatasetEntry>> slot(chunk);
    rf::parallel_for(chunk, cfg.effective_jobs(), [&](int i) {
      const std::uint64_t sys_seed =
          rf::hash_combine(cfg.seed, static_cast<std::uint64_t>(attempt + i));
      rf::DatasetEntry entry;
      entry.system = rf::generate_system(cfg.scene, sys_seed);
      try {
        entry.minima = rf::enumerate_minima(entry.system, ecfg);
      } catch (const rf::NoMinimaFoundError&) {
        return;  // drop this system
      }
      if (static_cast<int>(entry.minima.minima.size()) >= cfg.dataset.min_minima) {
        slot[i] = std::move(entry);
      }
    });
    for (auto& s : slot) {
      if (s && static_cast<int>(data.size()) < want) data.push_back(std::move(*s));
    }
    attempt += chunk;
  }
  if (static_cast<int>(data.size()) < want) {
    throw rf::InvalidConfigError("gen-dataset: only " + std::to_string(data.size()) + " of " +
                                 std::to_string(want) + " systems met min_minima after " +
                                 std::to_string(max_attempts) + " attempts");
  }

  rf::write_dataset(out_path, data);

  std::size_t total_minima = 0;
  double emin_lo = std::numeric_limits<double>::infinity();
  double emin_hi = -std::numeric_limits<double>::infinity();
  for (const auto& e : data) {
    total_minima += e.minima.minima.size();
    emin_lo = std::min(emin_lo, e.minima.e_min);
    emin_hi = std::max(emin_hi, e.minima.e_min);
  }
  std::printf("wrote %zu systems, %zu minima (%.1f per system), e_min range [%.4f, %.4f] -> %s\n",
              data.size(), total_minima, double(total_minima) / double(data.size()),
              emin_lo, emin_hi, out_path.c_str());
  return 0;
}

int cmd_train(const CommonArgs& common, const std::string& dataset_path,
              const std::string& out_path, const std::string& log_path_opt,
              const std::string& resume_path) {
  rf::RunConfig cfg = resolve_config(common);
  if (int rc = maybe_print_config(common, cfg); rc >= 0) return rc;
  cfg.train.jobs = cfg.effective_jobs();

  const rf::Dataset data = rf::read_dataset(dataset_path);
  const std::string log_path = log_path_opt.empty() ? out_path + ".log.csv" : log_path_opt;

  rf::TrainState state;
  if (!resume_path.empty()) {
    rf::Checkpoint ckpt = rf::load_checkpoint(resume_path);
    state.params = std::move(ckpt.params);
    state.adam = std::move(ckpt.adam);
    state.step = ckpt.step;
    cfg.train.rot_head = ckpt.rot_head;
    cfg.train.seed = ckpt.seed;
  } else {
    state = rf::init_train_state(data, cfg.model, cfg.train);
  }

  std::ofstream log(log_path, resume_path.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw rf::IoError("cannot open training log: " + log_path);
  if (resume_path.empty()) log << "step,total_loss,trans_loss,rot_loss,wall_ms\n";

  rf::TrainHooks hooks;
  hooks.on_step = [&](int step, const rf::StepStats& s, double ms) {
    log << step << "," << rf::format_double(s.total) << "," << rf::format_double(s.trans)
        << "," << rf::format_double(s.rot) << "," << rf::format_double(ms) << "\n";
    if ((step + 1) % 200 == 0 || step == 0) {
      std::printf("step %6d  loss %.6f  (trans %.6f  rot %.6f)\n", step, s.total, s.trans,
                  s.rot);
    }
  };
  hooks.on_checkpoint = [&](const rf::TrainState& st) {
    rf::Checkpoint ckpt{st.params, st.adam, st.step, cfg.train.seed, cfg.train.rot_head};
    rf::save_checkpoint(out_path, ckpt);
  };

  rf::train_continue(state, data, cfg.train, hooks);
  rf::Checkpoint ckpt{state.params, state.adam, state.step, cfg.train.seed,
                      cfg.train.rot_head};
  rf::save_checkpoint(out_path, ckpt);
  std::printf("trained to step %d -> %s (log: %s)\n", state.step, out_path.c_str(),
              log_path.c_str());
  return 0;
}

int cmd_sample(const CommonArgs& common, const std::string& ckpt_path,
               const std::string& dataset_path, const std::string& system_id, int n_seeds,
               std::optional<int> k_steps, std::optional<double> guidance,
               std::optional<double> e_rel_target, const std::string& out_path, bool trace) {
  rf::RunConfig cfg = resolve_config(common);
  if (int rc = maybe_print_config(common, cfg); rc >= 0) return rc;
  if (k_steps) cfg.sample.k_steps = *k_steps;
  if (guidance) cfg.sample.guidance_w = *guidance;
  if (e_rel_target) cfg.sample.e_rel_target = *e_rel_target;
  cfg.sample.validate();

  const rf::Checkpoint ckpt = rf::load_checkpoint(ckpt_path);
  const rf::Dataset data = rf::read_dataset(dataset_path);

  std::vector<rf::CandidateRecord> records;
  std::vector<std::vector<rf::Pose>> traces;
  for (const auto& entry : data) {
    if (!system_id.empty() && entry.system.system_id != system_id) continue;
    for (int i = 0; i < n_seeds; ++i) {
      rf::Rng rng(rf::candidate_seed(cfg.seed, entry.system.system_id, i));
      const rf::Pose x1 = rf::sample_prior(entry.system, rng);
      std::vector<rf::Pose> step_trace;
      rf::CandidateRecord rec;
      rec.system_id = entry.system.system_id;
      rec.seed_index = i;
      rec.generated = rf::integrate(ckpt.params, entry.system, x1, cfg.sample, ckpt.rot_head,
                                    trace ? &step_trace : nullptr);
      rec.relax = rf::relax(entry.system,
                            rf::FullPose{rec.generated.t, entry.system.z_init, rec.generated.R},
                            cfg.relax);
      records.push_back(std::move(rec));
      if (trace) traces.push_back(std::move(step_trace));
    }
  }
  if (records.empty()) {
    throw rf::InvalidConfigError("sample: no matching system" +
                                 (system_id.empty() ? "" : " '" + system_id + "'"));
  }
  rf::write_samples_jsonl(out_path, records, trace ? &traces : nullptr);
  std::printf("wrote %zu candidates -> %s\n", records.size(), out_path.c_str());
  return 0;
}

int cmd_eval(const CommonArgs& common, const std::string& ckpt_path,
             const std::string& dataset_path, std::optional<int> n_seeds,
             std::optional<int> k_steps, std::optional<double> guidance,
             std::optional<double> tol, bool grid, const std::string& grid_w,
             const std::string& grid_k, bool baseline, const std::string& out_json,
             const std::string& out_csv, const std::string& k_levels) {
  rf::RunConfig cfg = resolve_config(common);
  if (int rc = maybe_print_config(common, cfg); rc >= 0) return rc;

  const rf::Checkpoint ckpt = rf::load_checkpoint(ckpt_path);
  const rf::Dataset data = rf::read_dataset(dataset_path);

  rf::PipelineConfig pcfg;
  pcfg.n_seeds = n_seeds.value_or(cfg.eval.n_seeds);
  pcfg.tol = tol.value_or(cfg.eval.tol);
  pcfg.base_seed = cfg.seed;
  pcfg.baseline = baseline || cfg.eval.baseline;
  pcfg.jobs = cfg.effective_jobs();
  pcfg.sample = cfg.sample;
  if (k_steps) pcfg.sample.k_steps = *k_steps;
  if (guidance) pcfg.sample.guidance_w = *guidance;
  pcfg.relax = cfg.relax;
  pcfg.k_levels = k_levels_for(pcfg.n_seeds);
  if (!k_levels.empty()) {
    pcfg.k_levels.clear();
    std::stringstream ss(k_levels);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) pcfg.k_levels.push_back(std::stoi(item));
    }
  }

  auto parse_list = [](const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) out.push_back(std::stod(item));
    }
    return out;
  };

  std::vector<rf::GridCell> cells;
  if (grid) {
    std::vector<double> w_set = parse_list(grid_w);
    std::vector<int> k_set;
    for (double k : parse_list(grid_k)) k_set.push_back(static_cast<int>(k));
    cells = rf::grid_search(ckpt.params, data, w_set, k_set, pcfg, ckpt.rot_head);
  } else {
    rf::GridCell cell;
    cell.k_steps = pcfg.sample.k_steps;
    cell.w = pcfg.sample.guidance_w;
    cell.report = rf::evaluate(ckpt.params, data, pcfg, ckpt.rot_head);
    cells.push_back(std::move(cell));
  }

  if (!out_json.empty()) {
    if (cells.size() == 1) {
      rf::write_report_json(out_json, cells.front().report);
    } else {
      // one JSON report per cell, suffixed _K<k>_w<w>
      for (const auto& cell : cells) {
        std::string p = out_json;
        const auto dot = p.rfind(".json");
        const std::string suffix =
            "_K" + std::to_string(cell.k_steps) + "_w" + rf::format_double(cell.w);
        if (dot != std::string::npos) p.insert(dot, suffix);
        else p += suffix;
        rf::write_report_json(p, cell.report);
      }
    }
  }
  if (!out_csv.empty()) rf::write_grid_csv(out_csv, cells);

  for (const auto& cell : cells) {
    std::printf("K=%d w=%g:", cell.k_steps, cell.w);
    for (int k : cell.report.k_levels) {
      std::printf("  SR@%d=%.1f%%", k, 100.0 * cell.report.sr_at_k.at(k));
    }
    std::printf("  anom@%d=%.1f%%  mean|dE|=%.4f\n", cell.report.k_levels.back(),
                100.0 * cell.report.anom_at_k.at(cell.report.k_levels.back()),
                cell.report.mean_abs_delta_e);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rigidflow: energy-conditioned flow matching for rigid-body placement"};
  app.require_subcommand(1);

  CommonArgs gen_common, train_common, sample_common, eval_common;

  auto* gen = app.add_subcommand("gen-dataset", "Generate systems and enumerate their minima");
  std::string gen_out;
  add_common(gen, gen_common);
  gen->add_option("--out", gen_out, "Output dataset file")->required();

  auto* train = app.add_subcommand("train", "Train the vector field on a dataset");
  std::string train_dataset, train_out, train_log, train_resume;
  add_common(train, train_common);
  train->add_option("--dataset", train_dataset, "Dataset file")->required();
  train->add_option("--out", train_out, "Checkpoint output path")->required();
  train->add_option("--log", train_log, "Training log path (default <out>.log.csv)");
  train->add_option("--resume", train_resume, "Resume from an existing checkpoint");

  auto* sample = app.add_subcommand("sample", "Integrate candidates from a checkpoint");
  std::string sample_ckpt, sample_dataset, sample_system, sample_out = "samples.jsonl";
  int sample_seeds = 10;
  std::optional<int> sample_k;
  std::optional<double> sample_w, sample_erel;
  bool sample_trace = false;
  add_common(sample, sample_common);
  sample->add_option("--checkpoint", sample_ckpt, "Checkpoint path")->required();
  sample->add_option("--dataset", sample_dataset, "Dataset file")->required();
  sample->add_option("--system", sample_system, "Restrict to one system id");
  sample->add_option("--seeds", sample_seeds, "Candidates per system");
  sample->add_option("--k-steps", sample_k, "Integration steps K");
  sample->add_option("--guidance", sample_w, "Guidance scale w");
  sample->add_option("--e-rel-target", sample_erel, "Conditioning value at inference");
  sample->add_option("--out", sample_out, "Output JSONL path");
  sample->add_flag("--trace", sample_trace, "Record the per-step pose trace");

  auto* eval = app.add_subcommand("eval", "Run the generate-relax-screen evaluation");
  std::string eval_ckpt, eval_dataset, eval_json = "report.json", eval_csv = "report.csv";
  std::optional<int> eval_seeds, eval_k;
  std::optional<double> eval_w, eval_tol;
  bool eval_grid = false, eval_baseline = false;
  std::string eval_grid_w = "0,1,3,5,7,10", eval_grid_k = "5,10,30", eval_k_levels;
  add_common(eval, eval_common);
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint path")->required();
  eval->add_option("--dataset", eval_dataset, "Dataset file")->required();
  eval->add_option("--seeds", eval_seeds, "Candidates per system (N)");
  eval->add_option("--k-steps", eval_k, "Integration steps K");
  eval->add_option("--guidance", eval_w, "Guidance scale w");
  eval->add_option("--tol", eval_tol, "Success tolerance vs e_min");
  eval->add_option("--k-levels", eval_k_levels, "SR@k levels, comma separated (default 1,2,5,10 capped at N)");
  eval->add_flag("--grid", eval_grid, "Run the w x K grid search");
  eval->add_option("--grid-w", eval_grid_w, "Grid guidance values, comma separated");
  eval->add_option("--grid-k", eval_grid_k, "Grid step counts, comma separated");
  eval->add_flag("--baseline", eval_baseline, "Random-placement arm (skip integration)");
  eval->add_option("--out", eval_json, "Report JSON path");
  eval->add_option("--table", eval_csv, "Flat table CSV path");

  try {
    app.parse(argc, argv);
    if (gen->parsed()) return cmd_gen_dataset(gen_common, gen_out);
    if (train->parsed())
      return cmd_train(train_common, train_dataset, train_out, train_log, train_resume);
    if (sample->parsed())
      return cmd_sample(sample_common, sample_ckpt, sample_dataset, sample_system,
                        sample_seeds, sample_k, sample_w, sample_erel, sample_out,
                        sample_trace);
    if (eval->parsed())
      return cmd_eval(eval_common, eval_ckpt, eval_dataset, eval_seeds, eval_k, eval_w,
                      eval_tol, eval_grid, eval_grid_w, eval_grid_k, eval_baseline, eval_json,
                      eval_csv, eval_k_levels);
    return 2;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const rf::NonFiniteError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 3;
  } catch (const rf::IoError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return 4;
  } catch (const rf::SchemaError& e) {
    std::fprintf(stderr, "schema error: %s\n", e.what());
    return 2;
  } catch (const rf::InvalidConfigError& e) {
    std::fprintf(stderr, "invalid configuration: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
