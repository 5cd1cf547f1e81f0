// Copyright (C) 2026 rigidflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// File formats:
//  - dataset: line-delimited JSON, schema header line first, fixed field
//    order, floats printed with 17 significant digits so re-reads are
//    bit-stable;
//  - checkpoint: schema-versioned binary container of named f64 tensors
//    (row-major, little-endian) plus optimizer moments and the step counter;
//  - reports: machine-readable JSON and a flat CSV table, one row per
//    (w, K) cell.

#pragma once

#include <string>
#include <vector>

#include "rigidflow/flowmatch.hpp"
#include "rigidflow/pipeline.hpp"

namespace rigidflow {

inline constexpr const char* kDatasetSchema = "rigidflow.dataset.v1";
inline constexpr const char* kCheckpointSchema = "rigidflow.checkpoint.v1";
inline constexpr const char* kReportSchema = "rigidflow.report.v1";

/// Shortest-width formatting with 17 significant digits; parses back to the
/// identical double.
std::string format_double(double x);

void write_dataset(const std::string& path, const Dataset& data);
Dataset read_dataset(const std::string& path);

struct Checkpoint {
  FieldParams params;
  AdamState adam;
  int step = 0;
  std::uint64_t seed = 0;
  RotHead rot_head = RotHead::Torque;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

void write_report_json(const std::string& path, const EvalReport& report);

/// Flat table: header then one row per cell with columns
/// k_steps,w,sr@1,sr@2,sr@5,sr@10,anom@max,mean_abs_delta_e (k columns follow
/// the report's k levels).
void write_grid_csv(const std::string& path, const std::vector<GridCell>& cells);

/// Candidate records as JSON lines (system, seed, terminal pose, optional
/// per-step trace).
void write_samples_jsonl(const std::string& path,
                         const std::vector<CandidateRecord>& records,
                         const std::vector<std::vector<Pose>>* traces = nullptr);

}  // namespace rigidflow
