// Copyright (C) 2026 rigidflow contributors
// SPDX-License-Identifier: Apache-2.0
//
// Flat, human-editable configuration: [section] headers and key = value
// lines, '#' comments. Unknown sections or keys are rejected so typos never
// pass silently. Every field has an explicit default and is printable.

#pragma once

#include <string>

#include "rigidflow/fieldnet.hpp"
#include "rigidflow/flowmatch.hpp"
#include "rigidflow/pipeline.hpp"
#include "rigidflow/scene.hpp"

namespace rigidflow {

struct DatasetGenConfig {
  int n_systems = 100;
  int min_minima = 2;  // discard generated systems with fewer minima
  EnumerateConfig enumerate;
};

struct EvalConfig {
  int n_seeds = 10;
  double tol = 0.1;
  bool baseline = false;
};

struct RunConfig {
  std::uint64_t seed = 0;  // global: system generation and evaluation streams
  int jobs = 0;            // 0 = hardware concurrency
  SceneConfig scene;
  DatasetGenConfig dataset;
  FieldConfig model;
  TrainConfig train;
  SampleConfig sample;
  EvalConfig eval;
  RelaxConfig relax;

  int effective_jobs() const;
  void validate() const;
};

/// Parse a config file over the defaults. Throws InvalidConfigError with the
/// offending line for unknown sections/keys or malformed values.
RunConfig load_run_config(const std::string& path);

/// Apply config-file text to an existing config (used for overrides).
void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin);

/// The full configuration rendered as a parseable config file.
std::string config_to_text(const RunConfig& cfg);

}  // namespace rigidflow
