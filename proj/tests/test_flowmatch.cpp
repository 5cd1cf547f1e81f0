// Copyright (C) 2026 rigidflow contributors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rigidflow/flowmatch.hpp"

using namespace rigidflow;

namespace {

Dataset toy_dataset(int n_systems, int first_seed = 500, int keep_minima = 0) {
  SceneConfig sc;
  sc.cells_x = 3;
  sc.cells_y = 3;
  sc.n_species = 2;
  sc.ads_atoms_min = 3;
  sc.ads_atoms_max = 3;
  sc.jitter = 0.04;
  sc.z_init_factor = 1.2;
  EnumerateConfig ec;
  ec.grid_density = 4;
  ec.n_rot = 2;
  Dataset data;
  int seed = first_seed;
  while (static_cast<int>(data.size()) < n_systems) {
    DatasetEntry entry;
    entry.system = generate_system(sc, seed++);
    entry.minima = enumerate_minima(entry.system, ec);
    if (keep_minima > 0) {
      if (static_cast<int>(entry.minima.minima.size()) < keep_minima) continue;
      entry.minima.minima.resize(keep_minima);
      for (auto& m : entry.minima.minima) m.e_rel = m.energy - entry.minima.e_min;
    }
    data.push_back(std::move(entry));
  }
  return data;
}

FieldConfig toy_field() {
  FieldConfig fc;
  fc.n_species = 4;
  fc.scalar_channels = 16;
  fc.vector_channels = 16;
  fc.n_rbf = 8;
  fc.n_layers = 2;
  fc.r_cut = 2.0;
  fc.max_neighbors = 16;
  fc.time_dim = 8;
  fc.cond_dim = 16;
  return fc;
}

}  // namespace

TEST_CASE("make_pair: determinism, labels, uniform prior translation") {
  const Dataset data = toy_dataset(1);
  const SystemSpec& sys = data[0].system;
  const MinimaSet& minima = data[0].minima;

  Rng a(3), b(3);
  const TrainingPair p1 = make_pair(sys, minima, a);
  const TrainingPair p2 = make_pair(sys, minima, b);
  CHECK((p1.x0.t - p2.x0.t).norm() == 0.0);
  CHECK((p1.x1.t - p2.x1.t).norm() == 0.0);
  CHECK((p1.x1.R - p2.x1.R).norm() == 0.0);
  CHECK(p1.e_rel == p2.e_rel);

  // single-minimum set always yields that minimum with e_rel = 0
  MinimaSet single = minima;
  single.minima.resize(1);
  Rng c(9);
  for (int i = 0; i < 20; ++i) {
    const TrainingPair p = make_pair(sys, single, c);
    CHECK(p.e_rel == 0.0);
    CHECK((p.x0.t - single.minima[0].pose.t).norm() == 0.0);
  }

  MinimaSet empty;
  CHECK_THROWS_AS(make_pair(sys, empty, c), EmptyMinimaError);

  // chi-squared uniformity of the x1 translation over an 8x8 histogram
  Rng d(1);
  const int n = 10000;
  const int bins = 8;
  std::vector<int> hist(bins * bins, 0);
  for (int i = 0; i < n; ++i) {
    const TrainingPair p = make_pair(sys, minima, d);
    const int bx = std::min(bins - 1, int(p.x1.t.x() / sys.box.x() * bins));
    const int by = std::min(bins - 1, int(p.x1.t.y() / sys.box.y() * bins));
    hist[bx * bins + by]++;
  }
  const double expected = double(n) / (bins * bins);
  double chi2 = 0.0;
  for (int h : hist) chi2 += (h - expected) * (h - expected) / expected;
  // 99th percentile of chi-squared with 63 dof
  CHECK(chi2 < 92.05);
}

TEST_CASE("interpolate: endpoints, half-way advance, finite-difference consistency") {
  const Dataset data = toy_dataset(1);
  const SystemSpec& sys = data[0].system;
  Rng rng(17);
  const TrainingPair pair = make_pair(data[0].system, data[0].minima, rng);

  const Pose at0 = interpolate(pair, 0.0, sys.box);
  CHECK((at0.t - wrap_vec(pair.x0.t, sys.box)).norm() < 1e-12);
  CHECK((at0.R - pair.x0.R).norm() < 1e-12);
  const Pose at1 = interpolate(pair, 1.0, sys.box);
  CHECK(torus_displacement({at1.t, sys.box}, {wrap_vec(pair.x1.t, sys.box), sys.box}).norm() <
        1e-12);
  CHECK((at1.R - pair.x1.R).norm() < 1e-12);

  // constructed pair with displacement (1, 0)
  TrainingPair straight = pair;
  straight.x0.t = Vec2(0.5, 0.5);
  straight.x1.t = Vec2(1.5, 0.5);
  const Pose mid = interpolate(straight, 0.5, sys.box);
  CHECK((mid.t - Vec2(1.0, 0.5)).norm() < 1e-12);

  // x_{t+h} = x_t + h * (teacher) + O(h^2)
  const auto [td, om] = teacher_velocity(pair, sys.box);
  const double h = 1e-5;
  for (double t : {0.2, 0.5, 0.8}) {
    const Pose a = interpolate(pair, t, sys.box);
    const Pose b = interpolate(pair, t + h, sys.box);
    CHECK((torus_displacement({a.t, sys.box}, {b.t, sys.box}) - h * td).norm() < 1e-9);
    const Mat3 drdt_fd = (b.R - a.R) / h;
    CHECK((drdt_fd - hat(om) * a.R).norm() < 1e-4);
  }
}

TEST_CASE("teacher_velocity: zero pair, rot-only pair, t-independence") {
  const Dataset data = toy_dataset(1);
  const Vec2 box = data[0].system.box;
  Rng rng(21);

  TrainingPair pair = make_pair(data[0].system, data[0].minima, rng);
  pair.x1 = pair.x0;
  auto [td0, om0] = teacher_velocity(pair, box);
  CHECK(td0.norm() < 1e-14);
  CHECK(om0.norm() < 1e-14);

  TrainingPair rot = pair;
  rot.x0.t = rot.x1.t = Vec2(1, 1);
  rot.x0.R = Mat3::Identity();
  Mat3 rz;
  rz << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  rot.x1.R = rz;
  auto [td1, om1] = teacher_velocity(rot, box);
  CHECK(td1.norm() == 0.0);
  CHECK((om1 - Vec3(0, 0, M_PI / 2)).norm() < 1e-12);

  // the teacher is a pure function of the pair (no t anywhere)
  const TrainingPair p2 = make_pair(data[0].system, data[0].minima, rng);
  const auto v1 = teacher_velocity(p2, box);
  const auto v2 = teacher_velocity(p2, box);
  CHECK((v1.first - v2.first).norm() == 0.0);
  CHECK((v1.second - v2.second).norm() == 0.0);
}

TEST_CASE("training_step: dropout accounting and determinism") {
  const Dataset data = toy_dataset(2);
  const FieldConfig fc = toy_field();

  TrainConfig tc;
  tc.batch_size = 8;
  tc.steps = 3;
  tc.seed = 5;
  tc.p_cfg = 1.0 - 1e-12;  // force the null path on (almost surely) every draw
  TrainState st = init_train_state(data, fc, tc);
  const StepStats s = training_step(st, data, tc);
  CHECK(s.n_null == tc.batch_size);

  // two runs with the same seed produce bit-identical loss trajectories
  tc.p_cfg = 0.2;
  TrainState s1 = init_train_state(data, fc, tc);
  TrainState s2 = init_train_state(data, fc, tc);
  for (int i = 0; i < 3; ++i) {
    const StepStats a = training_step(s1, data, tc);
    const StepStats b = training_step(s2, data, tc);
    CHECK(a.total == b.total);
  }
  for (std::size_t k = 0; k < s1.params.store.tensors.size(); ++k) {
    CHECK((s1.params.store.tensors[k] - s2.params.store.tensors[k]).norm() == 0.0);
  }

  // empirical null fraction over 1e4 draws stays within 3 sigma of p_cfg;
  // a minimal network keeps the 625 steps cheap
  FieldConfig drop_fc = fc;
  drop_fc.scalar_channels = drop_fc.vector_channels = drop_fc.cond_dim = 8;
  drop_fc.n_layers = 1;
  drop_fc.n_rbf = 4;
  TrainConfig tdrop = tc;
  tdrop.p_cfg = 0.2;
  tdrop.batch_size = 16;
  TrainState sd = init_train_state(data, drop_fc, tdrop);
  int nulls = 0, total = 0;
  for (int i = 0; i < 625; ++i) {
    nulls += training_step(sd, data, tdrop).n_null;
    total += tdrop.batch_size;
  }
  const double frac = double(nulls) / total;
  const double sigma = std::sqrt(0.2 * 0.8 / total);
  CHECK(std::abs(frac - 0.2) < 3.0 * sigma);
}

TEST_CASE("train: zero steps returns init; loss decreases on a toy set") {
  const Dataset data = toy_dataset(2);
  const FieldConfig fc = toy_field();

  TrainConfig tc;
  tc.steps = 0;
  tc.seed = 7;
  const TrainState init = train(data, tc, fc);
  const TrainState fresh = init_train_state(data, fc, tc);
  for (std::size_t k = 0; k < init.params.store.tensors.size(); ++k) {
    CHECK((init.params.store.tensors[k] - fresh.params.store.tensors[k]).norm() == 0.0);
  }

  // smoke training: 2000 steps cut the loss to a fraction of its starting
  // value on a 2-system toy set (threshold frozen from the reference run of
  // this exact configuration, which reaches ~0.15)
  const Dataset smoke = toy_dataset(2, 500, /*keep_minima=*/1);
  FieldConfig sfc;
  sfc.n_species = 4;
  sfc.scalar_channels = 24;
  sfc.vector_channels = 24;
  sfc.n_rbf = 12;
  sfc.n_layers = 2;
  sfc.r_cut = 2.6;
  sfc.max_neighbors = 24;
  sfc.time_dim = 16;
  sfc.cond_dim = 24;
  sfc.e_max = 1.5;
  TrainConfig tc2;
  tc2.steps = 2000;
  tc2.batch_size = 16;
  tc2.lr = 1e-2;
  tc2.beta2 = 0.99;
  tc2.p_cfg = 0.05;
  tc2.seed = 11;
  tc2.jobs = 2;
  TrainState st = init_train_state(smoke, sfc, tc2);
  double first_window = 0.0, last_window = 0.0;
  int step_count = 0;
  TrainHooks hooks;
  hooks.on_step = [&](int step, const StepStats& s, double) {
    if (step < 10) first_window += s.total / 10.0;
    if (step >= tc2.steps - 100) last_window += s.total / 100.0;
    ++step_count;
  };
  train_continue(st, smoke, tc2, hooks);
  CHECK(step_count == 2000);
  CHECK(last_window < 0.30 * first_window);
}

TEST_CASE("step-hashed randomness makes interrupted training bit-exact") {
  const Dataset data = toy_dataset(2);
  const FieldConfig fc = toy_field();
  TrainConfig tc;
  tc.steps = 12;
  tc.batch_size = 4;
  tc.seed = 13;

  const TrainState full = train(data, tc, fc);

  // stop at step 5, "resume" from a copied state, continue to 12
  TrainConfig tc5 = tc;
  tc5.steps = 5;
  TrainState part = train(data, tc5, fc);
  train_continue(part, data, tc);

  CHECK(part.step == full.step);
  for (std::size_t k = 0; k < full.params.store.tensors.size(); ++k) {
    CHECK((part.params.store.tensors[k] - full.params.store.tensors[k]).norm() == 0.0);
    CHECK((part.adam.m.tensors[k] - full.adam.m.tensors[k]).norm() == 0.0);
    CHECK((part.adam.v.tensors[k] - full.adam.v.tensors[k]).norm() == 0.0);
  }
}
