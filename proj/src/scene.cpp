// Copyright (C) 2026 rigidflow contributors
// SPDX-License-Identifier: Apache-2.0

#include "rigidflow/scene.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include "rigidflow/parallel.hpp"

namespace rigidflow {

double SystemSpec::z_surface() const {
  double z = -std::numeric_limits<double>::infinity();
  for (const auto& a : slab_atoms) z = std::max(z, a.pos.z());
  return z;
}

double SystemSpec::sigma_max() const { return sigma_table.maxCoeff(); }

std::vector<Vec3> adsorbate_positions(const SystemSpec& sys, const FullPose& pose) {
  std::vector<Vec3> out;
  out.reserve(sys.adsorbate.size());
  const Vec3 com(pose.t.x(), pose.t.y(), pose.z);
  for (const auto& a : sys.adsorbate) out.push_back(pose.R * a.pos + com);
  return out;
}

std::string to_string(Anomaly a) {
  switch (a) {
    case Anomaly::None: return "none";
    case Anomaly::Desorbed: return "desorbed";
    case Anomaly::Diverged: return "diverged";
  }
  return "none";
}

Anomaly anomaly_from_string(const std::string& s) {
  if (s == "desorbed") return Anomaly::Desorbed;
  if (s == "diverged") return Anomaly::Diverged;
  if (s == "none") return Anomaly::None;
  throw IoError("unknown anomaly tag: " + s);
}

double ForceTorque::max_abs() const {
  return std::max({std::abs(f_xy.x()), std::abs(f_xy.y()), std::abs(f_z),
                   torque.cwiseAbs().maxCoeff()});
}

void SceneConfig::validate() const {
  if (cells_x < 2 || cells_y < 2) throw InvalidConfigError("scene: need at least 2x2 surface cells");
  if (spacing <= 0.0) throw InvalidConfigError("scene: spacing must be positive");
  if (layer_gap <= 0.0) throw InvalidConfigError("scene: layer_gap must be positive");
  if (n_species < 1) throw InvalidConfigError("scene: n_species must be >= 1");
  if (ads_atoms_min < 1 || ads_atoms_max < ads_atoms_min)
    throw InvalidConfigError("scene: adsorbate size range is empty");
  if (eps_min <= 0.0 || eps_max < eps_min) throw InvalidConfigError("scene: bad eps range");
  if (sigma_min <= 0.0 || sigma_max < sigma_min) throw InvalidConfigError("scene: bad sigma range");
  if (jitter < 0.0) throw InvalidConfigError("scene: jitter must be >= 0");
  if (z_init_factor <= 0.0) throw InvalidConfigError("scene: z_init_factor must be positive");
}

SystemSpec generate_system(const SceneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(hash_combine(seed, 0x5ce7e));

  SystemSpec sys;
  sys.system_id = "sys-" + std::to_string(seed);
  sys.box = Vec2(cfg.cells_x * cfg.spacing, cfg.cells_y * cfg.spacing);

  // Symmetric pair tables. With fixed_pair_table the (a, b) pair takes the
  // k-th point of an even grid over the configured ranges, so a species index
  // means the same interaction in every generated system.
  sys.eps_table = Mat::Zero(cfg.n_species, cfg.n_species);
  sys.sigma_table = Mat::Zero(cfg.n_species, cfg.n_species);
  const int n_pairs = cfg.n_species * (cfg.n_species + 1) / 2;
  int pair_rank = 0;
  for (int a = 0; a < cfg.n_species; ++a) {
    for (int b = a; b < cfg.n_species; ++b) {
      double eps, sig;
      if (cfg.fixed_pair_table) {
        const double u = n_pairs > 1 ? double(pair_rank) / (n_pairs - 1) : 0.5;
        eps = cfg.eps_min + (cfg.eps_max - cfg.eps_min) * u;
        sig = cfg.sigma_min + (cfg.sigma_max - cfg.sigma_min) * (1.0 - u);
      } else {
        eps = rng.uniform(cfg.eps_min, cfg.eps_max);
        sig = rng.uniform(cfg.sigma_min, cfg.sigma_max);
      }
      sys.eps_table(a, b) = sys.eps_table(b, a) = eps;
      sys.sigma_table(a, b) = sys.sigma_table(b, a) = sig;
      ++pair_rank;
    }
  }

  // Two-layer slab; second layer sits half a cell over and layer_gap below.
  const double jit = cfg.jitter * cfg.spacing;
  for (int layer = 0; layer < 2; ++layer) {
    const double off = layer == 0 ? 0.0 : 0.5 * cfg.spacing;
    const double z = layer == 0 ? 0.0 : -cfg.layer_gap;
    for (int ix = 0; ix < cfg.cells_x; ++ix) {
      for (int iy = 0; iy < cfg.cells_y; ++iy) {
        Vec3 p(ix * cfg.spacing + off, iy * cfg.spacing + off, z);
        if (jit > 0.0) {
          p += jit * Vec3(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                          rng.uniform(-1.0, 1.0));
        }
        const Vec2 xy = wrap_vec(Vec2(p.x(), p.y()), sys.box);
        const int species = static_cast<int>(rng.uniform_int(cfg.n_species));
        sys.slab_atoms.push_back({Vec3(xy.x(), xy.y(), p.z()), species});
      }
    }
  }

  // COM-centered rigid template.
  const int n_ads = cfg.ads_atoms_min +
      static_cast<int>(rng.uniform_int(cfg.ads_atoms_max - cfg.ads_atoms_min + 1));
  std::vector<Vec3> offsets;
  if (n_ads == 1) {
    offsets.push_back(Vec3::Zero());
  } else {
    Vec3 mean = Vec3::Zero();
    for (int i = 0; i < n_ads; ++i) {
      Vec3 o(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
      o *= cfg.ads_radius;
      offsets.push_back(o);
      mean += o;
    }
    mean /= n_ads;
    for (auto& o : offsets) o -= mean;
  }
  for (const auto& o : offsets) {
    sys.adsorbate.push_back({o, static_cast<int>(rng.uniform_int(cfg.n_species))});
  }

  sys.z_init = sys.z_surface() + cfg.z_init_factor * sys.sigma_max();
  // fresh placements must start inside the interaction range, else every
  // candidate would sit in a force-free dead zone
  const double r_cut = 0.5 * std::min(sys.box.x(), sys.box.y());
  if (sys.z_init - sys.z_surface() >= r_cut) {
    throw InvalidConfigError(
        "generate_system: z_init (" + std::to_string(sys.z_init - sys.z_surface()) +
        " above the surface) reaches past the pair cutoff min(L)/2 = " +
        std::to_string(r_cut) + "; enlarge the box or lower z_init_factor");
  }
  return sys;
}

namespace {

constexpr double kCoreFactor = 0.3;  // linear extrapolation below 0.3 sigma

struct PairEval {
  double e;
  double de_dr;
};

// Cut-and-shifted Lennard-Jones with a linear core extension.
PairEval lj_pair(double r, double eps, double sigma, double r_cut) {
  auto lj = [&](double x) {
    const double s6 = std::pow(sigma / x, 6);
    return 4.0 * eps * (s6 * s6 - s6);
  };
  auto dlj = [&](double x) {
    const double s6 = std::pow(sigma / x, 6);
    return 4.0 * eps * (-12.0 * s6 * s6 + 6.0 * s6) / x;
  };
  if (r >= r_cut) return {0.0, 0.0};
  const double shift = lj(r_cut);
  const double r0 = kCoreFactor * sigma;
  if (r < r0) {
    const double g0 = dlj(r0);
    return {lj(r0) - shift + g0 * (r - r0), g0};
  }
  return {lj(r) - shift, dlj(r)};
}

struct PairSum {
  double e = 0.0;
  Vec3 f_total = Vec3::Zero();
  Vec3 torque = Vec3::Zero();
};

PairSum accumulate_pairs(const SystemSpec& sys, const FullPose& pose, bool with_forces) {
  PairSum acc;
  const double r_cut = 0.5 * std::min(sys.box.x(), sys.box.y());
  const Vec3 com(pose.t.x(), pose.t.y(), pose.z);
  for (const auto& ads : sys.adsorbate) {
    const Vec3 lever = pose.R * ads.pos;
    const Vec3 pa = lever + com;
    for (const auto& sl : sys.slab_atoms) {
      const Vec2 dxy = min_image(Vec2(sl.pos.x(), sl.pos.y()), Vec2(pa.x(), pa.y()), sys.box);
      const Vec3 d(dxy.x(), dxy.y(), pa.z() - sl.pos.z());
      const double r = d.norm();
      if (r >= r_cut) continue;
      const auto pv = lj_pair(r, sys.eps_table(ads.species, sl.species),
                              sys.sigma_table(ads.species, sl.species), r_cut);
      acc.e += pv.e;
      if (with_forces) {
        const Vec3 dir = r > 1e-12 ? Vec3(d / r) : Vec3(0.0, 0.0, 1.0);
        const Vec3 f = -pv.de_dr * dir;  // force on the adsorbate atom
        acc.f_total += f;
        acc.torque += lever.cross(f);
      }
    }
  }
  return acc;
}

}  // namespace

double energy(const SystemSpec& sys, const FullPose& pose) {
  return accumulate_pairs(sys, pose, false).e;
}

ForceTorque force_torque(const SystemSpec& sys, const FullPose& pose) {
  const PairSum acc = accumulate_pairs(sys, pose, true);
  ForceTorque ft;
  ft.f_xy = Vec2(acc.f_total.x(), acc.f_total.y());
  ft.f_z = acc.f_total.z();
  ft.torque = acc.torque;
  return ft;
}

namespace {

using Vec6 = Eigen::Matrix<double, 6, 1>;

FullPose apply_step(const SystemSpec& sys, const FullPose& pose, const Vec6& step) {
  FullPose out;
  out.t = wrap_vec(pose.t + step.head<2>(), sys.box);
  out.z = pose.z + step[2];
  out.R = exp_so3<double>(step.tail<3>()) * pose.R;
  return out;
}

Vec6 chart_gradient(const ForceTorque& ft) {
  Vec6 g;
  g << -ft.f_xy.x(), -ft.f_xy.y(), -ft.f_z, -ft.torque.x(), -ft.torque.y(), -ft.torque.z();
  return g;
}

}  // namespace

RelaxResult relax(const SystemSpec& sys, const FullPose& start, const RelaxConfig& cfg) {
  RelaxResult res;
  FullPose pose = start;
  pose.t = wrap_vec(pose.t, sys.box);

  double e = energy(sys, pose);
  ForceTorque ft = force_torque(sys, pose);
  Vec6 g = chart_gradient(ft);

  std::deque<Vec6> hist_s, hist_y;
  int rising = 0;

  auto finish = [&](bool converged) {
    res.pose = pose;
    res.energy = e;
    res.converged = converged;
    if (!std::isfinite(e)) {
      res.anomaly = Anomaly::Diverged;
    } else if (pose.z - sys.z_surface() > cfg.z_desorb_factor * sys.sigma_max()) {
      res.anomaly = Anomaly::Desorbed;
    }
    return res;
  };

  if (!std::isfinite(e)) return finish(false);

  for (int step = 0; step < cfg.max_steps; ++step) {
    if (ft.max_abs() < cfg.ftol) {
      res.n_steps = step;
      return finish(true);
    }

    // Two-loop L-BFGS recursion in the chart at the current iterate.
    Vec6 d = -g;
    const int m = static_cast<int>(hist_s.size());
    std::vector<double> alpha(m);
    for (int i = m - 1; i >= 0; --i) {
      const double rho = 1.0 / hist_y[i].dot(hist_s[i]);
      alpha[i] = rho * hist_s[i].dot(d);
      d -= alpha[i] * hist_y[i];
    }
    if (m > 0) {
      const double gamma = hist_s.back().dot(hist_y.back()) / hist_y.back().squaredNorm();
      d *= gamma;
    }
    for (int i = 0; i < m; ++i) {
      const double rho = 1.0 / hist_y[i].dot(hist_s[i]);
      const double beta = rho * hist_y[i].dot(d);
      d += (alpha[i] - beta) * hist_s[i];
    }
    if (d.dot(g) >= 0.0) {  // not a descent direction; drop the memory
      hist_s.clear();
      hist_y.clear();
      d = -g;
    }

    double a = 1.0;
    const double dinf = d.cwiseAbs().maxCoeff();
    if (a * dinf > cfg.max_step) a = cfg.max_step / dinf;

    // Backtracking Armijo search.
    const double slope = g.dot(d);
    FullPose cand;
    double e_cand = 0.0;
    bool accepted = false;
    for (int bt = 0; bt < 30; ++bt) {
      cand = apply_step(sys, pose, (a * d).eval());
      e_cand = energy(sys, cand);
      if (std::isfinite(e_cand) && e_cand <= e + 1e-4 * a * slope) {
        accepted = true;
        break;
      }
      a *= 0.5;
    }
    if (!accepted) {
      if (std::isfinite(e_cand) && e_cand < e) {
        accepted = true;  // take the residual tiny step
      } else {
        res.n_steps = step;
        return finish(false);  // stalled
      }
    }

    const Vec6 s = a * d;
    const Vec6 g_old = g;
    rising = e_cand > e ? rising + 1 : 0;
    pose = cand;
    e = e_cand;
    ft = force_torque(sys, pose);
    g = chart_gradient(ft);

    if (!std::isfinite(e) || rising >= 20) {
      res.n_steps = step + 1;
      res.pose = pose;
      res.energy = e;
      res.anomaly = Anomaly::Diverged;
      return res;
    }

    const Vec6 y = g - g_old;
    if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
      hist_s.push_back(s);
      hist_y.push_back(y);
      if (static_cast<int>(hist_s.size()) > cfg.history) {
        hist_s.pop_front();
        hist_y.pop_front();
      }
    }
    res.n_steps = step + 1;
  }
  return finish(ft.max_abs() < cfg.ftol);
}

MinimaSet enumerate_minima(const SystemSpec& sys, const EnumerateConfig& cfg) {
  if (cfg.grid_density < 4) {
    throw InvalidConfigError("enumerate_minima: grid_density must be >= 4");
  }

  std::vector<Mat3> rotations{Mat3::Identity()};
  Rng rot_rng(cfg.rot_seed);
  for (int i = 0; i < cfg.n_rot; ++i) rotations.push_back(sample_rotation(rot_rng));

  std::vector<FullPose> starts;
  for (int ix = 0; ix < cfg.grid_density; ++ix) {
    for (int iy = 0; iy < cfg.grid_density; ++iy) {
      for (const auto& rot : rotations) {
        FullPose p;
        p.t = Vec2(ix * sys.box.x() / cfg.grid_density, iy * sys.box.y() / cfg.grid_density);
        p.z = sys.z_init;
        p.R = rot;
        starts.push_back(p);
      }
    }
  }

  std::vector<RelaxResult> results(starts.size());
  parallel_for(static_cast<int>(starts.size()), cfg.jobs,
               [&](int i) { results[i] = relax(sys, starts[i], cfg.relax); });

  // Stable order: ascending energy, start index breaking exact ties.
  std::vector<int> order;
  for (int i = 0; i < static_cast<int>(results.size()); ++i) {
    if (results[i].converged && results[i].anomaly == Anomaly::None) order.push_back(i);
  }
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (results[a].energy != results[b].energy) return results[a].energy < results[b].energy;
    return a < b;
  });

  const double tol_dist = cfg.dedup_dist * sys.sigma_max();

  // The rotation criterion compares poses on the physical quotient: a single
  // atom has no orientation at all, and for a collinear template the spin
  // about the molecular axis is gauge, so only the axis direction counts
  // (up to sign when the template is flip-symmetric).
  Mat offsets(3, static_cast<int>(sys.adsorbate.size()));
  for (std::size_t i = 0; i < sys.adsorbate.size(); ++i) offsets.col(i) = sys.adsorbate[i].pos;
  Eigen::JacobiSVD<Mat> svd(offsets);
  const double sv_max = svd.singularValues().size() ? svd.singularValues()(0) : 0.0;
  int rank = 0;
  for (int i = 0; i < svd.singularValues().size(); ++i) {
    if (svd.singularValues()(i) > 1e-9 * std::max(sv_max, 1e-300)) ++rank;
  }
  Vec3 axis0 = Vec3::UnitZ();
  bool flip_symmetric = false;
  if (rank == 1) {
    for (const auto& a : sys.adsorbate) {
      if (a.pos.norm() > 1e-12) {
        axis0 = a.pos.normalized();
        break;
      }
    }
    // flip-symmetric iff the (projection, species) multiset is even
    flip_symmetric = true;
    for (const auto& a : sys.adsorbate) {
      bool matched = false;
      for (const auto& b : sys.adsorbate) {
        if (a.species == b.species &&
            std::abs(a.pos.dot(axis0) + b.pos.dot(axis0)) < 1e-9) {
          matched = true;
          break;
        }
      }
      if (!matched) {
        flip_symmetric = false;
        break;
      }
    }
  }
  auto rotation_distance = [&](const Mat3& ra, const Mat3& rb) {
    if (rank == 0) return 0.0;
    if (rank == 1) {
      double c = (ra * axis0).dot(rb * axis0);
      if (flip_symmetric) c = std::abs(c);
      return std::acos(std::clamp(c, -1.0, 1.0));
    }
    return log_so3<double>((ra * rb.transpose()).eval()).norm();
  };

  MinimaSet set;
  set.system_id = sys.system_id;
  for (int idx : order) {
    const auto& cand = results[idx];
    bool dup = false;
    for (const auto& kept : set.minima) {
      if (std::abs(cand.energy - kept.energy) >= cfg.dedup_energy) continue;
      const TorusPoint a{kept.pose.t, sys.box}, b{cand.pose.t, sys.box};
      if (torus_displacement(a, b).norm() >= tol_dist) continue;
      if (rotation_distance(cand.pose.R, kept.pose.R) >= cfg.dedup_angle) continue;
      dup = true;
      break;
    }
    if (!dup) set.minima.push_back({cand.pose, cand.energy, 0.0});
  }

  if (set.minima.empty()) {
    throw NoMinimaFoundError("enumerate_minima: no converged, non-anomalous start for " +
                             sys.system_id);
  }
  set.e_min = set.minima.front().energy;
  for (auto& m : set.minima) m.e_rel = m.energy - set.e_min;
  return set;
}

}  // namespace rigidflow
