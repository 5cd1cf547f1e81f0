// Copyright (C) 2026 rigidflow contributors
// SPDX-License-Identifier: Apache-2.0

#include "rigidflow/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <thread>

#include "rigidflow/io.hpp"

namespace rigidflow {

int RunConfig::effective_jobs() const {
  if (jobs > 0) return jobs;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

void RunConfig::validate() const {
  scene.validate();
  model.validate();
  train.validate();
  sample.validate();
  if (jobs < 0) throw InvalidConfigError("jobs must be >= 0 (0 = hardware)");
  if (dataset.n_systems < 1) throw InvalidConfigError("dataset: n_systems must be >= 1");
  if (dataset.min_minima < 1) throw InvalidConfigError("dataset: min_minima must be >= 1");
  if (dataset.enumerate.grid_density < 4)
    throw InvalidConfigError("dataset: grid_density must be >= 4");
  if (eval.n_seeds < 1) throw InvalidConfigError("eval: n_seeds must be >= 1");
  if (eval.tol <= 0.0) throw InvalidConfigError("eval: tol must be positive");
  if (relax.max_steps < 1) throw InvalidConfigError("relax: max_steps must be >= 1");
  if (relax.ftol <= 0.0) throw InvalidConfigError("relax: ftol must be positive");
}

namespace {

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename T>
T parse_value(const std::string& s);

template <>
int parse_value<int>(const std::string& s) {
  std::size_t pos = 0;
  const int v = std::stoi(s, &pos);
  if (pos != s.size()) throw std::invalid_argument(s);
  return v;
}

template <>
double parse_value<double>(const std::string& s) {
  std::size_t pos = 0;
  const double v = std::stod(s, &pos);
  if (pos != s.size()) throw std::invalid_argument(s);
  return v;
}

template <>
std::uint64_t parse_value<std::uint64_t>(const std::string& s) {
  std::size_t pos = 0;
  const std::uint64_t v = std::stoull(s, &pos);
  if (pos != s.size()) throw std::invalid_argument(s);
  return v;
}

template <>
bool parse_value<bool>(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::invalid_argument(s);
}

std::string render(int v) { return std::to_string(v); }
std::string render(std::uint64_t v) { return std::to_string(v); }
std::string render(bool v) { return v ? "true" : "false"; }
std::string render(double v) { return format_double(v); }

using FieldMap = std::map<std::string, Field>;

template <typename T>
void reg(FieldMap& m, const std::string& key, T RunConfig::* member) {
  m[key] = {[member](const RunConfig& c) { return render(c.*member); },
            [member](RunConfig& c, const std::string& s) { c.*member = parse_value<T>(s); }};
}

template <typename Sub, typename T>
void reg(FieldMap& m, const std::string& key, Sub RunConfig::* sub, T Sub::* member) {
  m[key] = {[sub, member](const RunConfig& c) { return render(c.*sub.*member); },
            [sub, member](RunConfig& c, const std::string& s) {
              c.*sub.*member = parse_value<T>(s);
            }};
}

template <typename Sub, typename Mid, typename T>
void reg(FieldMap& m, const std::string& key, Sub RunConfig::* sub, Mid Sub::* mid,
         T Mid::* member) {
  m[key] = {[sub, mid, member](const RunConfig& c) { return render(c.*sub.*mid.*member); },
            [sub, mid, member](RunConfig& c, const std::string& s) {
              c.*sub.*mid.*member = parse_value<T>(s);
            }};
}

const FieldMap& field_map() {
  static const FieldMap map = [] {
    FieldMap m;
    reg(m, "run.seed", &RunConfig::seed);
    reg(m, "run.jobs", &RunConfig::jobs);

    reg(m, "system.cells_x", &RunConfig::scene, &SceneConfig::cells_x);
    reg(m, "system.cells_y", &RunConfig::scene, &SceneConfig::cells_y);
    reg(m, "system.spacing", &RunConfig::scene, &SceneConfig::spacing);
    reg(m, "system.layer_gap", &RunConfig::scene, &SceneConfig::layer_gap);
    reg(m, "system.n_species", &RunConfig::scene, &SceneConfig::n_species);
    reg(m, "system.ads_atoms_min", &RunConfig::scene, &SceneConfig::ads_atoms_min);
    reg(m, "system.ads_atoms_max", &RunConfig::scene, &SceneConfig::ads_atoms_max);
    reg(m, "system.ads_radius", &RunConfig::scene, &SceneConfig::ads_radius);
    reg(m, "system.eps_min", &RunConfig::scene, &SceneConfig::eps_min);
    reg(m, "system.eps_max", &RunConfig::scene, &SceneConfig::eps_max);
    reg(m, "system.sigma_min", &RunConfig::scene, &SceneConfig::sigma_min);
    reg(m, "system.sigma_max", &RunConfig::scene, &SceneConfig::sigma_max);
    reg(m, "system.jitter", &RunConfig::scene, &SceneConfig::jitter);
    reg(m, "system.fixed_pair_table", &RunConfig::scene, &SceneConfig::fixed_pair_table);
    reg(m, "system.z_init_factor", &RunConfig::scene, &SceneConfig::z_init_factor);

    reg(m, "dataset.n_systems", &RunConfig::dataset, &DatasetGenConfig::n_systems);
    reg(m, "dataset.min_minima", &RunConfig::dataset, &DatasetGenConfig::min_minima);
    reg(m, "dataset.grid_density", &RunConfig::dataset, &DatasetGenConfig::enumerate,
        &EnumerateConfig::grid_density);
    reg(m, "dataset.n_rot", &RunConfig::dataset, &DatasetGenConfig::enumerate,
        &EnumerateConfig::n_rot);
    reg(m, "dataset.rot_seed", &RunConfig::dataset, &DatasetGenConfig::enumerate,
        &EnumerateConfig::rot_seed);
    reg(m, "dataset.dedup_dist", &RunConfig::dataset, &DatasetGenConfig::enumerate,
        &EnumerateConfig::dedup_dist);
    reg(m, "dataset.dedup_angle", &RunConfig::dataset, &DatasetGenConfig::enumerate,
        &EnumerateConfig::dedup_angle);
    reg(m, "dataset.dedup_energy", &RunConfig::dataset, &DatasetGenConfig::enumerate,
        &EnumerateConfig::dedup_energy);

    reg(m, "model.n_species", &RunConfig::model, &FieldConfig::n_species);
    reg(m, "model.scalar_channels", &RunConfig::model, &FieldConfig::scalar_channels);
    reg(m, "model.vector_channels", &RunConfig::model, &FieldConfig::vector_channels);
    reg(m, "model.n_rbf", &RunConfig::model, &FieldConfig::n_rbf);
    reg(m, "model.n_layers", &RunConfig::model, &FieldConfig::n_layers);
    reg(m, "model.r_cut", &RunConfig::model, &FieldConfig::r_cut);
    reg(m, "model.max_neighbors", &RunConfig::model, &FieldConfig::max_neighbors);
    reg(m, "model.time_dim", &RunConfig::model, &FieldConfig::time_dim);
    reg(m, "model.cond_dim", &RunConfig::model, &FieldConfig::cond_dim);
    reg(m, "model.cond_feat_dim", &RunConfig::model, &FieldConfig::cond_feat_dim);
    reg(m, "model.e_max", &RunConfig::model, &FieldConfig::e_max);
    reg(m, "model.tik_rel", &RunConfig::model, &FieldConfig::tik_rel);
    reg(m, "model.tik_abs", &RunConfig::model, &FieldConfig::tik_abs);
    reg(m, "model.inertia_mass", &RunConfig::model, &FieldConfig::inertia_mass);

    reg(m, "train.p_cfg", &RunConfig::train, &TrainConfig::p_cfg);
    reg(m, "train.lambda_rot", &RunConfig::train, &TrainConfig::lambda_rot);
    reg(m, "train.batch_size", &RunConfig::train, &TrainConfig::batch_size);
    reg(m, "train.lr", &RunConfig::train, &TrainConfig::lr);
    reg(m, "train.beta1", &RunConfig::train, &TrainConfig::beta1);
    reg(m, "train.beta2", &RunConfig::train, &TrainConfig::beta2);
    reg(m, "train.adam_eps", &RunConfig::train, &TrainConfig::adam_eps);
    reg(m, "train.grad_clip", &RunConfig::train, &TrainConfig::grad_clip);
    reg(m, "train.steps", &RunConfig::train, &TrainConfig::steps);
    reg(m, "train.seed", &RunConfig::train, &TrainConfig::seed);
    reg(m, "train.checkpoint_every", &RunConfig::train, &TrainConfig::checkpoint_every);
    m["train.rot_head"] = {
        [](const RunConfig& c) { return to_string(c.train.rot_head); },
        [](RunConfig& c, const std::string& s) { c.train.rot_head = rot_head_from_string(s); }};

    reg(m, "sample.k_steps", &RunConfig::sample, &SampleConfig::k_steps);
    reg(m, "sample.guidance", &RunConfig::sample, &SampleConfig::guidance_w);
    reg(m, "sample.e_rel_target", &RunConfig::sample, &SampleConfig::e_rel_target);

    reg(m, "eval.seeds", &RunConfig::eval, &EvalConfig::n_seeds);
    reg(m, "eval.tol", &RunConfig::eval, &EvalConfig::tol);
    reg(m, "eval.baseline", &RunConfig::eval, &EvalConfig::baseline);

    reg(m, "relax.max_steps", &RunConfig::relax, &RelaxConfig::max_steps);
    reg(m, "relax.ftol", &RunConfig::relax, &RelaxConfig::ftol);
    reg(m, "relax.z_desorb_factor", &RunConfig::relax, &RelaxConfig::z_desorb_factor);
    reg(m, "relax.max_step", &RunConfig::relax, &RelaxConfig::max_step);
    return m;
  }();
  return map;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin) {
  const FieldMap& fields = field_map();
  std::istringstream in(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(line_no);
    if (line.front() == '[') {
      if (line.back() != ']') throw InvalidConfigError(where + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw InvalidConfigError(where + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const std::string full = section.empty() ? key : section + "." + key;
    const auto it = fields.find(full);
    if (it == fields.end()) {
      throw InvalidConfigError(where + ": unknown config key '" + full + "'");
    }
    try {
      it->second.set(cfg, value);
    } catch (const std::exception&) {
      throw InvalidConfigError(where + ": cannot parse value '" + value + "' for '" + full +
                               "'");
    }
  }
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  RunConfig cfg;
  apply_config_text(cfg, buf.str(), path);
  cfg.validate();
  return cfg;
}

std::string config_to_text(const RunConfig& cfg) {
  const FieldMap& fields = field_map();
  std::string out;
  std::string section;
  for (const auto& [key, field] : fields) {
    const auto dot = key.find('.');
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      if (!out.empty()) out += "\n";
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += key.substr(dot + 1) + " = " + field.get(cfg) + "\n";
  }
  return out;
}

}  // namespace rigidflow
