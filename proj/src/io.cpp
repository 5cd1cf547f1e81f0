// Copyright (C) 2026 rigidflow contributors
// SPDX-License-Identifier: Apache-2.0

#include "rigidflow/io.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace rigidflow {

using nlohmann::json;

std::string format_double(double x) {
  if (!std::isfinite(x)) return "null";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

namespace {

double json_double(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

// Field order in the hand-assembled lines is fixed; the reader goes through
// a JSON parser and is order-agnostic.
void append_atoms(std::string& line, const std::vector<Atom>& atoms) {
  line += "[";
  for (std::size_t i = 0; i < atoms.size(); ++i) {
    if (i) line += ",";
    line += "[" + format_double(atoms[i].pos.x()) + "," + format_double(atoms[i].pos.y()) +
            "," + format_double(atoms[i].pos.z()) + "," + std::to_string(atoms[i].species) + "]";
  }
  line += "]";
}

void append_mat(std::string& line, const Mat& m) {
  line += "[";
  for (int r = 0; r < m.rows(); ++r) {
    if (r) line += ",";
    line += "[";
    for (int c = 0; c < m.cols(); ++c) {
      if (c) line += ",";
      line += format_double(m(r, c));
    }
    line += "]";
  }
  line += "]";
}

void append_pose(std::string& line, const FullPose& p) {
  line += "[" + format_double(p.t.x()) + "," + format_double(p.t.y()) + "," +
          format_double(p.z);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) line += "," + format_double(p.R(r, c));
  }
  line += "]";
}

FullPose pose_from_array(const json& a) {
  FullPose p;
  p.t = Vec2(json_double(a[0]), json_double(a[1]));
  p.z = json_double(a[2]);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) p.R(r, c) = json_double(a[3 + 3 * r + c]);
  }
  return p;
}

std::vector<Atom> atoms_from_json(const json& arr) {
  std::vector<Atom> out;
  for (const auto& a : arr) {
    out.push_back({Vec3(json_double(a[0]), json_double(a[1]), json_double(a[2])),
                   a[3].get<int>()});
  }
  return out;
}

Mat mat_from_json(const json& arr) {
  const int rows = static_cast<int>(arr.size());
  const int cols = rows ? static_cast<int>(arr[0].size()) : 0;
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) m(r, c) = json_double(arr[r][c]);
  }
  return m;
}

}  // namespace

void write_dataset(const std::string& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "{\"schema\":" << quote(kDatasetSchema) << "}\n";
  for (const auto& entry : data) {
    const SystemSpec& s = entry.system;
    std::string line = "{\"system_id\":" + quote(s.system_id);
    line += ",\"box\":[" + format_double(s.box.x()) + "," + format_double(s.box.y()) + "]";
    line += ",\"z_init\":" + format_double(s.z_init);
    line += ",\"eps\":";
    append_mat(line, s.eps_table);
    line += ",\"sigma\":";
    append_mat(line, s.sigma_table);
    line += ",\"slab\":";
    append_atoms(line, s.slab_atoms);
    line += ",\"adsorbate\":";
    append_atoms(line, s.adsorbate);
    line += ",\"e_min\":" + format_double(entry.minima.e_min);
    line += ",\"minima\":[";
    for (std::size_t i = 0; i < entry.minima.minima.size(); ++i) {
      const Minimum& m = entry.minima.minima[i];
      if (i) line += ",";
      line += "{\"pose\":";
      append_pose(line, m.pose);
      line += ",\"energy\":" + format_double(m.energy);
      line += ",\"e_rel\":" + format_double(m.e_rel) + "}";
    }
    line += "]}";
    out << line << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty dataset file: " + path);
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw IoError("dataset header parse error in " + path + ": " + e.what());
  }
  const std::string schema = header.value("schema", "");
  if (schema != kDatasetSchema) {
    throw SchemaError("dataset schema mismatch: file has '" + schema + "', reader expects '" +
                      kDatasetSchema + "'");
  }

  Dataset data;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError("dataset parse error at " + path + ":" + std::to_string(line_no) + ": " +
                    e.what());
    }
    DatasetEntry entry;
    SystemSpec& s = entry.system;
    s.system_id = j.at("system_id").get<std::string>();
    s.box = Vec2(json_double(j.at("box")[0]), json_double(j.at("box")[1]));
    s.z_init = json_double(j.at("z_init"));
    s.eps_table = mat_from_json(j.at("eps"));
    s.sigma_table = mat_from_json(j.at("sigma"));
    s.slab_atoms = atoms_from_json(j.at("slab"));
    s.adsorbate = atoms_from_json(j.at("adsorbate"));
    entry.minima.system_id = s.system_id;
    entry.minima.e_min = json_double(j.at("e_min"));
    for (const auto& m : j.at("minima")) {
      Minimum mm;
      mm.pose = pose_from_array(m.at("pose"));
      mm.energy = json_double(m.at("energy"));
      mm.e_rel = json_double(m.at("e_rel"));
      entry.minima.minima.push_back(mm);
    }
    data.push_back(std::move(entry));
  }
  return data;
}

// ---------------------------------------------------------------------------
// Checkpoint
// ---------------------------------------------------------------------------

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

std::uint64_t get_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

void put_store(std::ostream& out, const ParamStore& store) {
  put_u64(out, store.tensors.size());
  for (std::size_t i = 0; i < store.tensors.size(); ++i) {
    const std::string& name = store.names[i];
    const Mat& t = store.tensors[i];
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(t.rows()));
    put_u32(out, static_cast<std::uint32_t>(t.cols()));
    // row-major payload
    for (int r = 0; r < t.rows(); ++r) {
      for (int c = 0; c < t.cols(); ++c) {
        const double v = t(r, c);
        out.write(reinterpret_cast<const char*>(&v), sizeof v);
      }
    }
  }
}

ParamStore get_store(std::istream& in, const std::string& path) {
  ParamStore store;
  const std::uint64_t n = get_u64(in);
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::uint32_t len = get_u32(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    const std::uint32_t rows = get_u32(in);
    const std::uint32_t cols = get_u32(in);
    Mat t(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r) {
      for (std::uint32_t c = 0; c < cols; ++c) {
        double v = 0.0;
        in.read(reinterpret_cast<char*>(&v), sizeof v);
        t(r, c) = v;
      }
    }
    if (!in) throw IoError("truncated checkpoint: " + path);
    store.add(name, std::move(t));
  }
  return store;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << kCheckpointSchema << "\n";
  const FieldConfig& c = ckpt.params.cfg;
  out << "n_species=" << c.n_species << " scalar_channels=" << c.scalar_channels
      << " vector_channels=" << c.vector_channels << " n_rbf=" << c.n_rbf
      << " n_layers=" << c.n_layers << " r_cut=" << format_double(c.r_cut)
      << " max_neighbors=" << c.max_neighbors << " time_dim=" << c.time_dim
      << " cond_dim=" << c.cond_dim << " cond_feat_dim=" << c.cond_feat_dim
      << " e_max=" << format_double(c.e_max)
      << " tik_rel=" << format_double(c.tik_rel) << " tik_abs=" << format_double(c.tik_abs)
      << " inertia_mass=" << format_double(c.inertia_mass)
      << " rot_head=" << to_string(ckpt.rot_head) << " step=" << ckpt.step
      << " seed=" << ckpt.seed << "\n";
  put_store(out, ckpt.params.store);
  put_store(out, ckpt.adam.m);
  put_store(out, ckpt.adam.v);
  if (!out) throw IoError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::string schema;
  if (!std::getline(in, schema)) throw IoError("truncated checkpoint: " + path);
  if (schema != kCheckpointSchema) {
    throw SchemaError("checkpoint schema mismatch: file has '" + schema +
                      "', reader expects '" + kCheckpointSchema + "'");
  }
  std::string header;
  if (!std::getline(in, header)) throw IoError("truncated checkpoint: " + path);

  Checkpoint ckpt;
  FieldConfig& c = ckpt.params.cfg;
  std::istringstream hs(header);
  std::string kv;
  while (hs >> kv) {
    const auto pos = kv.find('=');
    if (pos == std::string::npos) throw IoError("malformed checkpoint header: " + path);
    const std::string key = kv.substr(0, pos);
    const std::string val = kv.substr(pos + 1);
    if (key == "n_species") c.n_species = std::stoi(val);
    else if (key == "scalar_channels") c.scalar_channels = std::stoi(val);
    else if (key == "vector_channels") c.vector_channels = std::stoi(val);
    else if (key == "n_rbf") c.n_rbf = std::stoi(val);
    else if (key == "n_layers") c.n_layers = std::stoi(val);
    else if (key == "r_cut") c.r_cut = std::stod(val);
    else if (key == "max_neighbors") c.max_neighbors = std::stoi(val);
    else if (key == "time_dim") c.time_dim = std::stoi(val);
    else if (key == "cond_dim") c.cond_dim = std::stoi(val);
    else if (key == "cond_feat_dim") c.cond_feat_dim = std::stoi(val);
    else if (key == "e_max") c.e_max = std::stod(val);
    else if (key == "tik_rel") c.tik_rel = std::stod(val);
    else if (key == "tik_abs") c.tik_abs = std::stod(val);
    else if (key == "inertia_mass") c.inertia_mass = std::stod(val);
    else if (key == "rot_head") ckpt.rot_head = rot_head_from_string(val);
    else if (key == "step") ckpt.step = std::stoi(val);
    else if (key == "seed") ckpt.seed = std::stoull(val);
    else throw IoError("unknown checkpoint header key '" + key + "' in " + path);
  }

  ckpt.params.store = get_store(in, path);
  ckpt.adam.m = get_store(in, path);
  ckpt.adam.v = get_store(in, path);

  // Shape audit against the config.
  const auto shapes = param_shapes(c);
  if (shapes.size() != ckpt.params.store.tensors.size()) {
    throw SchemaError("checkpoint tensor count does not match its config: " + path);
  }
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto& [name, sh] = shapes[i];
    if (ckpt.params.store.names[i] != name ||
        ckpt.params.store.tensors[i].rows() != sh.first ||
        ckpt.params.store.tensors[i].cols() != sh.second) {
      throw SchemaError("checkpoint tensor '" + ckpt.params.store.names[i] +
                        "' does not match the declared config in " + path);
    }
  }
  return ckpt;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

namespace {

void append_pose2(std::string& line, const Pose& p) {
  line += "[" + format_double(p.t.x()) + "," + format_double(p.t.y());
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) line += "," + format_double(p.R(r, c));
  }
  line += "]";
}

std::string selection_json(const Selection& sel) {
  std::string s = "{\"success\":";
  s += sel.success ? "true" : "false";
  s += ",\"all_anomalous\":";
  s += sel.all_anomalous ? "true" : "false";
  s += ",\"delta_e\":" + format_double(sel.delta_e);
  s += ",\"selected_seed\":" + std::to_string(sel.selected_seed) + "}";
  return s;
}

}  // namespace

void write_report_json(const std::string& path, const EvalReport& rep) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "{\"schema\":" << quote(kReportSchema) << ",\n";
  out << "\"config\":{\"n_seeds\":" << rep.n_seeds << ",\"k_steps\":" << rep.k_steps
      << ",\"guidance_w\":" << format_double(rep.guidance_w)
      << ",\"e_rel_target\":" << format_double(rep.e_rel_target)
      << ",\"tol\":" << format_double(rep.tol) << ",\"base_seed\":" << rep.base_seed
      << ",\"baseline\":" << (rep.baseline ? "true" : "false")
      << ",\"rot_head\":" << quote(rep.rot_head) << "},\n";
  auto write_k_map = [&](const char* name, const std::map<int, double>& m) {
    out << "\"" << name << "\":{";
    bool first = true;
    for (const auto& [k, v] : m) {
      if (!first) out << ",";
      first = false;
      out << "\"" << k << "\":" << format_double(v);
    }
    out << "}";
  };
  write_k_map("sr_at_k", rep.sr_at_k);
  out << ",\n";
  write_k_map("anom_at_k", rep.anom_at_k);
  out << ",\n\"mean_abs_delta_e\":" << format_double(rep.mean_abs_delta_e) << ",\n";
  out << "\"systems\":[\n";
  for (std::size_t i = 0; i < rep.systems.size(); ++i) {
    const SystemReport& sr = rep.systems[i];
    std::string line = "{\"system_id\":" + quote(sr.system_id) + ",\"candidates\":[";
    for (std::size_t c = 0; c < sr.candidates.size(); ++c) {
      const CandidateRecord& rec = sr.candidates[c];
      if (c) line += ",";
      line += "{\"seed\":" + std::to_string(rec.seed_index) + ",\"pose\":";
      append_pose2(line, rec.generated);
      line += ",\"energy\":" + format_double(rec.relax.energy);
      line += ",\"converged\":" + std::string(rec.relax.converged ? "true" : "false");
      line += ",\"anomaly\":" + quote(to_string(rec.relax.anomaly)) + "}";
    }
    line += "],\"at_k\":{";
    bool first = true;
    for (const auto& [k, sel] : sr.at_k) {
      if (!first) line += ",";
      first = false;
      line += "\"" + std::to_string(k) + "\":" + selection_json(sel);
    }
    line += "}}";
    out << line << (i + 1 < rep.systems.size() ? ",\n" : "\n");
  }
  out << "]}\n";
  if (!out) throw IoError("write failed: " + path);
}

void write_grid_csv(const std::string& path, const std::vector<GridCell>& cells) {
  if (cells.empty()) throw InvalidConfigError("write_grid_csv: no cells");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  const auto& k_levels = cells.front().report.k_levels;
  out << "k_steps,w";
  for (int k : k_levels) out << ",sr@" << k;
  out << ",anom@" << k_levels.back() << ",mean_abs_delta_e\n";
  for (const auto& cell : cells) {
    out << cell.k_steps << "," << format_double(cell.w);
    for (int k : k_levels) out << "," << format_double(cell.report.sr_at_k.at(k));
    out << "," << format_double(cell.report.anom_at_k.at(k_levels.back()));
    out << "," << format_double(cell.report.mean_abs_delta_e) << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

void write_samples_jsonl(const std::string& path,
                         const std::vector<CandidateRecord>& records,
                         const std::vector<std::vector<Pose>>* traces) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "{\"schema\":\"rigidflow.samples.v1\"}\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    const CandidateRecord& rec = records[i];
    std::string line = "{\"system_id\":" + quote(rec.system_id) +
                       ",\"seed\":" + std::to_string(rec.seed_index) + ",\"pose\":";
    append_pose2(line, rec.generated);
    line += ",\"energy\":" + format_double(rec.relax.energy);
    line += ",\"converged\":" + std::string(rec.relax.converged ? "true" : "false");
    line += ",\"anomaly\":" + quote(to_string(rec.relax.anomaly));
    if (traces && i < traces->size()) {
      line += ",\"trace\":[";
      for (std::size_t s = 0; s < (*traces)[i].size(); ++s) {
        if (s) line += ",";
        append_pose2(line, (*traces)[i][s]);
      }
      line += "]";
    }
    line += "}";
    out << line << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace rigidflow
