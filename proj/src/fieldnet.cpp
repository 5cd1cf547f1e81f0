// Copyright (C) 2026 rigidflow contributors
// SPDX-License-Identifier: Apache-2.0

#include "rigidflow/fieldnet.hpp"

#include <algorithm>
#include <cmath>

#include "rigidflow/parallel.hpp"
#include "rigidflow/rng.hpp"

namespace rigidflow {

// ---------------------------------------------------------------------------
// Graph construction and fixed embeddings
// ---------------------------------------------------------------------------

GraphInput build_graph(const SystemSpec& sys, const FullPose& pose, double r_cut,
                       int max_neighbors) {
  GraphInput g;
  g.n_slab = static_cast<int>(sys.slab_atoms.size());
  g.n_ads = static_cast<int>(sys.adsorbate.size());
  g.n_atoms = g.n_slab + g.n_ads;

  g.positions.reserve(g.n_atoms);
  for (const auto& a : sys.slab_atoms) {
    const Vec2 xy = wrap_vec(Vec2(a.pos.x(), a.pos.y()), sys.box);
    g.positions.emplace_back(xy.x(), xy.y(), a.pos.z());
    g.species.push_back(a.species);
    g.tag.push_back(0);
  }
  const Vec3 com(pose.t.x(), pose.t.y(), pose.z);
  for (const auto& a : sys.adsorbate) {
    const Vec3 lever = pose.R * a.pos;
    const Vec3 p = lever + com;
    const Vec2 xy = wrap_vec(Vec2(p.x(), p.y()), sys.box);
    g.positions.emplace_back(xy.x(), xy.y(), p.z());
    g.species.push_back(a.species);
    g.tag.push_back(1);
    g.ads_offsets.push_back(lever);
  }

  struct Cand {
    double d;
    int j;
    Vec3 vec;
  };
  std::vector<Cand> cands;
  for (int i = 0; i < g.n_atoms; ++i) {
    cands.clear();
    for (int j = 0; j < g.n_atoms; ++j) {
      if (j == i) continue;
      const Vec2 dxy = min_image(Vec2(g.positions[i].x(), g.positions[i].y()),
                                 Vec2(g.positions[j].x(), g.positions[j].y()), sys.box);
      const Vec3 d(dxy.x(), dxy.y(), g.positions[j].z() - g.positions[i].z());
      const double len = d.norm();
      if (len <= r_cut) cands.push_back({len, j, d});
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.d != b.d) return a.d < b.d;
      return a.j < b.j;
    });
    const int keep = std::min<int>(max_neighbors, static_cast<int>(cands.size()));
    for (int k = 0; k < keep; ++k) {
      g.edge_tgt.push_back(i);
      g.edge_src.push_back(cands[k].j);
      g.edge_vec.push_back(cands[k].vec);
      g.edge_len.push_back(cands[k].d);
    }
  }
  return g;
}

double envelope(double d, double r_cut) {
  if (d >= r_cut) return 0.0;
  return 0.5 * (std::cos(M_PI * d / r_cut) + 1.0);
}

Vec rbf_embed(double d, double r_cut, int n_rbf) {
  Vec out(n_rbf);
  const double delta = r_cut / (n_rbf - 1);
  const double env = envelope(d, r_cut);
  for (int k = 0; k < n_rbf; ++k) {
    const double c = k * delta;
    out[k] = std::exp(-(d - c) * (d - c) / (2.0 * delta * delta)) * env;
  }
  return out;
}

Vec time_embed_raw(double t, int dim) {
  const int half = dim / 2;
  Vec out(2 * half);
  // frequencies tuned to t in [0, 1]; the top one still resolves ~1e-2 steps
  const double w_min = 1.0, w_max = 50.0;
  for (int k = 0; k < half; ++k) {
    const double w = half == 1 ? w_min : w_min * std::pow(w_max / w_min, double(k) / (half - 1));
    out[k] = std::sin(w * t);
    out[half + k] = std::cos(w * t);
  }
  return out;
}

std::string to_string(RotHead h) { return h == RotHead::Torque ? "torque" : "direct"; }

RotHead rot_head_from_string(const std::string& s) {
  if (s == "torque") return RotHead::Torque;
  if (s == "direct") return RotHead::Direct;
  throw InvalidConfigError("unknown rotation head: " + s + " (expected torque|direct)");
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

void FieldConfig::validate() const {
  if (n_species < 1) throw InvalidConfigError("fieldnet: n_species must be >= 1");
  if (scalar_channels < 1 || vector_channels < 1)
    throw InvalidConfigError("fieldnet: channel counts must be >= 1");
  if (scalar_channels != vector_channels)
    throw InvalidConfigError("fieldnet: scalar_channels must equal vector_channels");
  if (n_rbf < 2) throw InvalidConfigError("fieldnet: n_rbf must be >= 2");
  if (n_layers < 1) throw InvalidConfigError("fieldnet: n_layers must be >= 1");
  if (r_cut <= 0.0) throw InvalidConfigError("fieldnet: r_cut must be positive");
  if (max_neighbors < 1) throw InvalidConfigError("fieldnet: max_neighbors must be >= 1");
  if (time_dim < 2 || time_dim % 2 != 0)
    throw InvalidConfigError("fieldnet: time_dim must be even and >= 2");
  if (cond_dim < 1) throw InvalidConfigError("fieldnet: cond_dim must be >= 1");
  if (cond_feat_dim < 2 || cond_feat_dim % 2 != 0)
    throw InvalidConfigError("fieldnet: cond_feat_dim must be even and >= 2");
  if (e_max <= 0.0) throw InvalidConfigError("fieldnet: e_max must be positive");
}

void ParamStore::add(const std::string& name, Mat t) {
  names.push_back(name);
  tensors.push_back(std::move(t));
}

int ParamStore::find(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return static_cast<int>(i);
  }
  return -1;
}

Mat& ParamStore::operator[](const std::string& name) {
  const int i = find(name);
  if (i < 0) throw std::out_of_range("ParamStore: no tensor named " + name);
  return tensors[i];
}

const Mat& ParamStore::at(const std::string& name) const {
  const int i = find(name);
  if (i < 0) throw std::out_of_range("ParamStore: no tensor named " + name);
  return tensors[i];
}

std::size_t ParamStore::total_entries() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += static_cast<std::size_t>(t.size());
  return n;
}

std::vector<std::pair<std::string, std::pair<int, int>>> param_shapes(const FieldConfig& cfg) {
  const int c = cfg.scalar_channels;
  std::vector<std::pair<std::string, std::pair<int, int>>> out;
  out.push_back({"embed.species", {cfg.n_species, c}});
  out.push_back({"embed.tag", {2, c}});
  out.push_back({"time.w", {cfg.time_dim, c}});
  out.push_back({"time.b", {1, c}});
  out.push_back({"cond.w1", {cfg.cond_feat_dim, cfg.cond_dim}});
  out.push_back({"cond.b1", {1, cfg.cond_dim}});
  out.push_back({"cond.w2", {cfg.cond_dim, cfg.cond_dim}});
  out.push_back({"cond.b2", {1, cfg.cond_dim}});
  out.push_back({"cond.null", {1, cfg.cond_dim}});
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "l" + std::to_string(l) + ".";
    out.push_back({p + "phi1_w", {c, c}});
    out.push_back({p + "phi1_b", {1, c}});
    out.push_back({p + "phi2_w", {c, 3 * c}});
    out.push_back({p + "phi2_b", {1, 3 * c}});
    out.push_back({p + "filter_w", {cfg.n_rbf, 3 * c}});
    out.push_back({p + "mix_u", {c, c}});
    out.push_back({p + "mix_v", {c, c}});
    out.push_back({p + "a1_w", {2 * c, c}});
    out.push_back({p + "a1_b", {1, c}});
    out.push_back({p + "a2_w", {c, 3 * c}});
    out.push_back({p + "a2_b", {1, 3 * c}});
    out.push_back({p + "film_w", {cfg.cond_dim, 2 * c}});
    out.push_back({p + "film_b", {1, 2 * c}});
  }
  out.push_back({"head.trans_w", {c, 1}});
  out.push_back({"head.trans_logscale", {1, 1}});
  out.push_back({"head.rot_torque_w", {c, 1}});
  out.push_back({"head.rot_direct_w", {c, 1}});
  out.push_back({"head.rot_logscale", {1, 1}});
  return out;
}

FieldParams init_field_params(const FieldConfig& cfg, std::uint64_t seed,
                              double trans_scale, double rot_scale) {
  cfg.validate();
  if (trans_scale <= 0.0 || rot_scale <= 0.0) {
    throw InvalidConfigError("init_field_params: saturation scales must be positive");
  }
  Rng rng(hash_combine(seed, 0xf1e1d));
  FieldParams fp;
  fp.cfg = cfg;
  for (const auto& [name, shape] : param_shapes(cfg)) {
    Mat t = Mat::Zero(shape.first, shape.second);
    const bool is_bias = name.ends_with("_b") || name == "time.b" ||
                         name == "cond.b1" || name == "cond.b2";
    const bool is_film = name.find("film") != std::string::npos;
    const bool is_embed = name.starts_with("embed.") || name == "cond.null";
    if (name == "head.trans_logscale") {
      t(0, 0) = std::log(trans_scale);
    } else if (name == "head.rot_logscale") {
      t(0, 0) = std::log(rot_scale);
    } else if (is_film || is_bias) {
      // zero: FiLM starts as the identity modulation
    } else if (is_embed) {
      for (int i = 0; i < t.size(); ++i) t.data()[i] = rng.normal();
    } else {
      // heads start small so the saturating bound sits in its linear regime
      const double gain = name.starts_with("head.") ? 0.1 : 1.0;
      const double sd = gain / std::sqrt(static_cast<double>(shape.first));
      for (int i = 0; i < t.size(); ++i) t.data()[i] = sd * rng.normal();
    }
    fp.store.add(name, std::move(t));
  }
  return fp;
}

// ---------------------------------------------------------------------------
// Plain head evaluators (shared with the taped forward via the same constants)
// ---------------------------------------------------------------------------

Mat3 inertia_tensor(const std::vector<Vec3>& offsets, const std::vector<double>& masses) {
  Mat3 inertia = Mat3::Zero();
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    const Vec3& r = offsets[i];
    inertia += masses[i] * (r.squaredNorm() * Mat3::Identity() - r * r.transpose());
  }
  return inertia;
}

namespace {

Mat3 regularized_inertia(const std::vector<Vec3>& offsets, const std::vector<double>& masses,
                         double tik_rel, double tik_abs) {
  Mat3 inertia = inertia_tensor(offsets, masses);
  const double eps = tik_rel * inertia.trace() / 3.0 + tik_abs;
  return inertia + eps * Mat3::Identity();
}

// 3 x 3m map from component-major stacked per-atom vectors to the angular
// momentum L = sum_a r_a x u_a.
Mat cross_sum_matrix(const std::vector<Vec3>& offsets) {
  const int m = static_cast<int>(offsets.size());
  Mat c = Mat::Zero(3, 3 * m);
  for (int a = 0; a < m; ++a) {
    const Vec3& r = offsets[a];
    c(0, m + a) = -r.z();
    c(0, 2 * m + a) = r.y();
    c(1, a) = r.z();
    c(1, 2 * m + a) = -r.x();
    c(2, a) = -r.y();
    c(2, m + a) = r.x();
  }
  return c;
}

}  // namespace

Vec3 torque_head(const std::vector<Vec3>& atom_vectors, const std::vector<Vec3>& offsets,
                 const std::vector<double>& masses, double tik_rel, double tik_abs,
                 double scale) {
  const int m = static_cast<int>(offsets.size());
  const Mat t = regularized_inertia(offsets, masses, tik_rel, tik_abs).inverse() *
                cross_sum_matrix(offsets);
  Vec u(3 * m);
  for (int a = 0; a < m; ++a) {
    u[a] = atom_vectors[a].x();
    u[m + a] = atom_vectors[a].y();
    u[2 * m + a] = atom_vectors[a].z();
  }
  return Vec3(tape::saturate_value(t * u, scale));
}

Vec3 direct_head(const std::vector<Vec3>& atom_vectors, double scale) {
  Vec3 mean = Vec3::Zero();
  for (const auto& v : atom_vectors) mean += v;
  mean /= static_cast<double>(atom_vectors.size());
  return Vec3(tape::saturate_value(mean, scale));
}

// ---------------------------------------------------------------------------
// Taped forward
// ---------------------------------------------------------------------------

namespace {

using tape::NodePtr;
using tape::Tape;

struct ForwardOut {
  NodePtr t_dot;  // 2 x 1
  NodePtr omega;  // 3 x 1
  std::vector<NodePtr> leaves;  // aligned with ParamStore order when with_grad
};

struct CondInput {
  bool is_null;
  double clipped;  // E_rel clipped to [0, e_max], scaled to [0, 1]
};

CondInput prepare_condition(const Condition& cond, const FieldConfig& cfg) {
  if (cond.is_null) return {true, 0.0};
  if (!(cond.e_rel >= 0.0)) {
    throw InvalidConfigError("Condition: E_rel must be >= 0");
  }
  return {false, std::min(cond.e_rel, cfg.e_max) / cfg.e_max};
}

ForwardOut build_forward(Tape& tp, const FieldParams& fp, const GraphInput& graph,
                         double t, const Condition& cond, RotHead rot_head,
                         bool with_grad) {
  const FieldConfig& cfg = fp.cfg;
  const int n = graph.n_atoms;
  const int n_edges = static_cast<int>(graph.edge_tgt.size());
  const int c = cfg.scalar_channels;
  if (n == 0 || graph.n_ads == 0) {
    throw InvalidConfigError("forward: graph has no adsorbate atoms");
  }
  for (int s : graph.species) {
    if (s < 0 || s >= cfg.n_species) {
      throw InvalidConfigError("forward: species id outside the embedding table");
    }
  }

  ForwardOut out;
  std::vector<NodePtr> p(fp.store.tensors.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = with_grad ? tp.leaf(fp.store.tensors[i]) : tp.constant(fp.store.tensors[i]);
  }
  if (with_grad) out.leaves = p;
  auto pn = [&](const std::string& name) { return p[fp.store.find(name)]; };

  // Constant edge geometry.
  Mat rbf(n_edges, cfg.n_rbf);
  Mat dhat3 = Mat::Zero(3 * n_edges, c);
  for (int e = 0; e < n_edges; ++e) {
    rbf.row(e) = rbf_embed(graph.edge_len[e], cfg.r_cut, cfg.n_rbf).transpose();
    const Vec3 dir = graph.edge_len[e] > 0.0 ? Vec3(graph.edge_vec[e] / graph.edge_len[e])
                                             : Vec3::Zero();
    dhat3.row(e).setConstant(dir.x());
    dhat3.row(n_edges + e).setConstant(dir.y());
    dhat3.row(2 * n_edges + e).setConstant(dir.z());
  }
  std::vector<int> src3(3 * n_edges), tgt3(3 * n_edges);
  for (int k = 0; k < 3; ++k) {
    for (int e = 0; e < n_edges; ++e) {
      src3[k * n_edges + e] = graph.edge_src[e] + k * n;
      tgt3[k * n_edges + e] = graph.edge_tgt[e] + k * n;
    }
  }
  auto rbf_c = tp.constant(std::move(rbf));
  auto dhat_c = tp.constant(std::move(dhat3));

  // Initial scalar features: species + tag embeddings + projected time.
  auto s_feat = tp.add(tp.gather_rows(pn("embed.species"), graph.species),
                       tp.gather_rows(pn("embed.tag"), graph.tag));
  Mat time_raw = time_embed_raw(t, cfg.time_dim).transpose();
  auto te = tp.add_rowvec(tp.matmul(tp.constant(std::move(time_raw)), pn("time.w")),
                          pn("time.b"));
  s_feat = tp.add_rowvec(s_feat, te);

  // Condition embedding (energy MLP or the learned null vector).
  const CondInput ci = prepare_condition(cond, cfg);
  NodePtr cond_embed;
  if (ci.is_null) {
    cond_embed = pn("cond.null");
  } else {
    Mat x = time_embed_raw(ci.clipped, cfg.cond_feat_dim).transpose();
    auto h = tp.silu(tp.add_rowvec(tp.matmul(tp.constant(std::move(x)), pn("cond.w1")),
                                   pn("cond.b1")));
    cond_embed = tp.add_rowvec(tp.matmul(h, pn("cond.w2")), pn("cond.b2"));
  }
  auto cond_act = tp.silu(cond_embed);
  auto ones_c = tp.constant(Mat::Ones(1, c));

  NodePtr v_feat;  // 3n x c, created by the first layer
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string pre = "l" + std::to_string(l) + ".";

    // Message block.
    auto phi_h = tp.silu(tp.add_rowvec(tp.matmul(s_feat, pn(pre + "phi1_w")),
                                       pn(pre + "phi1_b")));
    auto phi = tp.add_rowvec(tp.matmul(phi_h, pn(pre + "phi2_w")), pn(pre + "phi2_b"));
    auto phi_j = tp.gather_rows(phi, graph.edge_src);
    auto filt = tp.matmul(rbf_c, pn(pre + "filter_w"));
    auto msg = tp.cmul(phi_j, filt);
    auto m_ss = tp.slice_cols(msg, 0, c);
    auto m_vv = tp.slice_cols(msg, c, c);
    auto m_vs = tp.slice_cols(msg, 2 * c, c);

    auto ds = tp.scatter_rows(m_ss, graph.edge_tgt, n);
    auto dv = tp.scatter_rows(tp.cmul(tp.repeat3(m_vs), dhat_c), tgt3, 3 * n);
    if (v_feat) {
      auto dv2 = tp.scatter_rows(tp.cmul(tp.gather_rows(v_feat, src3), tp.repeat3(m_vv)),
                                 tgt3, 3 * n);
      dv = tp.add(dv, dv2);
    }
    s_feat = tp.add(s_feat, ds);
    v_feat = v_feat ? tp.add(v_feat, dv) : dv;

    // Update block (scalar/vector mixing).
    auto v_u = tp.matmul(v_feat, pn(pre + "mix_u"));
    auto v_v = tp.matmul(v_feat, pn(pre + "mix_v"));
    auto nrm = tp.sqrt_shift(tp.sum3(tp.cmul(v_v, v_v)), 1e-8);
    auto a_h = tp.silu(tp.add_rowvec(tp.matmul(tp.concat_cols(s_feat, nrm), pn(pre + "a1_w")),
                                     pn(pre + "a1_b")));
    auto a = tp.add_rowvec(tp.matmul(a_h, pn(pre + "a2_w")), pn(pre + "a2_b"));
    auto a_ss = tp.slice_cols(a, 0, c);
    auto a_sv = tp.slice_cols(a, c, c);
    auto a_vv = tp.slice_cols(a, 2 * c, c);
    auto dot = tp.sum3(tp.cmul(v_u, v_v));
    s_feat = tp.add(s_feat, tp.add(a_ss, tp.cmul(a_sv, dot)));
    v_feat = tp.add(v_feat, tp.cmul(tp.repeat3(a_vv), v_u));

    // FiLM on scalar features.
    auto film = tp.add_rowvec(tp.matmul(cond_act, pn(pre + "film_w")), pn(pre + "film_b"));
    auto gamma = tp.add(tp.slice_cols(film, 0, c), ones_c);
    auto beta = tp.slice_cols(film, c, c);
    s_feat = tp.add_rowvec(tp.mul_rowvec(s_feat, gamma), beta);
  }

  // Adsorbate mean pooling per spatial component, as a constant 3 x 3n map.
  Mat pool = Mat::Zero(3, 3 * n);
  for (int k = 0; k < 3; ++k) {
    for (int a = graph.n_slab; a < n; ++a) {
      pool(k, k * n + a) = 1.0 / graph.n_ads;
    }
  }
  auto pooled = tp.matmul(tp.constant(std::move(pool)), v_feat);

  auto t3 = tp.matmul(pooled, pn("head.trans_w"));
  out.t_dot = tp.saturate(tp.slice_rows(t3, 0, 2), pn("head.trans_logscale"));

  if (rot_head == RotHead::Torque) {
    const std::vector<double> masses(graph.n_ads, cfg.inertia_mass);
    const Mat t_ads = regularized_inertia(graph.ads_offsets, masses, cfg.tik_rel,
                                          cfg.tik_abs).inverse() *
                      cross_sum_matrix(graph.ads_offsets);
    // Embed the 3 x 3n_ads map into 3 x 3n (slab columns are zero).
    Mat t_full = Mat::Zero(3, 3 * n);
    for (int k = 0; k < 3; ++k) {
      for (int a = 0; a < graph.n_ads; ++a) {
        for (int row = 0; row < 3; ++row) {
          t_full(row, k * n + graph.n_slab + a) = t_ads(row, k * graph.n_ads + a);
        }
      }
    }
    auto u = tp.matmul(v_feat, pn("head.rot_torque_w"));
    auto w_raw = tp.matmul(tp.constant(std::move(t_full)), u);
    out.omega = tp.saturate(w_raw, pn("head.rot_logscale"));
  } else {
    auto u = tp.matmul(pooled, pn("head.rot_direct_w"));
    out.omega = tp.saturate(u, pn("head.rot_logscale"));
  }
  return out;
}

}  // namespace

VelocityOut forward(const FieldParams& params, const GraphInput& graph, double t,
                    const Condition& cond, RotHead rot_head) {
  Tape tp;
  const ForwardOut fo = build_forward(tp, params, graph, t, cond, rot_head, false);
  VelocityOut v;
  v.t_dot = Vec2(fo.t_dot->value(0, 0), fo.t_dot->value(1, 0));
  v.omega = Vec3(fo.omega->value(0, 0), fo.omega->value(1, 0), fo.omega->value(2, 0));
  if (!v.t_dot.allFinite() || !v.omega.allFinite()) {
    throw NonFiniteError("forward: non-finite velocity output");
  }
  return v;
}

std::pair<Vec, Vec> film_condition(const FieldParams& params, const Condition& cond,
                                   int layer) {
  const FieldConfig& cfg = params.cfg;
  const int c = cfg.scalar_channels;
  const CondInput ci = prepare_condition(cond, cfg);
  Mat embed;
  if (ci.is_null) {
    embed = params.store.at("cond.null");
  } else {
    const Mat x = time_embed_raw(ci.clipped, cfg.cond_feat_dim).transpose();
    Mat h = x * params.store.at("cond.w1") + params.store.at("cond.b1");
    h = (h.array() / (1.0 + (-h.array()).exp())).matrix();  // silu
    embed = h * params.store.at("cond.w2") + params.store.at("cond.b2");
  }
  Mat act = embed.array() / (1.0 + (-embed.array()).exp());
  const std::string pre = "l" + std::to_string(layer) + ".";
  Mat film = act * params.store.at(pre + "film_w") + params.store.at(pre + "film_b");
  Vec gamma = film.row(0).head(c).transpose();
  gamma.array() += 1.0;
  Vec beta = film.row(0).tail(c).transpose();
  return {gamma, beta};
}

LossParts loss_and_grad(const FieldParams& params, const std::vector<BatchItem>& batch,
                        double lambda_rot, RotHead rot_head, ParamStore& grads,
                        int jobs) {
  if (batch.empty()) throw InvalidConfigError("loss_and_grad: empty batch");
  const int b = static_cast<int>(batch.size());

  struct ItemOut {
    double trans = 0.0;
    double rot = 0.0;
    std::vector<Mat> grad;
  };
  std::vector<ItemOut> items(b);

  parallel_for(b, jobs, [&](int i) {
    const BatchItem& it = batch[i];
    Tape tp;
    const ForwardOut fo = build_forward(tp, params, it.graph, it.t, it.cond, rot_head, true);

    const Vec2 dt(fo.t_dot->value(0, 0) - it.t_dot_teacher.x(),
                  fo.t_dot->value(1, 0) - it.t_dot_teacher.y());
    const Vec3 dw(fo.omega->value(0, 0) - it.omega_teacher.x(),
                  fo.omega->value(1, 0) - it.omega_teacher.y(),
                  fo.omega->value(2, 0) - it.omega_teacher.z());
    items[i].trans = dt.squaredNorm();
    items[i].rot = dw.squaredNorm();

    fo.t_dot->ensure_grad();
    fo.t_dot->grad = 2.0 / b * Mat(dt);
    fo.omega->ensure_grad();
    fo.omega->grad = 2.0 * lambda_rot / b * Mat(dw);
    tp.backward();

    items[i].grad.resize(fo.leaves.size());
    for (std::size_t k = 0; k < fo.leaves.size(); ++k) {
      fo.leaves[k]->ensure_grad();
      items[i].grad[k] = fo.leaves[k]->grad;
    }
  });

  grads.names = params.store.names;
  grads.tensors.clear();
  for (const auto& t : params.store.tensors) grads.tensors.push_back(Mat::Zero(t.rows(), t.cols()));

  LossParts parts;
  for (int i = 0; i < b; ++i) {
    parts.trans += items[i].trans / b;
    parts.rot += items[i].rot / b;
    for (std::size_t k = 0; k < grads.tensors.size(); ++k) grads.tensors[k] += items[i].grad[k];
  }
  parts.total = parts.trans + lambda_rot * parts.rot;
  if (!std::isfinite(parts.total)) {
    throw NonFiniteError("loss_and_grad: non-finite loss");
  }
  return parts;
}

}  // namespace rigidflow
