#include "hypokernel/manifest.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>

#include "json.hpp"

#include "hypokernel/estimates.hpp"
#include "hypokernel/fields.hpp"
#include "hypokernel/hoermander.hpp"
#include "hypokernel/kernels.hpp"
#include "hypokernel/models.hpp"
#include "hypokernel/oracle.hpp"
#include "hypokernel/parallel.hpp"
#include "hypokernel/parametrix.hpp"
#include "hypokernel/splitting.hpp"

namespace hypokernel::manifest {
namespace {

using nlohmann::json;

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::size_t pos = 0;
  while (true) {
    std::size_t next = s.find(sep, pos);
    parts.push_back(s.substr(pos, next == std::string::npos ? next : next - pos));
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  return parts;
}

double num_value(const std::string& s, const std::string& key) {
  try {
    return grid::parse_double(trim(s));
  } catch (const std::exception&) {
    throw ConfigError(key, "expected a number, got '" + s + "'");
  }
}

long long int_value(const std::string& s, const std::string& key) {
  const std::string t = trim(s);
  long long v = 0;
  auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (res.ec != std::errc() || res.ptr != t.data() + t.size())
    throw ConfigError(key, "expected an integer, got '" + s + "'");
  return v;
}

// Resolved-knob accessor: every getter records the effective value so the
// manifest echo is complete, and finish() rejects keys nothing consumed.
class Args {
 public:
  explicit Args(const std::map<std::string, std::string>& kv) : kv_(kv) {}

  [[nodiscard]] std::string str(const std::string& key, const std::string& def) {
    used_.insert(key);
    auto it = kv_.find(key);
    const std::string v = it == kv_.end() ? def : it->second;
    if (!v.empty()) echo_[key] = v;
    return v;
  }

  [[nodiscard]] std::string require_str(const std::string& key) {
    auto it = kv_.find(key);
    if (it == kv_.end() || trim(it->second).empty()) throw ConfigError(key, "required");
    used_.insert(key);
    echo_[key] = it->second;
    return it->second;
  }

  [[nodiscard]] double num(const std::string& key, double def) {
    used_.insert(key);
    auto it = kv_.find(key);
    const double v = it == kv_.end() ? def : num_value(it->second, key);
    echo_[key] = grid::format_double(v);
    return v;
  }

  [[nodiscard]] double require_num(const std::string& key) {
    const double v = num_value(require_str(key), key);
    echo_[key] = grid::format_double(v);
    return v;
  }

  [[nodiscard]] int integer(const std::string& key, int def, int lo, int hi) {
    used_.insert(key);
    auto it = kv_.find(key);
    const long long v = it == kv_.end() ? def : int_value(it->second, key);
    if (v < lo || v > hi)
      throw ConfigError(key, "expected " + std::to_string(lo) + ".." + std::to_string(hi));
    echo_[key] = std::to_string(v);
    return static_cast<int>(v);
  }

  [[nodiscard]] int require_int(const std::string& key, int lo, int hi) {
    const long long v = int_value(require_str(key), key);
    if (v < lo || v > hi)
      throw ConfigError(key, "expected " + std::to_string(lo) + ".." + std::to_string(hi));
    echo_[key] = std::to_string(v);
    return static_cast<int>(v);
  }

  [[nodiscard]] std::uint64_t u64(const std::string& key, std::uint64_t def) {
    used_.insert(key);
    auto it = kv_.find(key);
    std::uint64_t v = def;
    if (it != kv_.end()) {
      const std::string t = trim(it->second);
      auto res = std::from_chars(t.data(), t.data() + t.size(), v);
      if (res.ec != std::errc() || res.ptr != t.data() + t.size())
        throw ConfigError(key, "expected an unsigned integer, got '" + it->second + "'");
    }
    echo_[key] = std::to_string(v);
    return v;
  }

  [[nodiscard]] bool flag(const std::string& key, bool def) {
    used_.insert(key);
    auto it = kv_.find(key);
    bool v = def;
    if (it != kv_.end()) {
      const std::string t = trim(it->second);
      if (t == "1" || t == "true")
        v = true;
      else if (t == "0" || t == "false")
        v = false;
      else
        throw ConfigError(key, "expected 0/1/true/false, got '" + it->second + "'");
    }
    echo_[key] = v ? "1" : "0";
    return v;
  }

  [[nodiscard]] std::map<std::string, double> params() {
    std::map<std::string, double> p;
    for (const auto& [key, value] : kv_) {
      if (key.rfind("param.", 0) != 0) continue;
      const std::string name = key.substr(6);
      if (name.empty()) throw ConfigError(key, "empty parameter name");
      used_.insert(key);
      p[name] = num_value(value, key);
      echo_[key] = grid::format_double(p[name]);
    }
    return p;
  }

  void override_echo(const std::string& key, const std::string& value) { echo_[key] = value; }

  void finish() const {
    for (const auto& [key, value] : kv_)
      if (!used_.count(key)) throw ConfigError(key, "unknown key");
  }

  [[nodiscard]] const std::map<std::string, std::string>& echo() const { return echo_; }

 private:
  std::map<std::string, std::string> kv_;
  std::set<std::string> used_;
  std::map<std::string, std::string> echo_;
};

std::shared_ptr<const fields::VectorFieldSet> build_model(Args& a) {
  const std::string file = a.str("model_file", "");
  const std::string name = a.str("model", "");
  std::map<std::string, double> params = a.params();
  if (!file.empty() && !name.empty())
    throw ConfigError("model", "give either model or model_file, not both");
  if (file.empty() && name.empty()) {
    std::string names;
    for (const std::string& n : models::list_models()) names += (names.empty() ? "" : ", ") + n;
    throw ConfigError("model", "required: one of " + names + ", or model_file");
  }
  try {
    if (!file.empty()) {
      if (!params.empty())
        throw ConfigError("param", "custom model files take no parameter overrides");
      return models::load_custom_model(file);
    }
    return models::make_model(name, params);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(file.empty() ? "model" : "model_file", e.what());
  }
}

std::string grid_spec_string(const grid::TensorGrid& g) {
  std::string s;
  for (int i = 0; i < g.dim(); ++i) {
    const grid::Axis& ax = g.axis(i);
    if (i) s += ',';
    s += grid::format_double(ax.lo) + ":" + grid::format_double(ax.hi) + ":" +
         std::to_string(ax.count);
  }
  return s;
}

void check_grid_size(const grid::TensorGrid& g, const std::string& key) {
  if (g.size() > 20'000'000) throw ConfigError(key, "grid too large (> 2e7 nodes)");
}

// Explicit `grid` spec wins; otherwise the model's default box with `nodes`
// points per axis.  The resolved spec is echoed either way.
grid::TensorGrid resolve_grid(Args& a, const fields::VectorFieldSet& vf, int default_nodes) {
  const std::string spec = a.str("grid", "");
  const int nodes = a.integer("nodes", default_nodes, 2, 100000);
  grid::TensorGrid g;
  if (!spec.empty()) {
    g = parse_grid_spec(spec, "grid");
    if (g.dim() != vf.dim())
      throw ConfigError("grid", "expected " + std::to_string(vf.dim()) + " axes");
  } else {
    const models::Box box = models::default_box(vf);
    std::vector<grid::Axis> axes;
    for (int i = 0; i < box.dim(); ++i) axes.push_back({box.lo[i], box.hi[i], nodes});
    g = grid::TensorGrid(axes);
  }
  check_grid_size(g, spec.empty() ? "nodes" : "grid");
  a.override_echo("grid", grid_spec_string(g));
  return g;
}

// y-centered default box at the frozen Gaussian's truncation radius, the
// same default the parametrix solver uses.
grid::TensorGrid resolve_density_grid(Args& a, const fields::VectorFieldSet& vf,
                                      const Eigen::VectorXd& y, double t, int default_nodes) {
  const std::string spec = a.str("grid", "");
  const int nodes = a.integer("nodes", default_nodes, 2, 100000);
  grid::TensorGrid g;
  if (!spec.empty()) {
    g = parse_grid_spec(spec, "grid");
    if (g.dim() != vf.dim())
      throw ConfigError("grid", "expected " + std::to_string(vf.dim()) + " axes");
  } else {
    kernels::DiffusionMatrix dm(vf);
    kernels::FrozenGaussian fz(dm, y);
    if (fz.degenerate())
      throw ConfigError("grid", "diffusion is degenerate at y; give an explicit grid");
    const double r = fz.truncation_radius(t);
    std::vector<grid::Axis> axes;
    for (int i = 0; i < vf.dim(); ++i) axes.push_back({y[i] - r, y[i] + r, nodes});
    g = grid::TensorGrid(axes);
  }
  check_grid_size(g, spec.empty() ? "nodes" : "grid");
  a.override_echo("grid", grid_spec_string(g));
  return g;
}

Eigen::VectorXd resolve_point(Args& a, const std::string& key, int dim) {
  const std::string spec = a.str(key, "");
  Eigen::VectorXd v = Eigen::VectorXd::Zero(dim);
  if (!spec.empty()) {
    v = parse_vector(spec, key);
    if (v.size() != dim) throw ConfigError(key, "expected " + std::to_string(dim) + " components");
  }
  std::string echo;
  for (int i = 0; i < dim; ++i) echo += (i ? "," : "") + grid::format_double(v[i]);
  a.override_echo(key, echo);
  return v;
}

models::Box parse_box_spec(const std::string& spec, int dim, const std::string& key) {
  const std::vector<std::string> axes = split(spec, ',');
  if (static_cast<int>(axes.size()) != dim && axes.size() != 1)
    throw ConfigError(key, "expected " + std::to_string(dim) + " lo:hi pairs");
  models::Box box;
  for (int i = 0; i < dim; ++i) {
    const std::vector<std::string> lh = split(axes[axes.size() == 1 ? 0 : i], ':');
    if (lh.size() != 2) throw ConfigError(key, "expected lo:hi per axis");
    const double lo = num_value(lh[0], key), hi = num_value(lh[1], key);
    if (!(hi > lo)) throw ConfigError(key, "expected hi > lo");
    box.lo.push_back(lo);
    box.hi.push_back(hi);
  }
  return box;
}

std::string box_spec_string(const models::Box& box) {
  std::string s;
  for (int i = 0; i < box.dim(); ++i) {
    if (i) s += ',';
    s += grid::format_double(box.lo[i]) + ":" + grid::format_double(box.hi[i]);
  }
  return s;
}

json vec_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

json mat_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(r);
  }
  return rows;
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write: " + path);
  out << content;
  if (!out) throw std::runtime_error("write failed: " + path);
}

void write_table_csv(const std::string& path, const std::vector<std::string>& columns,
                     const std::vector<std::vector<double>>& rows) {
  std::string body;
  for (std::size_t c = 0; c < columns.size(); ++c) body += (c ? "," : "") + columns[c];
  body += '\n';
  for (const std::vector<double>& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c)
      body += (c ? "," : "") + grid::format_double(row[c]);
    body += '\n';
  }
  write_text(path, body);
}

struct RunOutcome {
  json diagnostics = json::object();
  json checks = json::object();
  json artifacts = json::object();
};

using Runner = std::function<void(RunOutcome&)>;

// ---- rank -------------------------------------------------------------------

// Probe semantics shared with weak_condition_probe, applied to fixed points.
hoermander::ConditionReport probe_at_points(const fields::VectorFieldSet& vf,
                                            const std::vector<Eigen::VectorXd>& pts,
                                            const hoermander::RankOptions& ro) {
  hoermander::ConditionReport rep;
  rep.requested = static_cast<int>(pts.size());
  rep.mode = ro.mode;
  rep.tol = ro.tol;
  rep.cap = ro.cap;
  rep.depth_histogram.assign(static_cast<std::size_t>(ro.cap) + 1, 0);
  int full = 0;
  for (const Eigen::VectorXd& x : pts) {
    rep.points.push_back(x);
    if (vf.lipschitz_only() && !vf.smooth_at(x.data())) {
      ++rep.skipped_non_smooth;
      rep.depth_per_point.push_back(-2);
      rep.rank_per_point.push_back(0);
      continue;
    }
    ++rep.evaluated;
    const hoermander::BracketBasis bb = hoermander::rank_recursion(vf, x, ro);
    rep.rank_per_point.push_back(bb.rank);
    if (bb.depth_at_full_rank) {
      ++full;
      rep.depth_per_point.push_back(*bb.depth_at_full_rank);
      ++rep.depth_histogram[static_cast<std::size_t>(*bb.depth_at_full_rank)];
    } else {
      ++rep.not_achieved;
      rep.depth_per_point.push_back(-1);
    }
  }
  rep.fraction_full_rank = rep.evaluated ? static_cast<double>(full) / rep.evaluated : 0.0;
  return rep;
}

Runner plan_rank(Args& a, const std::string& out) {
  auto vf = build_model(a);
  const std::string mode_s = a.str("mode", "classical");
  if (mode_s != "classical" && mode_s != "reduced")
    throw ConfigError("mode", "expected classical or reduced");
  hoermander::RankOptions ro;
  ro.mode = mode_s == "classical" ? hoermander::Mode::classical : hoermander::Mode::reduced;
  ro.cap = a.integer("cap", 3, 0, 12);
  ro.tol = a.num("tol", 1e-8);
  if (!(ro.tol > 0.0)) throw ConfigError("tol", "must be positive");
  const int samples = a.integer("samples", 200, 0, 1000000);
  models::Box box = models::default_box(*vf);
  const std::string box_s = a.str("box", "");
  if (!box_s.empty()) box = parse_box_spec(box_s, vf->dim(), "box");
  a.override_echo("box", box_spec_string(box));
  std::optional<grid::TensorGrid> gopt;
  const std::string grid_s = a.str("grid", "");
  if (!grid_s.empty()) {
    gopt = parse_grid_spec(grid_s, "grid");
    if (gopt->dim() != vf->dim())
      throw ConfigError("grid", "expected " + std::to_string(vf->dim()) + " axes");
    check_grid_size(*gopt, "grid");
    a.override_echo("grid", grid_spec_string(*gopt));
  }
  const std::string sampler_s = a.str("sampler", "halton");
  if (sampler_s != "halton" && sampler_s != "uniform")
    throw ConfigError("sampler", "expected halton or uniform");
  const unsigned seed = static_cast<unsigned>(a.integer("seed", 1, 0, 1 << 30));
  if (samples == 0 && !gopt) throw ConfigError("samples", "need samples > 0 or an explicit grid");

  return [=](RunOutcome& oc) {
    hoermander::ConditionReport rep;
    if (gopt) {
      std::vector<Eigen::VectorXd> pts(gopt->size());
      for (std::size_t k = 0; k < gopt->size(); ++k) pts[k] = gopt->node_vec(k);
      rep = probe_at_points(*vf, pts, ro);
    } else {
      hoermander::ProbeOptions po;
      po.rank = ro;
      po.sampler = sampler_s == "halton" ? hoermander::Sampler::halton
                                         : hoermander::Sampler::uniform;
      po.seed = seed;
      rep = hoermander::weak_condition_probe(*vf, box, samples, po);
    }

    std::vector<std::string> cols;
    for (int i = 0; i < vf->dim(); ++i) cols.push_back("x" + std::to_string(i + 1));
    cols.push_back("depth");
    cols.push_back("rank");
    std::vector<std::vector<double>> rows;
    for (std::size_t k = 0; k < rep.points.size(); ++k) {
      std::vector<double> row(rep.points[k].data(), rep.points[k].data() + vf->dim());
      row.push_back(rep.depth_per_point[k]);
      row.push_back(rep.rank_per_point[k]);
      rows.push_back(std::move(row));
    }
    write_table_csv(out + ".csv", cols, rows);
    oc.artifacts["points_csv"] = out + ".csv";

    oc.diagnostics["requested"] = rep.requested;
    oc.diagnostics["evaluated"] = rep.evaluated;
    oc.diagnostics["skipped_non_smooth"] = rep.skipped_non_smooth;
    oc.diagnostics["not_achieved"] = rep.not_achieved;
    oc.diagnostics["fraction_full_rank"] = rep.fraction_full_rank;
    oc.diagnostics["depth_histogram"] = rep.depth_histogram;
    oc.checks["full_rank_everywhere"] = rep.evaluated > 0 && rep.fraction_full_rank == 1.0;
  };
}

// ---- kernel -----------------------------------------------------------------

Runner plan_kernel(Args& a, const std::string& out) {
  auto vf = build_model(a);
  const double t = a.require_num("t");
  if (!(t > 0.0)) throw ConfigError("t", "must be positive");
  const Eigen::VectorXd y = resolve_point(a, "freeze_point", vf->dim());
  const grid::TensorGrid g = resolve_grid(a, *vf, 101);

  return [=](RunOutcome& oc) {
    kernels::DiffusionMatrix dm(*vf);
    kernels::FrozenGaussian n0(dm, y);
    grid::DensityGrid dg;
    dg.grid = g;
    dg.t = t;
    dg.y = y;
    dg.method = "frozen";
    dg.model = vf->name();
    dg.values.resize(g.size());
    for (std::size_t k = 0; k < g.size(); ++k) dg.values[k] = n0.value(t, g.node_vec(k), 0.0);
    for (Eigen::Index i = 0; i < n0.lambda().size(); ++i)
      dg.meta["lambda_" + std::to_string(i)] = n0.lambda()[i];
    grid::write_csv_file(dg, out + ".csv");
    oc.artifacts["density_csv"] = out + ".csv";

    bool finite = true;
    for (double v : dg.values) finite = finite && std::isfinite(v);
    oc.diagnostics["mass"] = dg.mass();
    oc.diagnostics["peak"] = dg.peak();
    oc.diagnostics["degenerate"] = n0.degenerate();
    oc.diagnostics["lambda"] = vec_json(n0.lambda());
    if (!n0.degenerate()) oc.diagnostics["truncation_radius"] = n0.truncation_radius(t);
    oc.checks["values_finite"] = finite;
  };
}

// ---- density ----------------------------------------------------------------

Runner plan_density(Args& a, const std::string& out) {
  auto vf = build_model(a);
  const double t = a.require_num("t");
  if (!(t > 0.0)) throw ConfigError("t", "must be positive");
  const Eigen::VectorXd y = resolve_point(a, "y", vf->dim());
  const int order = a.integer("order", 2, 0, 8);
  const int time_levels = a.integer("time_levels", 8, 1, 30);
  const int time_cells = a.integer("time_cells", 1, 1, 64);
  const bool residual = a.flag("residual", false);
  const grid::TensorGrid g = resolve_density_grid(a, *vf, y, t, 201);

  return [=](RunOutcome& oc) {
    parametrix::ParametrixOptions po;
    po.order = order;
    po.time_levels = time_levels;
    po.time_cells = time_cells;
    po.space = &g;
    grid::DensityGrid dg = parametrix::density_approx(*vf, y, t, po);
    grid::write_csv_file(dg, out + ".csv");
    oc.artifacts["density_csv"] = out + ".csv";

    json terms = json::array();
    for (int m = 1;; ++m) {
      auto it = dg.meta.find("term_norm_" + std::to_string(m));
      if (it == dg.meta.end()) break;
      terms.push_back(it->second);
    }
    oc.diagnostics["mass"] = dg.mass();
    oc.diagnostics["peak"] = dg.peak();
    oc.diagnostics["term_norms"] = terms;
    oc.diagnostics["series_residual"] = terms.empty() ? 0.0 : static_cast<double>(terms.back());
    oc.checks["mass_in_0.9_1.1"] = dg.mass() >= 0.9 && dg.mass() <= 1.1;

    if (residual) {
      // FD check of dt p = sum a_ij d2_ij p + b . grad p on interior nodes.
      const double ht = t * 1e-3;
      parametrix::ParametrixOptions pr = po;
      pr.space = &g;
      const grid::DensityGrid pm = parametrix::density_approx(*vf, y, t - ht, pr);
      const grid::DensityGrid pp = parametrix::density_approx(*vf, y, t + ht, pr);
      const int n = g.dim();
      std::vector<std::vector<double>> d2((std::size_t)n * n), d1(n);
      for (int i = 0; i < n; ++i) {
        std::vector<int> alpha(n, 0);
        alpha[i] = 1;
        d1[i] = estimates::x_derivative(dg, alpha);
        for (int j = i; j < n; ++j) {
          std::vector<int> ab(n, 0);
          ab[i] += 1;
          ab[j] += 1;
          d2[(std::size_t)i * n + j] = estimates::x_derivative(dg, ab);
        }
      }
      std::vector<int> multi(n);
      double worst = 0.0;
      for (std::size_t k = 0; k < g.size(); ++k) {
        g.unflatten(k, multi.data());
        bool interior = true;
        for (int i = 0; i < n; ++i)
          interior = interior && multi[i] >= 2 && multi[i] <= g.axis(i).count - 3;
        if (!interior) continue;
        const Eigen::VectorXd x = g.node_vec(k);
        const Eigen::MatrixXd ax = fields::assemble_diffusion(*vf, x);
        const Eigen::VectorXd bx = fields::drift(*vf, x);
        double lp = 0.0;
        for (int i = 0; i < n; ++i) {
          lp += bx[i] * d1[i][k];
          for (int j = i; j < n; ++j)
            lp += (i == j ? 1.0 : 2.0) * ax(i, j) * d2[(std::size_t)i * n + j][k];
        }
        const double dtv = (pp.values[k] - pm.values[k]) / (2.0 * ht);
        worst = std::max(worst, std::abs(dtv - lp));
      }
      oc.diagnostics["fd_residual_sup"] = worst;
      oc.diagnostics["fd_residual_rel"] = dg.peak() > 0 ? worst / dg.peak() : 0.0;
    }
  };
}

// ---- trotter ----------------------------------------------------------------

Runner plan_trotter(Args& a, const std::string& out) {
  auto vf = build_model(a);
  const double t = a.require_num("t");
  if (!(t > 0.0)) throw ConfigError("t", "must be positive");
  const Eigen::VectorXd y = resolve_point(a, "y", vf->dim());
  const Eigen::VectorXd freeze = a.str("freeze_point", "").empty()
                                     ? y
                                     : parse_vector(a.str("freeze_point", ""), "freeze_point");
  if (freeze.size() != vf->dim())
    throw ConfigError("freeze_point", "expected " + std::to_string(vf->dim()) + " components");
  {
    std::string echo;
    for (int i = 0; i < vf->dim(); ++i) echo += (i ? "," : "") + grid::format_double(freeze[i]);
    a.override_echo("freeze_point", echo);
  }
  const int m = a.integer("m", 8, 1, 4096);
  const int flow_steps = a.integer("flow_steps", 8, 1, 1024);
  const std::string mode_s = a.str("mode", "density");
  if (mode_s != "density" && mode_s != "function")
    throw ConfigError("mode", "expected density or function");
  const grid::TensorGrid g = resolve_grid(a, *vf, 81);

  return [=](RunOutcome& oc) {
    kernels::DiffusionMatrix dm(*vf);
    splitting::TrotterScheme scheme;
    scheme.leading = kernels::partial_frozen_leading(dm, *vf, freeze);
    scheme.vf = vf.get();
    scheme.grid = g;
    scheme.m = m;
    scheme.flow_steps = flow_steps;
    scheme.mode =
        mode_s == "density" ? splitting::TrotterMode::density : splitting::TrotterMode::function;
    grid::DensityGrid dg = splitting::trotter_density(scheme, y, t);
    dg.model = vf->name();
    grid::write_csv_file(dg, out + ".csv");
    oc.artifacts["density_csv"] = out + ".csv";

    double vmin = 0.0;
    for (double v : dg.values) vmin = std::min(vmin, v);
    oc.diagnostics["mass"] = dg.mass();
    oc.diagnostics["peak"] = dg.peak();
    oc.diagnostics["min_value"] = vmin;
    auto it = dg.meta.find("interp_exits");
    if (it != dg.meta.end()) oc.diagnostics["interp_exits"] = it->second;
    json d2 = json::array();
    for (int i = 0;; ++i) {
      auto d = dg.meta.find("d2_axis" + std::to_string(i));
      if (d == dg.meta.end()) break;
      d2.push_back(d->second);
    }
    oc.diagnostics["d2_max_by_axis"] = d2;
    oc.checks["mass_in_0.9_1.1"] = dg.mass() >= 0.9 && dg.mass() <= 1.1;
    oc.checks["nonnegative_within_1e-8"] = vmin >= -1e-8;
  };
}

// ---- walk -------------------------------------------------------------------

Runner plan_walk(Args& a, const std::string& out) {
  auto vf = build_model(a);
  const int gmax = vf->num_diffusion();
  const int i = a.require_int("i", 0, gmax);
  const int j = a.require_int("j", 0, gmax);
  const Eigen::VectorXd x = resolve_point(a, "x", vf->dim());
  const int steps = a.integer("steps", 32, 1, 100000);
  const std::string deltas_s = a.str("deltas", "0.1,0.03,0.01,0.003");
  std::vector<double> deltas;
  for (const std::string& d : split(deltas_s, ',')) {
    deltas.push_back(num_value(d, "deltas"));
    if (!(deltas.back() > 0.0)) throw ConfigError("deltas", "must be positive");
  }
  if (deltas.empty()) throw ConfigError("deltas", "required");
  {
    std::string echo;
    for (std::size_t k = 0; k < deltas.size(); ++k)
      echo += (k ? "," : "") + grid::format_double(deltas[k]);
    a.override_echo("deltas", echo);
  }

  return [=](RunOutcome& oc) {
    const Eigen::VectorXd bracket = fields::lie_bracket(*vf, j, i, x);
    const int n = vf->dim();
    std::vector<std::string> cols{"delta"};
    for (int c = 0; c < n; ++c) cols.push_back("estimate_" + std::to_string(c + 1));
    for (int c = 0; c < n; ++c) cols.push_back("bracket_" + std::to_string(c + 1));
    cols.push_back("error");

    std::vector<std::vector<double>> rows;
    std::vector<double> errors;
    for (double d : deltas) {
      const splitting::WalkResult w = splitting::square_walk(*vf, i, j, x, d, steps);
      const double err = (w.estimate - bracket).norm();
      errors.push_back(err);
      std::vector<double> row{d};
      for (int c = 0; c < n; ++c) row.push_back(w.estimate[c]);
      for (int c = 0; c < n; ++c) row.push_back(bracket[c]);
      row.push_back(err);
      rows.push_back(std::move(row));
    }
    write_table_csv(out + ".csv", cols, rows);
    oc.artifacts["walk_csv"] = out + ".csv";

    const double scale = 1.0 + bracket.norm();
    double emax = 0.0;
    for (double e : errors) emax = std::max(emax, e);
    const bool exact = emax <= 1e-10 * scale;
    // Least-squares log-log slope over the deltas with resolvable error.
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int used = 0;
    for (std::size_t k = 0; k < deltas.size(); ++k) {
      if (errors[k] <= 1e-12 * scale) continue;
      const double lx = std::log(deltas[k]), ly = std::log(errors[k]);
      sx += lx;
      sy += ly;
      sxx += lx * lx;
      sxy += lx * ly;
      ++used;
    }
    oc.diagnostics["bracket"] = vec_json(bracket);
    oc.diagnostics["max_error"] = emax;
    oc.diagnostics["exact"] = exact;
    if (used >= 2 && !exact) {
      const double slope = (used * sxy - sx * sy) / (used * sxx - sx * sx);
      oc.diagnostics["slope"] = slope;
      oc.checks["slope_in_band_or_exact"] = slope >= 0.8 && slope <= 1.5;
    } else {
      oc.diagnostics["slope"] = nullptr;
      oc.checks["slope_in_band_or_exact"] = exact;
    }
  };
}

// ---- mc ---------------------------------------------------------------------

Runner plan_mc(Args& a, const std::string& out) {
  auto vf = build_model(a);
  const double t = a.require_num("t");
  if (!(t > 0.0)) throw ConfigError("t", "must be positive");
  const Eigen::VectorXd x = resolve_point(a, "x", vf->dim());
  const int steps = a.integer("steps", 100, 1, 1000000);
  const int paths = a.integer("paths", 10000, 1, 100000000);
  const std::uint64_t seed = a.u64("seed", 1);
  const bool emit_samples = a.flag("emit_samples", false);
  const grid::TensorGrid g = resolve_grid(a, *vf, 61);

  return [=](RunOutcome& oc) {
    oracle::SdeSpec spec;
    spec.vf = vf.get();
    spec.x0 = x;
    spec.t = t;
    spec.steps = steps;
    spec.paths = paths;
    spec.seed = seed;
    const oracle::SampleSet ss = oracle::euler_maruyama(spec);
    if (ss.kept() == 0) throw std::runtime_error("mc: every path diverged");
    const oracle::MomentSummary mom = oracle::moments(ss);
    oracle::KdeResult kde = oracle::kde_density(ss.points, g);
    kde.density.t = t;
    kde.density.y = x;
    kde.density.method = "mc_kde";
    kde.density.model = vf->name();
    grid::write_csv_file(kde.density, out + ".csv");
    oc.artifacts["density_csv"] = out + ".csv";
    if (emit_samples) {
      std::vector<std::string> cols;
      for (int c = 0; c < vf->dim(); ++c) cols.push_back("x" + std::to_string(c + 1));
      std::vector<std::vector<double>> rows;
      for (Eigen::Index r = 0; r < ss.points.rows(); ++r) {
        std::vector<double> row(vf->dim());
        for (int c = 0; c < vf->dim(); ++c) row[(std::size_t)c] = ss.points(r, c);
        rows.push_back(std::move(row));
      }
      write_table_csv(out + "_samples.csv", cols, rows);
      oc.artifacts["samples_csv"] = out + "_samples.csv";
    }

    oc.diagnostics["kept"] = ss.kept();
    oc.diagnostics["excluded"] = ss.excluded;
    oc.diagnostics["mean"] = vec_json(mom.mean);
    oc.diagnostics["mean_se"] = vec_json(mom.mean_se);
    oc.diagnostics["cov"] = mat_json(mom.cov);
    oc.diagnostics["cov_se"] = mat_json(mom.cov_se);
    oc.diagnostics["bandwidth"] = vec_json(kde.bandwidth);
    oc.diagnostics["bandwidth_floored"] = kde.floored;
    oc.diagnostics["kde_mass"] = kde.density.mass();
    oc.checks["all_paths_kept"] = ss.excluded == 0;
  };
}

// ---- envelope ---------------------------------------------------------------

estimates::DerivativeRequest parse_order_spec(const std::string& s, int dim) {
  const std::vector<std::string> parts = split(s, ':');
  if (parts.empty() || parts.size() > 3) throw ConfigError("order", "expected j[:alpha[:beta]]");
  estimates::DerivativeRequest req;
  req.j = static_cast<int>(int_value(parts[0], "order"));
  auto multi = [&](const std::string& p) {
    std::vector<int> idx(static_cast<std::size_t>(dim), 0);
    if (p.empty()) return idx;
    const std::vector<std::string> comps = split(p, ',');
    if (static_cast<int>(comps.size()) != dim)
      throw ConfigError("order", "expected " + std::to_string(dim) + " components per index");
    for (int i = 0; i < dim; ++i) idx[(std::size_t)i] = static_cast<int>(int_value(comps[(std::size_t)i], "order"));
    return idx;
  };
  req.alpha = multi(parts.size() > 1 ? parts[1] : "");
  req.beta = multi(parts.size() > 2 ? parts[2] : "");
  if (req.j < 0 || req.j > 2) throw ConfigError("order", "j must be 0..2");
  for (int v : req.alpha)
    if (v < 0) throw ConfigError("order", "alpha components must be >= 0");
  for (int v : req.beta)
    if (v < 0 || v > 2) throw ConfigError("order", "beta components must be 0..2");
  return req;
}

Runner plan_envelope(Args& a, const std::string& /*out*/) {
  const std::string in_s = a.require_str("in");
  std::vector<grid::DensityGrid> family;
  for (const std::string& path : split(in_s, ',')) {
    if (trim(path).empty()) throw ConfigError("in", "empty path in list");
    try {
      family.push_back(grid::read_csv_file(trim(path)));
    } catch (const std::exception& e) {
      throw ConfigError("in", trim(path) + ": " + e.what());
    }
  }
  if (family.size() < 2)
    throw ConfigError("in", "need at least two time levels to fit an envelope");
  const int dim = family.front().grid.dim();
  const Eigen::VectorXd y = resolve_point(a, "y", dim);
  estimates::DerivativeRequest req = parse_order_spec(a.str("order", "0"), dim);
  bool beta_zero = true;
  for (int v : req.beta) beta_zero = beta_zero && v == 0;
  if (req.j != 0 || !beta_zero)
    throw ConfigError("order",
                      "grid files carry one (t, y) sample each; only x-derivative orders "
                      "(j = 0, beta = 0) can be fitted from them");
  bool alpha_zero = true;
  for (int v : req.alpha) alpha_zero = alpha_zero && v == 0;
  std::set<double> tset;
  for (grid::DensityGrid& member : family) {
    member.y = y;
    if (!tset.insert(member.t).second)
      throw ConfigError("in", "duplicate t level: " + grid::format_double(member.t));
    if (!alpha_zero) {
      try {
        member.values = estimates::x_derivative(member, req.alpha);
      } catch (const std::exception& e) {
        throw ConfigError("order", e.what());
      }
      member.method = "derivative";
    }
  }

  return [=, family = std::move(family)](RunOutcome& oc) {
    const estimates::EnvelopeSamples samples = estimates::envelope_samples(family);
    const estimates::EnvelopeFit fit = estimates::fit_envelope(samples, req);
    json f;
    f["j"] = fit.j;
    f["alpha"] = fit.alpha;
    f["beta"] = fit.beta;
    f["a"] = fit.a;
    f["b"] = fit.b;
    f["n"] = fit.n;
    f["m"] = fit.m;
    f["n_int"] = fit.n_int;
    f["m_int"] = fit.m_int;
    f["margin"] = fit.margin;
    f["a_monotone"] = fit.a_monotone;
    f["zero"] = fit.zero;
    f["samples"] = fit.samples;
    f["t"] = fit.t;
    f["a_level"] = fit.a_level;
    f["b_level"] = fit.b_level;
    oc.diagnostics["envelope_fit"] = f;
    oc.checks["margin_nonnegative"] = fit.margin >= 0.0;
    oc.checks["a_monotone"] = fit.a_monotone;
  };
}

// ---- approx -----------------------------------------------------------------

Runner plan_approx(Args& a, const std::string& out) {
  auto vf = build_model(a);
  const double t = a.require_num("t");
  if (!(t > 0.0)) throw ConfigError("t", "must be positive");
  const Eigen::VectorXd y = resolve_point(a, "y", vf->dim());
  estimates::LimitOptions lo;
  const std::string ladder_s = a.str("ladder", "4,8,16");
  lo.ladder.clear();
  for (const std::string& m : split(ladder_s, ',')) {
    lo.ladder.push_back(static_cast<int>(int_value(m, "ladder")));
    if (lo.ladder.back() < 1) throw ConfigError("ladder", "entries must be >= 1");
    if (lo.ladder.size() > 1 && lo.ladder.back() <= lo.ladder[lo.ladder.size() - 2])
      throw ConfigError("ladder", "entries must be strictly increasing");
  }
  {
    std::string echo;
    for (std::size_t k = 0; k < lo.ladder.size(); ++k)
      echo += (k ? "," : "") + std::to_string(lo.ladder[k]);
    a.override_echo("ladder", echo);
  }
  lo.order = a.integer("order", 2, 0, 8);
  lo.time_levels = a.integer("time_levels", 4, 1, 30);
  lo.time_cells = a.integer("time_cells", 1, 1, 64);
  lo.quad_nodes = a.integer("quad", 17, 3, 201);
  if (lo.quad_nodes % 2 == 0) throw ConfigError("quad", "must be odd");
  lo.space_nodes = a.integer("nodes", 101, 2, 100000);
  std::shared_ptr<grid::TensorGrid> gptr;
  const std::string spec = a.str("grid", "");
  if (!spec.empty()) {
    gptr = std::make_shared<grid::TensorGrid>(parse_grid_spec(spec, "grid"));
    if (gptr->dim() != vf->dim())
      throw ConfigError("grid", "expected " + std::to_string(vf->dim()) + " axes");
    check_grid_size(*gptr, "grid");
    a.override_echo("grid", grid_spec_string(*gptr));
  }

  return [=](RunOutcome& oc) {
    estimates::LimitOptions run = lo;
    run.space = gptr ? gptr.get() : nullptr;
    const estimates::CauchyReport rep = estimates::density_limit_check(*vf, t, y, run);
    grid::write_csv_file(rep.densities.back(), out + ".csv");
    oc.artifacts["density_csv"] = out + ".csv";

    oc.diagnostics["ladder"] = rep.ladder;
    oc.diagnostics["sup_diff"] = rep.sup_diff;
    oc.diagnostics["cross_residual"] = rep.cross_residual;
    oc.diagnostics["mass"] = rep.mass;
    oc.diagnostics["decreasing"] = rep.decreasing;
    bool cross_dec = true;
    for (std::size_t k = 1; k < rep.cross_residual.size(); ++k)
      cross_dec = cross_dec && rep.cross_residual[k] < rep.cross_residual[k - 1];
    oc.checks["cauchy_decreasing"] = rep.decreasing;
    oc.checks["cross_residual_decreasing"] = cross_dec;
  };
}

// ---- compare ----------------------------------------------------------------

Runner plan_compare(Args& a, const std::string& /*out*/) {
  grid::DensityGrid pa, pb;
  const std::string fa = a.require_str("a"), fb = a.require_str("b");
  try {
    pa = grid::read_csv_file(fa);
  } catch (const std::exception& e) {
    throw ConfigError("a", fa + ": " + e.what());
  }
  try {
    pb = grid::read_csv_file(fb);
  } catch (const std::exception& e) {
    throw ConfigError("b", fb + ": " + e.what());
  }
  if (!pa.grid.same_layout(pb.grid)) throw ConfigError("b", "grid layout differs from a");
  const double tv_tol = a.num("tv_tol", 0.0);
  if (tv_tol < 0.0) throw ConfigError("tv_tol", "must be >= 0");

  return [=, pa = std::move(pa), pb = std::move(pb)](RunOutcome& oc) {
    const double sup = grid::sup_diff(pa, pb);
    const double tv = grid::tv_distance(pa, pb);
    oc.diagnostics["sup_diff"] = sup;
    oc.diagnostics["tv_distance"] = tv;
    oc.diagnostics["t_a"] = pa.t;
    oc.diagnostics["t_b"] = pb.t;
    oc.diagnostics["mass_a"] = pa.mass();
    oc.diagnostics["mass_b"] = pb.mass();
    oc.diagnostics["peak_a"] = pa.peak();
    oc.diagnostics["peak_b"] = pb.peak();
    if (tv_tol > 0.0) oc.checks["tv_within_tol"] = tv <= tv_tol;
  };
}

json versions_json() {
  json v;
  v["hypokernel"] = kVersion;
  v["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
               "." + std::to_string(EIGEN_MINOR_VERSION);
  v["nlohmann_json"] = std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                       std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                       std::to_string(NLOHMANN_JSON_VERSION_PATCH);
  v["compiler"] = __VERSION__;
  return v;
}

}  // namespace

const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> list{"rank",    "kernel", "density",  "trotter", "walk",
                                             "mc",      "envelope", "approx", "compare"};
  return list;
}

std::map<std::string, std::string> load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  int ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config", path + ":" + std::to_string(ln) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty())
      throw ConfigError("config", path + ":" + std::to_string(ln) + ": empty key");
    if (kv.count(key))
      throw ConfigError("config", path + ":" + std::to_string(ln) + ": duplicate key: " + key);
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

grid::TensorGrid parse_grid_spec(const std::string& spec, const std::string& key) {
  std::vector<grid::Axis> axes;
  for (const std::string& part : split(spec, ',')) {
    const std::vector<std::string> f = split(part, ':');
    if (f.size() != 3) throw ConfigError(key, "expected lo:hi:count per axis, got '" + part + "'");
    grid::Axis ax;
    ax.lo = num_value(f[0], key);
    ax.hi = num_value(f[1], key);
    ax.count = static_cast<int>(int_value(f[2], key));
    if (!(ax.hi > ax.lo)) throw ConfigError(key, "expected hi > lo");
    if (ax.count < 2 || ax.count > 1000000) throw ConfigError(key, "expected 2..1000000 nodes");
    axes.push_back(ax);
  }
  if (axes.empty() || axes.size() > 8) throw ConfigError(key, "expected 1..8 axes");
  return grid::TensorGrid(axes);
}

Eigen::VectorXd parse_vector(const std::string& s, const std::string& key) {
  const std::vector<std::string> parts = split(s, ',');
  Eigen::VectorXd v(static_cast<Eigen::Index>(parts.size()));
  for (std::size_t i = 0; i < parts.size(); ++i)
    v[static_cast<Eigen::Index>(i)] = num_value(parts[i], key);
  return v;
}

int dispatch(const ExperimentConfig& cfg) {
  const std::vector<std::string>& subs = subcommands();
  if (std::find(subs.begin(), subs.end(), cfg.subcommand) == subs.end()) {
    std::string names;
    for (const std::string& s : subs) names += (names.empty() ? "" : ", ") + s;
    throw ConfigError("subcommand", "unknown subcommand '" + cfg.subcommand + "'; expected one of " + names);
  }

  Args a(cfg.kv);
  const std::string subecho = a.str("subcommand", cfg.subcommand);
  if (subecho != cfg.subcommand)
    throw ConfigError("subcommand", "config file says '" + subecho + "' but the command line says '" +
                                        cfg.subcommand + "'");
  const std::string out = a.require_str("out");
  const std::filesystem::path outp(out);
  if (outp.has_parent_path() && !std::filesystem::exists(outp.parent_path()))
    throw ConfigError("out", "directory does not exist: " + outp.parent_path().string());
  const int workers = a.integer("workers", 0, 0, 1024);
  if (workers > 0) setenv("HYPOKERNEL_WORKERS", std::to_string(workers).c_str(), 1);
  a.override_echo("workers",
                  std::to_string(workers > 0 ? workers : hypokernel::worker_count()));

  Runner run;
  if (cfg.subcommand == "rank")
    run = plan_rank(a, out);
  else if (cfg.subcommand == "kernel")
    run = plan_kernel(a, out);
  else if (cfg.subcommand == "density")
    run = plan_density(a, out);
  else if (cfg.subcommand == "trotter")
    run = plan_trotter(a, out);
  else if (cfg.subcommand == "walk")
    run = plan_walk(a, out);
  else if (cfg.subcommand == "mc")
    run = plan_mc(a, out);
  else if (cfg.subcommand == "envelope")
    run = plan_envelope(a, out);
  else if (cfg.subcommand == "approx")
    run = plan_approx(a, out);
  else
    run = plan_compare(a, out);
  a.finish();

  json m;
  m["tool"] = "hypokernel";
  m["version"] = kVersion;
  m["versions"] = versions_json();
  m["subcommand"] = cfg.subcommand;
  json echo = json::object();
  for (const auto& [key, value] : a.echo()) echo[key] = value;
  echo["subcommand"] = cfg.subcommand;
  m["config"] = echo;

  RunOutcome oc;
  int code = 0;
  std::string error;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    run(oc);
  } catch (const std::exception& e) {
    code = 1;
    error = e.what();
  }
  const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;

  m["wall_time_seconds"] = dt.count();
  m["artifacts"] = oc.artifacts;
  m["diagnostics"] = oc.diagnostics;
  m["checks"] = oc.checks;
  m["ok"] = code == 0;
  m["error"] = code == 0 ? json() : json(error);
  write_text(out + ".json", m.dump(2) + "\n");

  if (code == 0) {
    std::cout << "[hypokernel] " << cfg.subcommand << ": ok -> " << out << ".json\n";
  } else {
    std::cout << "[hypokernel] " << cfg.subcommand << ": error -> " << out << ".json\n";
    std::cerr << "runtime error: " << error << "\n";
  }
  return code;
}

}  // namespace hypokernel::manifest
