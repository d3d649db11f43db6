#include "nff/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "nff/checkpoint.hpp"
#include "nff/errors.hpp"

namespace nff {

namespace {

const std::set<std::string> kKnownKeys = {
    "kind", "seed", "snapshots",
    "field.transform", "field.sigma", "field.length", "field.gamma", "field.mean", "field.amplitude",
    "forcing", "forcing.value",
    "sensors.k", "sensors.f", "sensors.u", "active.k", "active.f", "active.u",
    "solver.nodes",
    "model.latent", "model.ref_hidden", "model.ref_layers", "model.c_floor", "model.blocks",
    "model.flow_hidden", "model.flow_layers", "model.s_clamp",
    "train.epochs", "train.batch", "train.lr",
    "physics.w_data", "physics.w_equ", "physics.w_bnd", "physics.radius", "physics.collocation",
    "physics.boundary", "physics.fd_step",
    "eval.grid", "eval.draws", "eval.reference_draws", "eval.mc_budget", "eval.spectra",
};

bool starts_with_any(const std::string& key, std::initializer_list<const char*> prefixes) {
  for (const char* p : prefixes)
    if (key.starts_with(p)) return true;
  return false;
}

std::string hash_filtered(const Config& cfg, const std::function<bool(const std::string&)>& keep) {
  Config out;
  for (const auto& [k, v] : cfg.entries())
    if (keep(k)) out.set(k, v);
  return out.hash();
}

std::string sensor_key(const char* prefix, Field f) { return std::string(prefix) + field_name(f); }

ad::Tensor concat_rows(const std::vector<ad::Tensor>& parts, std::size_t cols) {
  std::size_t rows = 0;
  for (const auto& p : parts) rows += p.rows();
  ad::Tensor out(rows, cols);
  std::size_t r = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + r * cols);
    r += p.rows();
  }
  return out;
}

ad::Tensor slice_columns(const ad::Tensor& t, std::size_t begin, std::size_t count) {
  ad::Tensor out(t.rows(), count);
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = t(r, begin + c);
  return out;
}

/// Index of the grid node at coordinate v, or throws when v is not a node.
std::size_t node_index(double v, double lo, double h, std::size_t n) {
  const double s = (v - lo) / h;
  const long i = std::lround(s);
  if (i < 0 || static_cast<std::size_t>(i) >= n || std::abs(s - static_cast<double>(i)) > 1e-9) {
    throw ConfigError("2-D points must lie on solver grid nodes");
  }
  return static_cast<std::size_t>(i);
}

std::string csv_header_comment(const std::string& hash) { return "# config_hash=" + hash + "\n"; }

std::string x_columns(std::size_t dim_x) { return dim_x == 1 ? "x0" : "x0,x1"; }

void append_x(std::string& line, const ad::Tensor& x, std::size_t r) {
  for (std::size_t j = 0; j < x.cols(); ++j) line += format_double(x(r, j)) + ",";
}

const FieldFlow& field_model(const Model& m, Field f) {
  if (m.field) {
    if (f != Field::K) throw ConfigError("field-learning models hold only k");
    return *m.field;
  }
  const FieldSlot& s = m.sde->slot(f);
  if (!s.learned()) throw ConfigError(std::string("field ") + field_name(f) + " is not learned");
  return *s.flow;
}

}  // namespace

ExperimentKind parse_kind(const std::string& s) {
  if (s == "field-learning") return ExperimentKind::FieldLearning;
  if (s == "forward-sde") return ExperimentKind::ForwardSde;
  if (s == "inverse-sde") return ExperimentKind::InverseSde;
  if (s == "mixed-sde") return ExperimentKind::MixedSde;
  if (s == "2d-forward") return ExperimentKind::Forward2d;
  throw ConfigError("unknown experiment kind '" + s + "'");
}

const char* kind_name(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::FieldLearning: return "field-learning";
    case ExperimentKind::ForwardSde: return "forward-sde";
    case ExperimentKind::InverseSde: return "inverse-sde";
    case ExperimentKind::MixedSde: return "mixed-sde";
    case ExperimentKind::Forward2d: return "2d-forward";
  }
  return "?";
}

Experiment::Experiment(Config cfg) : cfg_(std::move(cfg)) {
  for (const auto& [k, v] : cfg_.entries())
    if (!kKnownKeys.contains(k)) throw ConfigError("unknown config key '" + k + "'");
  if (!cfg_.has("kind")) throw ConfigError("config: missing 'kind'");
  if (!cfg_.has("seed")) throw ConfigError("config: missing 'seed'");
  kind_ = parse_kind(cfg_.str("kind"));
  seed_ = cfg_.u64("seed");

  for (const char* key : {"field.transform", "field.sigma"})
    if (!cfg_.has(key)) throw ConfigError(std::string("config: missing '") + key + "'");
  if (kind_ == ExperimentKind::Forward2d ? !cfg_.has("field.gamma") : !cfg_.has("field.length")) {
    throw ConfigError(kind_ == ExperimentKind::Forward2d ? "config: missing 'field.gamma'"
                                                         : "config: missing 'field.length'");
  }
  (void)field_spec();
  if (is_sde()) {
    if (!cfg_.has("forcing")) throw ConfigError("config: missing 'forcing'");
    (void)forcing_learned();
    if (kind_ == ExperimentKind::Forward2d && forcing_learned()) {
      throw ConfigError("2d-forward supports only constant forcing");
    }
    if (field_spec().transform == Transform::MixedExp && kind_ == ExperimentKind::Forward2d) {
      throw ConfigError("mixed-exp fields are 1-D only");
    }
  }
  if (snapshots() == 0) throw ConfigError("config: snapshots must be positive");
  for (Field f : kAllFields) {
    if (active(f) > sensors(f)) {
      throw ConfigError(std::string("config: active.") + field_name(f) + " exceeds sensors." + field_name(f));
    }
    if (!is_sde() && f != Field::K && sensors(f) > 0) throw ConfigError("field-learning uses only k sensors");
  }
  if (active(Field::K) == 0 && !is_sde()) throw ConfigError("field-learning needs active k sensors");
  if (is_sde() && !forcing_learned() && sensors(Field::F) > 0) {
    throw ConfigError("constant forcing takes no f sensors");
  }
  if (train_config().batch == 0 || train_config().batch > snapshots()) {
    throw ConfigError("config: train.batch must be in [1, snapshots]");
  }
  const std::size_t n = solver_nodes();
  if (n < 3) throw ConfigError("config: solver.nodes must be at least 3");
  const std::size_t g = eval_grid_size();
  if (g < 2) throw ConfigError("config: eval.grid must be at least 2");
  if (kind_ == ExperimentKind::Forward2d && (n - 1) % (g - 1) != 0) {
    throw ConfigError("config: eval.grid - 1 must divide solver.nodes - 1");
  }
  if (eval_draws() < 2 || reference_draws() < 2 || mc_budget() < 2) {
    throw ConfigError("config: evaluation draw counts must be at least 2");
  }
  const PhysicsConfig p = physics_config();
  if (p.w_data < 0 || p.w_equ < 0 || p.w_bnd < 0) throw ConfigError("config: negative loss weight");
  if (!(p.radius > 0.0) || p.radius > domain().side()) throw ConfigError("config: physics.radius out of range");
}

Domain Experiment::domain() const {
  if (kind_ == ExperimentKind::Forward2d) return {2, 0.0, 1.0};
  return {1, -1.0, 1.0};
}

FieldSpec Experiment::field_spec() const {
  FieldSpec spec;
  const std::string t = cfg_.str("field.transform");
  if (t == "identity") spec.transform = Transform::Identity;
  else if (t == "exp") spec.transform = Transform::Exp;
  else if (t == "mixed-exp") spec.transform = Transform::MixedExp;
  else throw ConfigError("config: unknown field.transform '" + t + "'");
  const double sigma = cfg_.real("field.sigma");
  const double mean = cfg_.real("field.mean", 0.0);
  if (!(sigma > 0.0)) throw ConfigError("config: field.sigma must be positive");
  if (cfg_.has("field.gamma")) {
    spec.kernel = Kernel{sigma * sigma, cfg_.real("field.gamma"), mean};
    if (!(spec.kernel.gamma > 0.0)) throw ConfigError("config: field.gamma must be positive");
  } else {
    const double l = cfg_.real("field.length");
    if (!(l > 0.0)) throw ConfigError("config: field.length must be positive");
    spec.kernel = Kernel::squared_exponential(sigma, l, mean);
  }
  spec.amplitude = cfg_.real("field.amplitude", spec.transform == Transform::MixedExp ? 0.3 : 1.0);
  return spec;
}

bool Experiment::forcing_learned() const {
  if (!is_sde()) return false;
  const std::string f = cfg_.str("forcing");
  if (f == "gp") return true;
  if (f == "constant") return false;
  throw ConfigError("config: forcing must be 'gp' or 'constant'");
}

std::size_t Experiment::sensors(Field f) const { return cfg_.count(sensor_key("sensors.", f), 0); }

std::size_t Experiment::active(Field f) const { return cfg_.count(sensor_key("active.", f), sensors(f)); }

ad::Tensor Experiment::sensor_grid(Field f) const {
  const Domain d = domain();
  const std::size_t S = sensors(f);
  if (d.dim == 2) return halton_grid_sensors(S, solver_nodes(), d.lo, d.hi);
  return linspace(d.lo, d.hi, S);
}

std::size_t Experiment::solver_nodes() const {
  return cfg_.count("solver.nodes", kind_ == ExperimentKind::Forward2d ? 65 : 257);
}

FieldFlowConfig Experiment::flow_config() const {
  FieldFlowConfig c;
  c.dim_x = domain().dim;
  c.dim_value = 1;
  const bool wide = kind_ == ExperimentKind::InverseSde || kind_ == ExperimentKind::MixedSde;
  c.latent = cfg_.count("model.latent", wide ? 40 : 30);
  c.ref_hidden = cfg_.count("model.ref_hidden", c.ref_hidden);
  c.ref_layers = cfg_.count("model.ref_layers", c.ref_layers);
  c.c_floor = cfg_.real("model.c_floor", c.c_floor);
  c.blocks = cfg_.count("model.blocks", c.blocks);
  c.flow_hidden = cfg_.count("model.flow_hidden", c.flow_hidden);
  c.flow_layers = cfg_.count("model.flow_layers", c.flow_layers);
  c.s_clamp = cfg_.real("model.s_clamp", c.s_clamp);
  return c;
}

TrainConfig Experiment::train_config() const {
  TrainConfig t;
  t.epochs = cfg_.count("train.epochs", t.epochs);
  t.batch = cfg_.count("train.batch", t.batch);
  t.adam.lr = cfg_.real("train.lr", 1e-3);
  return t;
}

PhysicsConfig Experiment::physics_config() const {
  PhysicsConfig p;
  p.w_data = cfg_.real("physics.w_data", p.w_data);
  p.w_equ = cfg_.real("physics.w_equ", p.w_equ);
  p.w_bnd = cfg_.real("physics.w_bnd", p.w_bnd);
  p.radius = cfg_.real("physics.radius", 0.2 * domain().side());
  p.collocation = cfg_.count("physics.collocation", p.collocation);
  p.boundary = cfg_.count("physics.boundary", p.boundary);
  p.fd_step = cfg_.real("physics.fd_step", p.fd_step);
  return p;
}

ad::Tensor Experiment::eval_grid() const {
  const Domain d = domain();
  if (d.dim == 1) return linspace(d.lo, d.hi, eval_grid_size());
  const auto axis = linspace_values(d.lo, d.hi, eval_grid_size());
  return tensor_grid(axis, axis);
}

std::string Experiment::data_hash() const {
  return hash_filtered(cfg_, [](const std::string& k) {
    return !starts_with_any(k, {"model.", "train.", "physics.", "eval."});
  });
}

std::string Experiment::model_hash() const {
  return hash_filtered(cfg_, [](const std::string& k) { return k != "train.epochs" && !k.starts_with("eval."); });
}

std::vector<NamedParam> Model::parameters() {
  if (field) return field->parameters("k.");
  if (sde) return sde->parameters();
  return {};
}

Model build_model(const Experiment& e) {
  const std::uint64_t base = derive_seed(e.seed(), "model");
  const FieldFlowConfig fc = e.flow_config();
  Model m;
  if (!e.is_sde()) {
    m.field.emplace(fc, derive_seed(base, "k"));
    return m;
  }
  SdeModel sde;
  sde.domain = e.domain();
  sde.physics = e.physics_config();
  for (Field f : kAllFields) {
    FieldSlot& s = sde.slot(f);
    if (f == Field::F && !e.forcing_learned()) {
      s.constant = e.forcing_value();
      continue;
    }
    s.flow.emplace(fc, derive_seed(base, field_name(f)));
  }
  sde.validate();
  m.sde = std::move(sde);
  return m;
}

TruthDraws sample_truth(const Experiment& e, const ad::Tensor& points, std::size_t n, Rng& rng) {
  const Domain dom = e.domain();
  if (points.cols() != dom.dim) throw ShapeError("sample_truth: points have the wrong dimension");
  const std::size_t P = points.rows();
  const FieldSpec spec = e.field_spec();
  TruthDraws out;
  if (!e.is_sde()) {
    out.fields[0] = sample_field(spec, points, n, rng);
    return out;
  }

  const std::size_t N = e.solver_nodes();
  const double h = dom.side() / static_cast<double>(N - 1);
  if (dom.dim == 1) {
    // Sample on the solver nodes plus every point that is not a node.
    const auto nodes = linspace_values(dom.lo, dom.hi, N);
    std::vector<double> all(nodes);
    std::vector<std::size_t> where(P);
    for (std::size_t p = 0; p < P; ++p) {
      const double x = points[p];
      const double s = (x - dom.lo) / h;
      const long i = std::lround(s);
      if (i >= 0 && static_cast<std::size_t>(i) < N && std::abs(s - static_cast<double>(i)) < 1e-9) {
        where[p] = static_cast<std::size_t>(i);
      } else {
        where[p] = all.size();
        all.push_back(x);
      }
    }
    const ad::Tensor grid = ad::Tensor::column(all);
    const ad::Tensor k = sample_field(spec, grid, n, rng);
    const ad::Tensor f = e.forcing_learned() ? forcing_sample(grid, n, rng)
                                             : ad::Tensor(n, grid.rows(), e.forcing_value());
    for (auto& t : out.fields) t = ad::Tensor(n, P);
    for (std::size_t d = 0; d < n; ++d) {
      const auto kr = k.data().subspan(d * grid.rows(), N);
      const auto fr = f.data().subspan(d * grid.rows(), N);
      const auto u = solve_elliptic_1d(kr, fr, nodes);
      for (std::size_t p = 0; p < P; ++p) {
        out.fields[0](d, p) = k(d, where[p]);
        out.fields[1](d, p) = f(d, where[p]);
        out.fields[2](d, p) = interpolate_1d(nodes, u, points[p]);
      }
    }
    return out;
  }

  std::vector<std::size_t> where(P);
  for (std::size_t p = 0; p < P; ++p)
    where[p] = node_index(points(p, 0), dom.lo, h, N) * N + node_index(points(p, 1), dom.lo, h, N);
  const auto axis = linspace_values(dom.lo, dom.hi, N);
  ad::Tensor k = gp_sample_tensor(spec.kernel, axis, axis, n, rng);
  apply_transform(spec, ad::Tensor(), {}, k);
  const std::vector<double> f(N * N, e.forcing_value());
  for (auto& t : out.fields) t = ad::Tensor(n, P);
  for (std::size_t d = 0; d < n; ++d) {
    const auto kr = k.data().subspan(d * N * N, N * N);
    const auto u = solve_elliptic_2d(kr, f, N, h);
    for (std::size_t p = 0; p < P; ++p) {
      out.fields[0](d, p) = kr[where[p]];
      out.fields[1](d, p) = f[where[p]];
      out.fields[2](d, p) = u[where[p]];
    }
  }
  return out;
}

DatasetFile generate_dataset(const Experiment& e) {
  Rng rng(derive_seed(e.seed(), "data"));
  std::vector<ad::Tensor> grids;
  std::vector<Field> used;
  for (Field f : kAllFields) {
    if (e.sensors(f) == 0 || e.active(f) == 0) continue;
    grids.push_back(e.sensor_grid(f));
    used.push_back(f);
  }
  const std::size_t dim = e.domain().dim;
  DatasetFile file;
  file.config_hash = e.data_hash();
  file.seed = e.seed();
  file.dim_x = dim;
  if (used.empty()) return file;
  const ad::Tensor points = concat_rows(grids, dim);
  const TruthDraws truth = sample_truth(e, points, e.snapshots(), rng);
  std::size_t col = 0;
  for (std::size_t i = 0; i < used.size(); ++i) {
    const std::size_t S = grids[i].rows();
    const ad::Tensor values = slice_columns(truth.fields[static_cast<int>(used[i])], col, S);
    file.data.field(used[i]) = make_snapshots(values, grids[i], e.active(used[i]), rng);
    col += S;
  }
  return file;
}

TrainState initial_train_state(const Experiment& e) {
  TrainState s;
  s.rng = Rng(derive_seed(e.seed(), "train"));
  return s;
}

void train_model(Model& m, const Experiment& e, const DatasetFile& data, TrainState& state,
                 const EpochCallback& on_epoch) {
  if (data.config_hash != e.data_hash()) {
    throw DataMismatchError("dataset was generated from a different configuration");
  }
  if (data.dim_x != e.domain().dim) throw DataMismatchError("dataset dimension does not match the configuration");
  const TrainConfig tc = e.train_config();
  if (m.field) {
    train_field(*m.field, data.data.field(Field::K), tc, state, on_epoch);
  } else {
    train_sde(*m.sde, data.data, tc, state, on_epoch);
  }
}

TruthDraws sample_model(const Model& m, const ad::Tensor& points, std::size_t n, Rng& rng) {
  TruthDraws out;
  if (m.field) {
    out.fields[0] = generate_samples(*m.field, points, n, rng);
  } else {
    out.fields = generate_sde_samples(*m.sde, points, n, rng);
  }
  return out;
}

Evaluation evaluate(const Model& m, const Experiment& e, bool oracle_self) {
  const ad::Tensor grid = e.eval_grid();
  const std::size_t P = grid.rows(), dim = grid.cols();
  const std::string hash = e.model_hash();

  Rng ref_rng(derive_seed(e.seed(), "reference"));
  const TruthDraws truth = sample_truth(e, grid, e.reference_draws(), ref_rng);
  Rng check_rng(derive_seed(e.seed(), "reference-check"));
  const TruthDraws check = sample_truth(e, grid, e.mc_budget(), check_rng);
  TruthDraws model;
  std::size_t draws = e.reference_draws();
  if (oracle_self) {
    model = truth;
  } else {
    Rng rng(derive_seed(e.seed(), "eval"));
    draws = e.eval_draws();
    model = sample_model(m, grid, draws, rng);
  }

  Evaluation ev;
  nlohmann::json& js = ev.metrics;
  js["kind"] = kind_name(e.kind());
  js["config_hash"] = hash;
  js["draws"] = draws;
  js["reference_draws"] = e.reference_draws();
  js["mc_budget"] = e.mc_budget();
  js["fields"] = nlohmann::json::object();

  const FieldSpec spec = e.field_spec();
  const std::size_t K = e.spectra_count();
  for (Field f : kAllFields) {
    const int fi = static_cast<int>(f);
    if (!e.is_sde() && f != Field::K) continue;
    if (f == Field::F && !e.forcing_learned()) continue;

    const Moments mm = column_moments(model.fields[fi]);
    Moments ref = column_moments(truth.fields[fi]);
    std::vector<double> ref_spectra;
    // Closed-form moments replace Monte Carlo ones for single-field learning.
    std::optional<FieldMoments> exact;
    if (!e.is_sde() && dim == 1 && !oracle_self) exact = analytic_moments(spec, grid);
    if (exact) {
      ref.mean = exact->mean;
      ref.std = exact->std;
      ref_spectra = symmetric_eigenvalues(exact->cov);
    } else {
      ref_spectra = spectra(truth.fields[fi]);
    }
    const Moments mc = column_moments(check.fields[fi]);
    const std::vector<double> model_spectra = spectra(model.fields[fi]);

    nlohmann::json fj;
    fj["rel_err_mean"] = relative_error(ref.mean, mm.mean);
    fj["rel_err_std"] = relative_error(ref.std, mm.std);
    fj["mc_rel_err_mean"] = relative_error(ref.mean, mc.mean);
    fj["mc_rel_err_std"] = relative_error(ref.std, mc.std);
    const std::size_t k = std::min({K, model_spectra.size(), ref_spectra.size()});
    std::vector<double> top_model(model_spectra.begin(), model_spectra.begin() + k);
    std::vector<double> top_ref(ref_spectra.begin(), ref_spectra.begin() + k);
    double worst = 0.0;
    for (std::size_t i = 0; i < k; ++i) worst = std::max(worst, std::abs(top_model[i] - top_ref[i]) / top_ref[i]);
    fj["spectra_model"] = top_model;
    fj["spectra_reference"] = top_ref;
    fj["spectra_rel_err"] = worst;
    js["fields"][field_name(f)] = fj;

    std::string csv = csv_header_comment(hash) + x_columns(dim) + ",model_mean,model_std,ref_mean,ref_std\n";
    for (std::size_t p = 0; p < P; ++p) {
      std::string line;
      append_x(line, grid, p);
      line += format_double(mm.mean[p]) + "," + format_double(mm.std[p]) + "," + format_double(ref.mean[p]) + "," +
              format_double(ref.std[p]) + "\n";
      csv += line;
    }
    ev.csv[std::string(field_name(f)) + "_moments.csv"] = csv;

    std::string sp = csv_header_comment(hash) + "index,model,reference\n";
    for (std::size_t i = 0; i < std::max(model_spectra.size(), ref_spectra.size()); ++i) {
      sp += std::to_string(i) + "," + (i < model_spectra.size() ? format_double(model_spectra[i]) : "") + "," +
            (i < ref_spectra.size() ? format_double(ref_spectra[i]) : "") + "\n";
    }
    ev.csv[std::string(field_name(f)) + "_spectra.csv"] = sp;
  }

  if (spec.transform == Transform::MixedExp && dim == 1) {
    const auto nodes = std::vector<double>(grid.data().begin(), grid.data().end());
    const ModeSplit ms = mode_split(model.fields[0], nodes);
    const ModeSplit rs = mode_split(truth.fields[0], nodes);
    const auto fraction = [](const ModeSplit& s) {
      return static_cast<double>(s.left.size()) / static_cast<double>(s.left.size() + s.right.size());
    };
    const auto oracle_left = mixed_branch_mean(spec, grid, -1.0);
    const auto oracle_right = mixed_branch_mean(spec, grid, 1.0);
    const auto mode_mean = [&](const ad::Tensor& s, const std::vector<std::size_t>& rows) {
      if (rows.size() < 2) return std::vector<double>(P, 0.0);
      return column_moments(select_rows(s, rows)).mean;
    };
    const auto ml = mode_mean(model.fields[0], ms.left), mr = mode_mean(model.fields[0], ms.right);
    const auto rl = mode_mean(truth.fields[0], rs.left), rr = mode_mean(truth.fields[0], rs.right);
    nlohmann::json mj;
    mj["model_left_fraction"] = fraction(ms);
    mj["reference_left_fraction"] = fraction(rs);
    mj["left_mean_rel_err"] = relative_error(oracle_left, ml);
    mj["right_mean_rel_err"] = relative_error(oracle_right, mr);
    mj["reference_left_mean_rel_err"] = relative_error(oracle_left, rl);
    mj["reference_right_mean_rel_err"] = relative_error(oracle_right, rr);
    js["modes"] = mj;

    std::string csv = csv_header_comment(hash) + "x0,model_left_mean,model_right_mean,oracle_left_mean,oracle_right_mean\n";
    for (std::size_t p = 0; p < P; ++p) {
      csv += format_double(grid[p]) + "," + format_double(ml[p]) + "," + format_double(mr[p]) + "," +
             format_double(oracle_left[p]) + "," + format_double(oracle_right[p]) + "\n";
    }
    ev.csv["modes.csv"] = csv;
  }
  return ev;
}

Inference infer(const Model& m, const Experiment& e, Field field, const Observations& obs, std::size_t n_draws,
                Rng& rng) {
  const FieldFlow& flow = field_model(m, field);
  if (obs.x.rows() > 0 && obs.x.cols() != flow.dim_x()) throw DataMismatchError("observations have the wrong dimension");
  Inference out;
  out.query = e.eval_grid();
  const ad::Tensor ox = obs.x.rows() > 0 ? obs.x : ad::Tensor(0, flow.dim_x());
  const ad::Tensor ov = obs.values.rows() > 0 ? obs.values : ad::Tensor(0, 1);
  out.draws = predict_conditional(flow, ox, ov, out.query, n_draws, rng);
  out.moments = column_moments(out.draws);
  if (!e.is_sde() && field == Field::K && flow.dim_x() == 1) {
    out.truth = conditional_moments(e.field_spec(), ox, ov, out.query);
  }
  return out;
}

void run_generate(const Experiment& e, const std::string& out) { write_dataset(out, generate_dataset(e)); }

namespace {

CheckpointMeta check_meta(const CheckpointMeta& meta, const Experiment& e) {
  if (meta.kind != kind_name(e.kind())) throw DataMismatchError("checkpoint holds a different experiment kind");
  if (meta.config_hash != e.model_hash()) throw DataMismatchError("checkpoint was trained with a different configuration");
  return meta;
}

}  // namespace

std::vector<double> run_train(const Experiment& e, const std::string& data_path, const std::string& out,
                              const std::string& resume, const EpochCallback& on_epoch) {
  const DatasetFile data = read_dataset(data_path);
  const std::string dhash = dataset_hash(data);
  Model m = build_model(e);
  const auto params = m.parameters();
  TrainState state = initial_train_state(e);
  if (!resume.empty()) {
    const CheckpointMeta meta = check_meta(load_checkpoint(resume, params, &state), e);
    if (meta.dataset_hash != dhash) throw DataMismatchError("checkpoint was trained on a different dataset");
  }
  train_model(m, e, data, state, on_epoch);
  save_checkpoint(out, {kind_name(e.kind()), e.model_hash(), dhash, state.epoch}, params, state);
  std::string hist = csv_header_comment(e.model_hash()) + "epoch,loss\n";
  for (std::size_t i = 0; i < state.history.size(); ++i)
    hist += std::to_string(i + 1) + "," + format_double(state.history[i]) + "\n";
  write_text(out + ".history.csv", hist);
  return state.history;
}

Model load_model(const Experiment& e, const std::string& checkpoint) {
  Model m = build_model(e);
  check_meta(read_checkpoint_meta(checkpoint), e);
  load_checkpoint(checkpoint, m.parameters(), nullptr);
  return m;
}

nlohmann::json run_evaluate(const Experiment& e, const std::string& checkpoint, const std::string& out_dir,
                            bool oracle_self) {
  const Model m = oracle_self ? Model{} : load_model(e, checkpoint);
  const Evaluation ev = evaluate(m, e, oracle_self);
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);
  write_text((dir / "metrics.json").string(), ev.metrics.dump(2) + "\n");
  for (const auto& [name, text] : ev.csv) write_text((dir / name).string(), text);
  return ev.metrics;
}

void run_infer(const Experiment& e, const std::string& checkpoint, const std::string& observations,
               std::size_t n_draws, const std::string& out, Field field) {
  const Model m = load_model(e, checkpoint);
  const std::size_t dim = e.domain().dim;
  const Observations obs = observations.empty() ? Observations{ad::Tensor(0, dim), ad::Tensor(0, 1)}
                                                : read_observations(observations, dim);
  Rng rng(derive_seed(e.seed(), "infer"));
  const Inference inf = infer(m, e, field, obs, n_draws, rng);
  const std::string hash = e.model_hash();

  std::string summary = csv_header_comment(hash) + x_columns(dim) + ",mean,std" +
                        (inf.truth ? ",true_mean,true_std" : "") + "\n";
  for (std::size_t p = 0; p < inf.query.rows(); ++p) {
    std::string line;
    append_x(line, inf.query, p);
    line += format_double(inf.moments.mean[p]) + "," + format_double(inf.moments.std[p]);
    if (inf.truth) line += "," + format_double(inf.truth->mean[p]) + "," + format_double(inf.truth->std[p]);
    summary += line + "\n";
  }
  write_text(out, summary);

  std::string draws = csv_header_comment(hash) + "draw";
  for (std::size_t p = 0; p < inf.query.rows(); ++p) draws += ",q" + std::to_string(p);
  draws += "\n";
  for (std::size_t d = 0; d < inf.draws.rows(); ++d) {
    std::string line = std::to_string(d);
    for (std::size_t p = 0; p < inf.draws.cols(); ++p) line += "," + format_double(inf.draws(d, p));
    draws += line + "\n";
  }
  write_text(out + ".draws.csv", draws);
}

}  // namespace nff
