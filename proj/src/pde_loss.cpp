#include "nff/pde_loss.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace nff {

const char* field_name(Field f) {
  switch (f) {
    case Field::K: return "k";
    case Field::F: return "f";
    case Field::U: return "u";
  }
  return "?";
}

std::size_t SdeModel::latent() const {
  for (const auto& s : fields)
    if (s.learned()) return s.flow->latent();
  throw ConfigError("sde model has no learned field");
}

void SdeModel::validate() const {
  const std::size_t M = latent();
  for (Field f : kAllFields) {
    const FieldSlot& s = slot(f);
    if (!s.learned()) continue;
    if (s.flow->latent() != M) throw ShapeError("sde model: fields disagree on the latent dimension");
    if (!s.flow->scalar_augmented()) throw ShapeError("sde model: fields must be scalar");
    if (s.flow->dim_x() != domain.dim) throw ShapeError("sde model: field dimension does not match domain");
  }
  if (!slot(Field::U).learned()) throw ConfigError("sde model: u must be learned");
  const PhysicsConfig& p = physics;
  if (p.w_data < 0 || p.w_equ < 0 || p.w_bnd < 0) throw ConfigError("sde model: negative loss weight");
  if (!(p.radius > 0.0) || p.radius > domain.side()) throw ConfigError("sde model: radius out of range");
  if (!(p.fd_step > 0.0)) throw ConfigError("sde model: finite-difference step must be positive");
}

std::vector<NamedParam> SdeModel::parameters() {
  std::vector<NamedParam> out;
  for (Field f : kAllFields) {
    FieldSlot& s = slot(f);
    if (!s.learned()) continue;
    auto p = s.flow->parameters(std::string(field_name(f)) + ".");
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::size_t SdeDataset::size() const {
  std::size_t n = 0;
  for (const auto& s : fields) n = std::max(n, s.size());
  return n;
}

InstanceNoise draw_noise(const SdeModel& model, std::size_t n, Rng& rng) {
  InstanceNoise noise;
  noise.xi = ad::Tensor(n, model.latent());
  for (double& v : noise.xi.data()) v = rng.normal();
  for (int f = 0; f < 3; ++f) {
    noise.eps[f] = ad::Tensor(n, 1);
    noise.zeta[f] = ad::Tensor(n, 1);
    for (double& v : noise.eps[f].data()) v = rng.normal();
    for (double& v : noise.zeta[f].data()) v = rng.normal();
  }
  return noise;
}

ad::Var NffSurrogate::eval(ad::Graph& g, Field f, const ad::Tensor& x,
                           std::span<const std::size_t> instance) const {
  const std::size_t P = x.rows();
  if (instance.size() != P) throw ShapeError("surrogate: one instance index per point required");
  const FieldSlot& slot = model_.slot(f);
  if (!slot.learned()) return g.constant(ad::Tensor(P, 1, slot.constant));
  const FieldFlow& flow = *slot.flow;
  const std::size_t M = flow.latent();
  const int fi = static_cast<int>(f);
  ad::Tensor xi(P, M), eps(P, 1), zeta(P, 1);
  for (std::size_t r = 0; r < P; ++r) {
    const std::size_t i = instance[r];
    if (i >= noise_.size()) throw ShapeError("surrogate: instance index out of range");
    std::copy_n(noise_.xi.data().begin() + i * M, M, xi.data().begin() + r * M);
    eps[r] = noise_.eps[fi][i];
    zeta[r] = noise_.zeta[fi][i];
  }
  const ad::Var X = g.constant(x);
  const auto c = flow.reference().evaluate(g, X);
  const ad::Var z = c.mean + ad::row_sum(c.factor * g.constant(std::move(xi))) + c.scale * g.constant(std::move(eps));
  return flow.from_reference(g, X, z, g.constant(std::move(zeta)));
}

ad::Var FunctionSurrogate::eval(ad::Graph& g, Field f, const ad::Tensor& x,
                                std::span<const std::size_t> instance) const {
  const std::size_t P = x.rows(), d = x.cols();
  if (instance.size() != P) throw ShapeError("surrogate: one instance index per point required");
  const Fn& fn = fns_[static_cast<int>(f)];
  ad::Tensor out(P, 1);
  for (std::size_t r = 0; r < P; ++r) out[r] = fn(x.data().subspan(r * d, d), instance[r]);
  return g.constant(std::move(out));
}

ad::Var spatial_grad(ad::Graph& g, const Surrogate& s, Field f, const ad::Tensor& x,
                     std::span<const std::size_t> instance, std::size_t axis, double h,
                     const Domain& domain) {
  if (!(h > 0.0)) throw ConfigError("spatial_grad: step must be positive");
  if (axis >= x.cols()) throw ShapeError("spatial_grad: axis out of range");
  const std::size_t P = x.rows(), d = x.cols();
  // Interior rows: (v(x + h/2) - v(x - h/2)) / h. Rows whose stencil would
  // leave the domain use the one-sided (-3 v0 + 4 v1 - v2) / 2h through
  // x, x +- h, x +- 2h, which is exact for quadratics like the central one.
  std::vector<std::size_t> edge;
  std::vector<double> edge_sign;
  ad::Tensor w(2 * P, 1);
  ad::Tensor pts(2 * P, d);
  for (std::size_t r = 0; r < P; ++r) {
    for (std::size_t j = 0; j < d; ++j) pts(r, j) = pts(P + r, j) = x(r, j);
    const double c = x(r, axis);
    double sign = 0.0;
    if (c + 0.5 * h > domain.hi) sign = -1.0;
    else if (c - 0.5 * h < domain.lo) sign = 1.0;
    if (sign == 0.0) {
      pts(r, axis) = c + 0.5 * h;
      pts(P + r, axis) = c - 0.5 * h;
      w[r] = 1.0 / h;
      w[P + r] = -1.0 / h;
    } else {
      pts(r, axis) = c;
      pts(P + r, axis) = c + sign * h;
      w[r] = -3.0 * sign / (2.0 * h);
      w[P + r] = 4.0 * sign / (2.0 * h);
      edge.push_back(r);
      edge_sign.push_back(sign);
    }
  }
  std::vector<std::size_t> inst(instance.begin(), instance.end());
  inst.insert(inst.end(), instance.begin(), instance.end());
  const ad::Var v = s.eval(g, f, pts, inst) * g.constant(w);
  ad::Var grad = ad::slice_rows(v, 0, P) + ad::slice_rows(v, P, P);
  if (edge.empty()) return grad;

  const std::size_t E = edge.size();
  ad::Tensor far(E, d), scatter(P, E);
  std::vector<std::size_t> far_inst(E);
  for (std::size_t e = 0; e < E; ++e) {
    for (std::size_t j = 0; j < d; ++j) far(e, j) = x(edge[e], j);
    far(e, axis) += 2.0 * edge_sign[e] * h;
    far_inst[e] = instance[edge[e]];
    scatter(edge[e], e) = -edge_sign[e] / (2.0 * h);
  }
  return grad + ad::matmul(g.constant(scatter), s.eval(g, f, far, far_inst));
}

namespace {

void check_radius(double radius, const Domain& domain) {
  if (!(radius > 0.0) || radius > domain.side()) throw ConfigError("test-function radius out of range");
}

ad::Tensor stack_rows(std::initializer_list<const ad::Tensor*> parts) {
  std::size_t rows = 0, cols = (*parts.begin())->cols();
  for (const auto* p : parts) rows += p->rows();
  ad::Tensor out(rows, cols);
  std::size_t at = 0;
  for (const auto* p : parts) {
    std::copy(p->data().begin(), p->data().end(), out.data().begin() + at);
    at += p->size();
  }
  return out;
}

std::vector<std::size_t> repeat_instances(std::size_t n, std::size_t times) {
  std::vector<std::size_t> v(n * times);
  for (std::size_t t = 0; t < times; ++t) std::iota(v.begin() + t * n, v.begin() + (t + 1) * n, 0);
  return v;
}

/// Copy of `base` with column `axis` replaced by center(:, axis) + offset.
ad::Tensor edge_points(const ad::Tensor& base, const ad::Tensor& center, std::size_t axis, double offset) {
  ad::Tensor out = base;
  for (std::size_t r = 0; r < out.rows(); ++r) out(r, axis) = center(r, axis) + offset;
  return out;
}

}  // namespace

Collocation draw_collocation(const Domain& domain, std::size_t n, double radius, Rng& rng) {
  check_radius(radius, domain);
  const std::size_t d = domain.dim;
  Collocation c{ad::Tensor(n, d), ad::Tensor(n, d), ad::Tensor(n, d)};
  const double half = 0.5 * radius;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) c.center(i, j) = rng.uniform(domain.lo + half, domain.hi - half);
    for (std::size_t j = 0; j < d; ++j) c.point(i, j) = c.center(i, j) + rng.uniform(-half, half);
    for (std::size_t j = 0; j < d; ++j) c.twin(i, j) = c.center(i, j) + rng.uniform(-half, half);
  }
  return c;
}

ad::Var equation_loss_1d(ad::Graph& g, const Surrogate& s, const Collocation& c, double radius,
                         double h, const Domain& domain) {
  check_radius(radius, domain);
  const std::size_t n = c.size();
  if (n == 0) throw ShapeError("equation loss: no collocation instances");
  if (c.center.cols() != 1) throw ShapeError("equation_loss_1d: collocation must be 1-dimensional");
  const ad::Tensor left = edge_points(c.center, c.center, 0, -0.5 * radius);
  const ad::Tensor right = edge_points(c.center, c.center, 0, 0.5 * radius);
  const ad::Tensor ends = stack_rows({&left, &right});
  const auto inst2 = repeat_instances(n, 2);

  const ad::Var flux = s.eval(g, Field::K, ends, inst2) * spatial_grad(g, s, Field::U, ends, inst2, 0, h, domain);
  const ad::Var weak = (ad::slice_rows(flux, 0, n) - ad::slice_rows(flux, n, n)) * (1.0 / radius);
  const ad::Var f = s.eval(g, Field::F, stack_rows({&c.point, &c.twin}), inst2);
  const ad::Var e = weak - ad::slice_rows(f, 0, n);
  const ad::Var e2 = weak - ad::slice_rows(f, n, n);
  return ad::mean(e * e2);
}

ad::Var equation_loss_2d(ad::Graph& g, const Surrogate& s, const Collocation& c, double radius,
                         double h, const Domain& domain) {
  check_radius(radius, domain);
  const std::size_t n = c.size();
  if (n == 0) throw ShapeError("equation loss: no collocation instances");
  if (c.center.cols() != 2) throw ShapeError("equation_loss_2d: collocation must be 2-dimensional");
  const double half = 0.5 * radius;
  // Edge points: a = alpha -+ r/2 with b from the sample; b = beta -+ r/2 with a from the sample.
  const ad::Tensor p1 = edge_points(c.point, c.center, 0, -half), p2 = edge_points(c.point, c.center, 0, half);
  const ad::Tensor p3 = edge_points(c.point, c.center, 1, -half), p4 = edge_points(c.point, c.center, 1, half);
  const ad::Tensor q1 = edge_points(c.twin, c.center, 0, -half), q2 = edge_points(c.twin, c.center, 0, half);
  const ad::Tensor q3 = edge_points(c.twin, c.center, 1, -half), q4 = edge_points(c.twin, c.center, 1, half);

  const auto inst8 = repeat_instances(n, 8);
  const auto inst4 = repeat_instances(n, 4);
  const auto inst2 = repeat_instances(n, 2);
  const ad::Var k = s.eval(g, Field::K, stack_rows({&p1, &p2, &q1, &q2, &p3, &p4, &q3, &q4}), inst8);
  const ad::Var ua = spatial_grad(g, s, Field::U, stack_rows({&p1, &p2, &q1, &q2}), inst4, 0, h, domain);
  const ad::Var ub = spatial_grad(g, s, Field::U, stack_rows({&p3, &p4, &q3, &q4}), inst4, 1, h, domain);
  const ad::Var flux = k * ad::concat_rows({ua, ub});
  const auto part = [&](std::size_t j) { return ad::slice_rows(flux, j * n, n); };
  const ad::Var weak = (part(0) - part(1) + part(4) - part(5)) * (1.0 / radius);
  const ad::Var weak2 = (part(2) - part(3) + part(6) - part(7)) * (1.0 / radius);
  const ad::Var f = s.eval(g, Field::F, stack_rows({&c.point, &c.twin}), inst2);
  const ad::Var e = weak - ad::slice_rows(f, 0, n);
  const ad::Var e2 = weak2 - ad::slice_rows(f, n, n);
  return ad::mean(e * e2);
}

ad::Var equation_loss(ad::Graph& g, const Surrogate& s, const Collocation& c, double radius,
                      double h, const Domain& domain) {
  switch (domain.dim) {
    case 1: return equation_loss_1d(g, s, c, radius, h, domain);
    case 2: return equation_loss_2d(g, s, c, radius, h, domain);
    default: throw ShapeError("equation loss: only 1 and 2 spatial dimensions are supported");
  }
}

ad::Tensor draw_boundary(const Domain& domain, std::size_t n, Rng& rng) {
  ad::Tensor pts(n, domain.dim);
  for (std::size_t i = 0; i < n; ++i) {
    if (domain.dim == 1) {
      pts(i, 0) = rng.uniform() < 0.5 ? domain.lo : domain.hi;
      continue;
    }
    const double t = rng.uniform(0.0, 4.0);
    const int side = std::min(3, static_cast<int>(t));
    const double pos = domain.lo + (t - side) * domain.side();
    switch (side) {
      case 0: pts(i, 0) = pos, pts(i, 1) = domain.lo; break;
      case 1: pts(i, 0) = domain.hi, pts(i, 1) = pos; break;
      case 2: pts(i, 0) = pos, pts(i, 1) = domain.hi; break;
      default: pts(i, 0) = domain.lo, pts(i, 1) = pos; break;
    }
  }
  return pts;
}

ad::Var boundary_loss(ad::Graph& g, const Surrogate& s, const ad::Tensor& points) {
  if (points.rows() == 0) throw ShapeError("boundary_loss: no boundary points");
  const auto inst = repeat_instances(points.rows(), 1);
  return ad::mean(ad::square(s.eval(g, Field::U, points, inst)));
}

namespace {

std::size_t batch_rows(const SnapshotSet& set, std::span<const std::size_t> batch) {
  std::size_t rows = 0;
  for (std::size_t i : batch) rows += set.snapshots.at(i).size();
  return rows;
}

bool field_has_data(const SdeModel& model, const SdeDataset& data, Field f) {
  return model.slot(f).learned() && data.field(f).size() > 0;
}

}  // namespace

std::array<ad::Tensor, 3> draw_joint_aux(const SdeModel& model, const SdeDataset& data,
                                         std::span<const std::size_t> batch, Rng& rng) {
  std::array<ad::Tensor, 3> aux;
  for (Field f : kAllFields) {
    if (!field_has_data(model, data, f)) continue;
    aux[static_cast<int>(f)] = draw_aux(*model.slot(f).flow, batch_rows(data.field(f), batch), rng);
  }
  return aux;
}

ad::Var joint_data_loss(ad::Graph& g, const SdeModel& model, const SdeDataset& data,
                        std::span<const std::size_t> batch, const std::array<ad::Tensor, 3>& aux) {
  if (batch.empty()) throw ShapeError("joint_data_loss: empty batch");
  std::array<PackedBatch, 3> packed;
  std::array<std::optional<ReducedBatch>, 3> reduced;
  ad::Var loglik = g.constant(0.0);
  for (Field f : kAllFields) {
    const int fi = static_cast<int>(f);
    if (!field_has_data(model, data, f)) continue;
    const SnapshotSet& set = data.field(f);
    if (set.size() != data.size()) throw DataMismatchError("joint_data_loss: fields hold different snapshot counts");
    packed[fi] = pack(set, batch);
    if (packed[fi].x.rows() == 0) continue;
    const FieldFlow& flow = *model.slot(f).flow;
    if (set.dim_x != flow.dim_x() || set.dim_value != flow.dim_value()) {
      throw ShapeError("joint_data_loss: data dimensions do not match the model");
    }
    if (aux[fi].rows() != packed[fi].x.rows()) throw ShapeError("joint_data_loss: auxiliary draws do not match the batch");
    reduced[fi] = reduce_batch(g, flow, packed[fi], aux[fi]);
    loglik = loglik + pointwise_terms(flow, reduced[fi]->reduced);
  }

  const std::size_t M = model.latent();
  std::vector<ad::Var> terms;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    std::vector<SnapshotStats> parts;
    std::vector<ad::Var> zs;
    for (int fi = 0; fi < 3; ++fi) {
      if (!reduced[fi]) continue;
      const std::size_t begin = packed[fi].offsets[s], count = packed[fi].offsets[s + 1] - begin;
      if (count == 0) continue;
      parts.push_back(stack_stats(reduced[fi]->coeffs, begin, count, M));
      zs.push_back(ad::slice_rows(reduced[fi]->reduced.z, begin, count));
    }
    if (parts.empty()) continue;
    terms.push_back(lowrank_logpdf(joint_snapshot_stats(parts), ad::concat_rows(zs)));
  }
  if (!terms.empty()) loglik = loglik + ad::sum(ad::concat_rows(terms));
  return loglik * (-1.0 / static_cast<double>(batch.size()));
}

LossParts total_loss(ad::Graph& g, const SdeModel& model, const SdeDataset& data,
                     std::span<const std::size_t> batch, Rng& rng) {
  const PhysicsConfig& p = model.physics;
  if (p.w_data < 0 || p.w_equ < 0 || p.w_bnd < 0) throw ConfigError("total_loss: negative loss weight");
  const auto aux = draw_joint_aux(model, data, batch, rng);
  const InstanceNoise equ_noise = draw_noise(model, p.collocation, rng);
  const Collocation colloc = draw_collocation(model.domain, p.collocation, p.radius, rng);
  const InstanceNoise bnd_noise = draw_noise(model, p.boundary, rng);
  const ad::Tensor bnd_points = draw_boundary(model.domain, p.boundary, rng);

  LossParts parts;
  parts.data = p.w_data > 0 ? joint_data_loss(g, model, data, batch, aux) : g.constant(0.0);
  parts.equ = p.w_equ > 0 && p.collocation > 0
                  ? equation_loss(g, NffSurrogate(model, equ_noise), colloc, p.radius, p.fd_step, model.domain)
                  : g.constant(0.0);
  parts.bnd = p.w_bnd > 0 && p.boundary > 0 ? boundary_loss(g, NffSurrogate(model, bnd_noise), bnd_points)
                                            : g.constant(0.0);
  parts.total = p.w_data * parts.data + p.w_equ * parts.equ + p.w_bnd * parts.bnd;
  return parts;
}

void train_sde(SdeModel& model, const SdeDataset& data, const TrainConfig& cfg, TrainState& state,
               const EpochCallback& on_epoch) {
  model.validate();
  const std::size_t N = data.size();
  if (N == 0) throw ShapeError("train_sde: no snapshots");
  if (cfg.batch == 0 || cfg.batch > N) throw ConfigError("train_sde: batch size must be in [1, number of snapshots]");
  std::vector<NamedParam> named = model.parameters();
  std::vector<ad::Tensor*> params;
  for (auto& p : named) params.push_back(p.tensor);

  std::vector<std::size_t> order(N);
  std::vector<ad::Tensor> grads(params.size());
  while (state.epoch < cfg.epochs) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), state.rng.engine());
    double total = 0.0;
    std::size_t steps = 0;
    for (std::size_t b = 0; b < N; b += cfg.batch) {
      const std::size_t n = std::min(cfg.batch, N - b);
      ad::Graph g;
      const LossParts loss = total_loss(g, model, data, std::span<const std::size_t>(order.data() + b, n), state.rng);
      const ad::ValueAndGrad vg = ad::value_and_grad(g, loss.total);
      if (!std::isfinite(vg.value)) throw NumericalError("train_sde: non-finite loss");
      for (std::size_t k = 0; k < params.size(); ++k) grads[k] = vg.gradients.of(*params[k]);
      ad::adam_step(params, grads, state.adam, cfg.adam);
      total += vg.value;
      ++steps;
    }
    const double epoch_loss = total / static_cast<double>(steps);
    state.history.push_back(epoch_loss);
    ++state.epoch;
    if (on_epoch) on_epoch(state.epoch, epoch_loss);
  }
}

std::array<ad::Tensor, 3> generate_sde_samples(const SdeModel& model, const ad::Tensor& grid,
                                               std::size_t n_draws, Rng& rng) {
  ad::Tensor xi(n_draws, model.latent());
  for (double& v : xi.data()) v = rng.normal();
  std::array<ad::Tensor, 3> out;
  for (Field f : kAllFields) {
    const FieldSlot& s = model.slot(f);
    out[static_cast<int>(f)] = s.learned() ? push_samples(*s.flow, grid, xi, rng)
                                           : ad::Tensor(n_draws, grid.rows(), s.constant);
  }
  return out;
}

}  // namespace nff
