#include "nff/field_flow.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <Eigen/Eigenvalues>

namespace nff {

namespace {

constexpr std::size_t kSampleChunkRows = 4096;

CouplingConfig stack_config(const FieldFlowConfig& c) {
  CouplingConfig s;
  s.dim = c.dim_value == 1 ? 2 : c.dim_value;
  s.cond_dim = c.dim_x;
  s.blocks = c.blocks;
  s.hidden = c.flow_hidden;
  s.layers = c.flow_layers;
  s.s_clamp = c.s_clamp;
  return s;
}

ReferenceConfig reference_config(const FieldFlowConfig& c) {
  ReferenceConfig r;
  r.dim_x = c.dim_x;
  r.dim_value = c.dim_value;
  r.latent = c.latent;
  r.hidden = c.ref_hidden;
  r.layers = c.ref_layers;
  r.c_floor = c.c_floor;
  return r;
}

}  // namespace

FieldFlow::FieldFlow(const FieldFlowConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), ref_(reference_config(cfg), seed * 2 + 1), stack_(stack_config(cfg), seed * 2 + 2) {}

FieldFlow::Reduced FieldFlow::to_reference(ad::Graph& g, ad::Var x, ad::Var values, ad::Var aux) const {
  if (values.cols() != cfg_.dim_value || x.rows() != values.rows()) {
    throw ShapeError("to_reference: values do not match the field");
  }
  Reduced r;
  if (scalar_augmented()) {
    if (!aux.valid() || aux.rows() != values.rows() || aux.cols() != 1) {
      throw ShapeError("to_reference: scalar field needs one auxiliary value per point");
    }
    const FlowResult inv = stack_.inverse(g, ad::concat_cols({values, aux}), x);
    r.z = ad::slice_cols(inv.value, 0, 1);
    r.zeta = ad::slice_cols(inv.value, 1, 1);
    r.logdet = inv.logdet;
  } else {
    const FlowResult inv = stack_.inverse(g, values, x);
    r.z = inv.value;
    r.logdet = inv.logdet;
  }
  return r;
}

ad::Var FieldFlow::from_reference(ad::Graph& g, ad::Var x, ad::Var z, ad::Var zeta) const {
  if (z.cols() != cfg_.dim_value || x.rows() != z.rows()) {
    throw ShapeError("from_reference: z does not match the field");
  }
  if (!scalar_augmented()) return stack_.forward(g, z, x).value;
  if (!zeta.valid() || zeta.rows() != z.rows()) throw ShapeError("from_reference: missing zeta");
  return ad::slice_cols(stack_.forward(g, ad::concat_cols({z, zeta}), x).value, 0, 1);
}

std::vector<NamedParam> FieldFlow::parameters(const std::string& prefix) {
  std::vector<NamedParam> out;
  ref_.collect(prefix + "ref", out);
  stack_.collect(prefix + "flow", out);
  return out;
}

std::size_t SnapshotSet::total_points() const {
  std::size_t n = 0;
  for (const auto& s : snapshots) n += s.size();
  return n;
}

PackedBatch pack(const SnapshotSet& data, std::span<const std::size_t> indices) {
  PackedBatch p;
  p.offsets.push_back(0);
  for (std::size_t i : indices) {
    if (i >= data.size()) throw ShapeError("pack: snapshot index out of range");
    const Snapshot& s = data.snapshots[i];
    if (s.size() > 0 && (s.x.cols() != data.dim_x || s.values.cols() != data.dim_value ||
                         s.values.rows() != s.x.rows())) {
      throw ShapeError("pack: snapshot shape does not match the set");
    }
    p.offsets.push_back(p.offsets.back() + s.size());
  }
  const std::size_t n = p.offsets.back();
  p.x = ad::Tensor(n, data.dim_x);
  p.values = ad::Tensor(n, data.dim_value);
  std::size_t row = 0;
  for (std::size_t i : indices) {
    const Snapshot& s = data.snapshots[i];
    std::copy(s.x.data().begin(), s.x.data().end(), p.x.data().begin() + row * data.dim_x);
    std::copy(s.values.data().begin(), s.values.data().end(),
              p.values.data().begin() + row * data.dim_value);
    row += s.size();
  }
  return p;
}

ad::Tensor draw_aux(const FieldFlow& model, std::size_t rows, Rng& rng) {
  if (!model.scalar_augmented()) return {};
  ad::Tensor v(rows, 1);
  for (double& e : v.data()) e = rng.normal();
  return v;
}

ReducedBatch reduce_batch(ad::Graph& g, const FieldFlow& model, const PackedBatch& packed,
                          const ad::Tensor& aux) {
  const ad::Var x = g.constant(packed.x);
  const ad::Var values = g.constant(packed.values);
  const ad::Var v = model.scalar_augmented() ? g.constant(aux) : ad::Var{};
  return {model.to_reference(g, x, values, v), model.reference().evaluate(g, x)};
}

ad::Var pointwise_terms(const FieldFlow& model, const FieldFlow::Reduced& r) {
  ad::Var total = ad::sum(r.logdet);
  if (model.scalar_augmented()) {
    const double half_log2pi = 0.5 * std::log(2.0 * std::numbers::pi);
    const double n = static_cast<double>(r.zeta.rows());
    total = total - 0.5 * ad::sum(ad::square(r.zeta)) - half_log2pi * n;
  }
  return total;
}

ad::Var nff_data_loss(ad::Graph& g, const FieldFlow& model, const SnapshotSet& data,
                      std::span<const std::size_t> batch, const ad::Tensor& aux) {
  if (batch.empty()) throw ShapeError("nff_data_loss: empty batch");
  if (data.dim_x != model.dim_x() || data.dim_value != model.dim_value()) {
    throw ShapeError("nff_data_loss: data dimensions do not match the model");
  }
  const PackedBatch packed = pack(data, batch);
  const std::size_t P = packed.x.rows();
  if (model.scalar_augmented() && aux.rows() != P) {
    throw ShapeError("nff_data_loss: auxiliary draws do not match the batch");
  }
  const std::size_t M = model.latent();
  if (P == 0) return g.constant(0.0);

  const ReducedBatch rb = reduce_batch(g, model, packed, aux);
  const std::size_t D = model.dim_value();
  std::vector<ad::Var> terms;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const std::size_t begin = packed.offsets[s], count = packed.offsets[s + 1] - begin;
    if (count == 0) continue;
    const SnapshotStats st = stack_stats(rb.coeffs, begin, count, M);
    const ad::Var z = ad::reshape(ad::slice_rows(rb.reduced.z, begin, count), count * D, 1);
    terms.push_back(lowrank_logpdf(st, z));
  }
  const ad::Var loglik = ad::sum(ad::concat_rows(terms)) + pointwise_terms(model, rb.reduced);
  return loglik * (-1.0 / static_cast<double>(batch.size()));
}

ad::Var nff_data_loss(ad::Graph& g, const FieldFlow& model, const SnapshotSet& data,
                      std::span<const std::size_t> batch, Rng& rng) {
  std::size_t rows = 0;
  for (std::size_t i : batch) {
    if (i >= data.size()) throw ShapeError("nff_data_loss: snapshot index out of range");
    rows += data.snapshots[i].size();
  }
  return nff_data_loss(g, model, data, batch, draw_aux(model, rows, rng));
}

double nff_data_loss(const FieldFlow& model, const SnapshotSet& data, Rng& rng) {
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), 0);
  ad::Graph g;
  return nff_data_loss(g, model, data, all, rng).item();
}

void train_field(FieldFlow& model, const SnapshotSet& data, const TrainConfig& cfg,
                 TrainState& state, const EpochCallback& on_epoch) {
  if (data.size() == 0) throw ShapeError("train_field: no snapshots");
  if (cfg.batch == 0 || cfg.batch > data.size()) {
    throw ConfigError("train_field: batch size must be in [1, number of snapshots]");
  }
  std::vector<NamedParam> named = model.parameters("");
  std::vector<ad::Tensor*> params;
  for (auto& p : named) params.push_back(p.tensor);

  std::vector<std::size_t> order(data.size());
  std::vector<ad::Tensor> grads(params.size());
  while (state.epoch < cfg.epochs) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), state.rng.engine());
    double total = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch) {
      const std::size_t n = std::min(cfg.batch, order.size() - b);
      const std::span<const std::size_t> batch(order.data() + b, n);
      ad::Graph g;
      const ad::Var loss = nff_data_loss(g, model, data, batch, state.rng);
      const ad::ValueAndGrad vg = ad::value_and_grad(g, loss);
      if (!std::isfinite(vg.value)) throw NumericalError("train_field: non-finite loss");
      for (std::size_t k = 0; k < params.size(); ++k) grads[k] = vg.gradients.of(*params[k]);
      ad::adam_step(params, grads, state.adam, cfg.adam);
      total += vg.value * static_cast<double>(n);
    }
    const double epoch_loss = total / static_cast<double>(order.size());
    state.history.push_back(epoch_loss);
    ++state.epoch;
    if (on_epoch) on_epoch(state.epoch, epoch_loss);
  }
}

ad::Tensor sample_gaussian(const ad::Tensor& mean, const ad::Tensor& cov, std::size_t n, Rng& rng) {
  const std::size_t M = mean.size();
  if (cov.rows() != M || cov.cols() != M) throw ShapeError("sample_gaussian: covariance shape");
  const Eigen::SelfAdjointEigenSolver<ad::RowMatrix> es(cov.mat());
  if (es.info() != Eigen::Success) throw NumericalError("sample_gaussian: eigendecomposition failed");
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const ad::RowMatrix L = es.eigenvectors() * root.asDiagonal();
  ad::Tensor out(n, M);
  Eigen::VectorXd e(M);
  for (std::size_t d = 0; d < n; ++d) {
    for (std::size_t m = 0; m < M; ++m) e[m] = rng.normal();
    const Eigen::VectorXd s = L * e;
    for (std::size_t m = 0; m < M; ++m) out(d, m) = mean[m] + s[m];
  }
  return out;
}

ad::Tensor push_samples(const FieldFlow& model, const ad::Tensor& query, const ad::Tensor& xi,
                        Rng& rng) {
  const std::size_t q = query.rows(), D = model.dim_value(), M = model.latent();
  const std::size_t dx = model.dim_x();
  if (q > 0 && query.cols() != dx) throw ShapeError("push_samples: query has wrong dimension");
  if (xi.cols() != M) throw ShapeError("push_samples: latent draws have wrong dimension");
  const std::size_t n = xi.rows();
  ad::Tensor out(n, q * D);
  if (q == 0 || n == 0) return out;

  ad::Tensor A, B, C;
  {
    ad::Graph g;
    const auto c = model.reference().evaluate(g, g.constant(query));
    A = c.mean.value();
    B = c.factor.value();
    C = c.scale.value();
  }

  const std::size_t per_chunk = std::max<std::size_t>(1, kSampleChunkRows / q);
  for (std::size_t d0 = 0; d0 < n; d0 += per_chunk) {
    const std::size_t nd = std::min(per_chunk, n - d0);
    const std::size_t rows = nd * q;
    ad::Tensor X(rows, dx), Z(rows, D), zeta(rows, 1);
    for (std::size_t d = 0; d < nd; ++d) {
      const double* xr = xi.data().data() + (d0 + d) * M;
      for (std::size_t p = 0; p < q; ++p) {
        const std::size_t r = d * q + p;
        for (std::size_t j = 0; j < dx; ++j) X(r, j) = query(p, j);
        for (std::size_t k = 0; k < D; ++k) {
          double v = A(p, k) + C(p, k) * rng.normal();
          const double* br = B.data().data() + p * D * M + k * M;
          for (std::size_t m = 0; m < M; ++m) v += br[m] * xr[m];
          Z(r, k) = v;
        }
        if (model.scalar_augmented()) zeta[r] = rng.normal();
      }
    }
    ad::Graph g;
    const ad::Var zv = model.scalar_augmented() ? g.constant(zeta) : ad::Var{};
    const ad::Var k = model.from_reference(g, g.constant(X), g.constant(Z), zv);
    const ad::Tensor& kv = k.value();
    for (std::size_t d = 0; d < nd; ++d) {
      std::copy(kv.data().begin() + d * q * D, kv.data().begin() + (d + 1) * q * D,
                out.data().begin() + (d0 + d) * q * D);
    }
  }
  return out;
}

ad::Tensor generate_samples(const FieldFlow& model, const ad::Tensor& grid, std::size_t n_draws,
                            Rng& rng) {
  const std::size_t M = model.latent();
  ad::Tensor xi(n_draws, M);
  for (double& v : xi.data()) v = rng.normal();
  return push_samples(model, grid, xi, rng);
}

ad::Tensor predict_conditional(const FieldFlow& model, const ad::Tensor& obs_x,
                               const ad::Tensor& obs_values, const ad::Tensor& query,
                               std::size_t n_draws, Rng& rng) {
  if (n_draws == 0) throw ShapeError("predict_conditional: n_draws must be positive");
  const std::size_t n = obs_x.rows(), M = model.latent();
  if (obs_values.rows() != n || (n > 0 && (obs_values.cols() != model.dim_value() ||
                                           obs_x.cols() != model.dim_x()))) {
    throw ShapeError("predict_conditional: observations do not match the model");
  }
  if (n == 0) return generate_samples(model, query, n_draws, rng);

  ad::Tensor A, B, C;
  {
    ad::Graph g;
    const auto c = model.reference().evaluate(g, g.constant(obs_x));
    A = c.mean.value();
    B = c.factor.value();
    C = c.scale.value();
  }

  ad::Tensor xi(n_draws, M);
  if (!model.scalar_augmented()) {
    ad::Graph g;
    const auto red = model.to_reference(g, g.constant(obs_x), g.constant(obs_values), ad::Var{});
    const PosteriorXi post = posterior_xi(A, B, C, red.z.value(), M);
    xi = sample_gaussian(post.mean, post.cov, n_draws, rng);
  } else {
    // Every draw sees its own auxiliary channel for the observations, hence
    // its own reference values and posterior.
    for (std::size_t d = 0; d < n_draws; ++d) {
      ad::Graph g;
      const ad::Tensor v = draw_aux(model, n, rng);
      const auto red = model.to_reference(g, g.constant(obs_x), g.constant(obs_values), g.constant(v));
      const PosteriorXi post = posterior_xi(A, B, C, red.z.value(), M);
      const ad::Tensor one = sample_gaussian(post.mean, post.cov, 1, rng);
      std::copy(one.data().begin(), one.data().end(), xi.data().begin() + d * M);
    }
  }
  return push_samples(model, query, xi, rng);
}

Moments column_moments(const ad::Tensor& samples) {
  const std::size_t n = samples.rows(), p = samples.cols();
  if (n < 2) throw ShapeError("column_moments: need at least two rows");
  Moments m{std::vector<double>(p, 0.0), std::vector<double>(p, 0.0)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j) m.mean[j] += samples(i, j);
  for (double& v : m.mean) v /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j) {
      const double d = samples(i, j) - m.mean[j];
      m.std[j] += d * d;
    }
  for (double& v : m.std) v = std::sqrt(v / static_cast<double>(n - 1));
  return m;
}

}  // namespace nff
