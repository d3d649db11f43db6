#include "nff/reference_field.hpp"

#include <cmath>
#include <numbers>

#include <Eigen/Cholesky>
#include <Eigen/LU>

namespace nff {

ReferenceField::ReferenceField(const ReferenceConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.dim_x == 0 || cfg.dim_value == 0 || cfg.latent == 0) {
    throw ShapeError("reference field dimensions must be positive");
  }
  if (!(cfg.c_floor > 0.0)) throw ConfigError("reference field c_floor must be positive");
  const std::size_t D = cfg.dim_value;
  a_ = init_mlp(layer_widths(cfg.dim_x, cfg.hidden, cfg.layers, D), seed * 3 + 1);
  b_ = init_mlp(layer_widths(cfg.dim_x, cfg.hidden, cfg.layers, D * cfg.latent), seed * 3 + 2);
  c_ = init_mlp(layer_widths(cfg.dim_x, cfg.hidden, cfg.layers, D), seed * 3 + 3);
}

ReferenceField::Coefficients ReferenceField::evaluate(ad::Graph& g, ad::Var x) const {
  if (x.cols() != cfg_.dim_x) throw ShapeError("reference field: x has wrong column count");
  Coefficients c;
  c.mean = a_.forward(g, x);
  c.factor = b_.forward(g, x);
  c.scale = ad::softplus(c_.forward(g, x)) + cfg_.c_floor;
  return c;
}

void ReferenceField::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  a_.collect(prefix + ".A", out);
  b_.collect(prefix + ".B", out);
  c_.collect(prefix + ".C", out);
}

ad::Tensor reference_sample(const ReferenceField& field, std::span<const double> x,
                            std::span<const double> xi, std::span<const double> eps) {
  const std::size_t D = field.dim_value(), M = field.latent();
  if (x.size() != field.dim_x() || xi.size() != M || eps.size() != D) {
    throw ShapeError("reference_sample: argument sizes do not match the field");
  }
  ad::Graph g;
  const ad::Tensor xt(1, x.size(), std::vector<double>(x.begin(), x.end()));
  const auto c = field.evaluate(g, g.constant(xt));
  ad::Tensor z(D, 1);
  for (std::size_t d = 0; d < D; ++d) {
    double v = c.mean.value()[d] + c.scale.value()[d] * eps[d];
    for (std::size_t m = 0; m < M; ++m) v += c.factor.value()[d * M + m] * xi[m];
    z[d] = v;
  }
  return z;
}

SnapshotStats stack_stats(const ReferenceField::Coefficients& c, std::size_t begin,
                          std::size_t count, std::size_t latent) {
  const std::size_t D = c.mean.cols();
  SnapshotStats s;
  s.mean = ad::reshape(ad::slice_rows(c.mean, begin, count), count * D, 1);
  s.factor = ad::reshape(ad::slice_rows(c.factor, begin, count), count * D, latent);
  s.scale = ad::reshape(ad::slice_rows(c.scale, begin, count), count * D, 1);
  return s;
}

SnapshotStats joint_snapshot_stats(std::span<const SnapshotStats> parts) {
  if (parts.empty()) throw ShapeError("joint_snapshot_stats: nothing to stack");
  if (parts.size() == 1) return parts[0];
  std::vector<ad::Var> mean, factor, scale;
  const std::size_t M = parts[0].factor.cols();
  for (const auto& p : parts) {
    if (p.factor.cols() != M) throw ShapeError("joint_snapshot_stats: latent sizes differ");
    mean.push_back(p.mean);
    factor.push_back(p.factor);
    scale.push_back(p.scale);
  }
  return {ad::concat_rows(mean), ad::concat_rows(factor), ad::concat_rows(scale)};
}

namespace {

double one_norm(const ad::RowMatrix& m) { return m.cwiseAbs().colwise().sum().maxCoeff(); }

}  // namespace

ad::Var lowrank_logpdf(const SnapshotStats& stats, ad::Var z) {
  ad::Graph& g = z.graph();
  const std::size_t n = stats.mean.rows();
  const std::size_t M = stats.factor.cols();
  if (z.rows() != n || z.cols() != 1 || stats.factor.rows() != n || stats.scale.rows() != n) {
    throw ShapeError("lowrank_logpdf: inconsistent stacked shapes");
  }
  if (n == 0) return g.constant(0.0);
  for (double s : stats.scale.value().data()) {
    if (!(s > 0.0)) throw NumericalError("lowrank_logpdf: diagonal scale must be positive");
  }

  const ad::Var r = z - stats.mean;
  const ad::Var prec = ad::div(g.constant(1.0), ad::square(stats.scale));
  const ad::Var wb = ad::mul(stats.factor, prec);  // D^-1 B
  const ad::Var cap = g.constant(ad::Tensor::identity(M)) + ad::matmul(ad::transpose(stats.factor), wb);

  const ad::RowMatrix cap_value = cap.value().mat();
  const Eigen::PartialPivLU<ad::RowMatrix> lu(cap_value);
  const double cond = one_norm(cap_value) * one_norm(lu.inverse());
  if (!std::isfinite(cond) || cond > kCapacitanceConditionLimit) {
    throw NumericalError("lowrank_logpdf: capacitance matrix is ill-conditioned");
  }

  const ad::Var capinv = ad::inverse(cap);
  // r' D^-1 r - u' cap^-1 u cancels badly once C is small next to B. The
  // same value as |D^-1/2 (r - B xi)|^2 + |xi|^2 at the minimiser xi is a sum
  // of squares, and first-order insensitive to errors in xi.
  const ad::Var xi = ad::matmul(capinv, ad::matmul(ad::transpose(wb), r));
  const ad::Var resid = r - ad::matmul(stats.factor, xi);
  const ad::Var quad = ad::sum(ad::mul(ad::square(resid), prec)) + ad::sum(ad::square(xi));
  const ad::Var log_det = 2.0 * ad::sum(ad::log(stats.scale)) + ad::logdet(cap);
  const double log2pi = std::log(2.0 * std::numbers::pi);
  return -0.5 * (log_det + quad + static_cast<double>(n) * log2pi);
}

PosteriorXi posterior_xi(const ad::Tensor& mean, const ad::Tensor& factor, const ad::Tensor& scale,
                         const ad::Tensor& z, std::size_t latent) {
  const std::size_t n = z.size();
  if (mean.size() != n || scale.size() != n || factor.size() != n * latent) {
    throw ShapeError("posterior_xi: coefficient shapes do not match observations");
  }
  const std::size_t M = latent;
  PosteriorXi post{ad::Tensor(M, 1), ad::Tensor::identity(M)};
  if (n == 0) return post;

  const ad::ConstMatrixMap B(factor.data().data(), n, M);
  Eigen::VectorXd prec(n), resid(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(scale[i] > 0.0)) throw NumericalError("posterior_xi: diagonal scale must be positive");
    prec[i] = 1.0 / (scale[i] * scale[i]);
    resid[i] = z[i] - mean[i];
  }
  const ad::RowMatrix wb = prec.asDiagonal() * B;
  ad::RowMatrix cap = ad::RowMatrix::Identity(M, M) + B.transpose() * wb;
  const Eigen::LLT<ad::RowMatrix> llt(cap);
  if (llt.info() != Eigen::Success) throw NumericalError("posterior_xi: singular stacked covariance");
  const ad::RowMatrix cov = llt.solve(ad::RowMatrix::Identity(M, M));
  const Eigen::VectorXd mu = llt.solve(wb.transpose() * resid);
  if (!cov.allFinite() || !mu.allFinite()) throw NumericalError("posterior_xi: non-finite posterior");
  // Symmetrize to remove round-off asymmetry before any factorization downstream.
  const ad::RowMatrix sym = 0.5 * (cov + cov.transpose());
  post.cov = ad::Tensor::from(sym);
  for (std::size_t m = 0; m < M; ++m) post.mean[m] = mu[m];
  return post;
}

PosteriorXi posterior_xi(const ReferenceField& field, const ad::Tensor& x, const ad::Tensor& z) {
  if (x.rows() != z.rows() || z.cols() != field.dim_value() || (x.rows() > 0 && x.cols() != field.dim_x())) {
    throw ShapeError("posterior_xi: observation shapes do not match the field");
  }
  if (x.rows() == 0) return posterior_xi(ad::Tensor(), ad::Tensor(), ad::Tensor(), ad::Tensor(), field.latent());
  ad::Graph g;
  const auto c = field.evaluate(g, g.constant(x));
  return posterior_xi(c.mean.value(), c.factor.value(), c.scale.value(), z, field.latent());
}

}  // namespace nff
