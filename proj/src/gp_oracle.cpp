#include "nff/gp_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <set>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

namespace nff {

double Kernel::operator()(std::span<const double> a, std::span<const double> b) const {
  if (a.size() != b.size()) throw ShapeError("kernel: point dimensions differ");
  double d2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d2 += (a[i] - b[i]) * (a[i] - b[i]);
  return variance * std::exp(-gamma * d2);
}

ad::Tensor gram(const Kernel& k, const ad::Tensor& points) {
  const std::size_t P = points.rows(), d = points.cols();
  ad::Tensor G(P, P);
  for (std::size_t i = 0; i < P; ++i)
    for (std::size_t j = 0; j <= i; ++j)
      G(i, j) = G(j, i) = k(points.data().subspan(i * d, d), points.data().subspan(j * d, d));
  return G;
}

ad::RowMatrix gram_root(const ad::Tensor& G) {
  if (G.rows() != G.cols()) throw ShapeError("gram_root: matrix must be square");
  ad::RowMatrix K = G.mat();
  const double scale = std::max(1.0, K.diagonal().cwiseAbs().maxCoeff());
  K.diagonal().array() += kGramJitter * scale;
  const Eigen::SelfAdjointEigenSolver<ad::RowMatrix> es(K);
  if (es.info() != Eigen::Success) throw NumericalError("gram_root: eigendecomposition failed");
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal();
}

namespace {

ad::RowMatrix normals(std::size_t n, std::size_t p, Rng& rng) {
  ad::RowMatrix E(n, p);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j) E(i, j) = rng.normal();
  return E;
}

}  // namespace

ad::Tensor gp_sample(const Kernel& k, const ad::Tensor& points, std::size_t n, Rng& rng) {
  if (points.rows() == 0) throw ShapeError("gp_sample: empty grid");
  const ad::RowMatrix L = gram_root(gram(k, points));
  const ad::RowMatrix E = normals(n, points.rows(), rng);
  ad::RowMatrix S = E * L.transpose();
  S.array() += k.mean;
  return ad::Tensor::from(S);
}

ad::Tensor gp_sample_tensor(const Kernel& k, std::span<const double> a, std::span<const double> b,
                            std::size_t n, Rng& rng) {
  if (a.empty() || b.empty()) throw ShapeError("gp_sample_tensor: empty grid");
  const ad::Tensor ta(a.size(), 1, std::vector<double>(a.begin(), a.end()));
  const ad::Tensor tb(b.size(), 1, std::vector<double>(b.begin(), b.end()));
  const ad::RowMatrix La = gram_root(gram(Kernel{k.variance, k.gamma, 0.0}, ta));
  const ad::RowMatrix Lb = gram_root(gram(Kernel{1.0, k.gamma, 0.0}, tb));
  const std::size_t na = a.size(), nb = b.size();
  ad::Tensor out(n, na * nb);
  for (std::size_t d = 0; d < n; ++d) {
    const ad::RowMatrix E = normals(na, nb, rng);
    const ad::RowMatrix G = La * E * Lb.transpose();
    for (std::size_t i = 0; i < na; ++i)
      for (std::size_t j = 0; j < nb; ++j) out(d, i * nb + j) = G(i, j) + k.mean;
  }
  return out;
}

void apply_transform(const FieldSpec& spec, const ad::Tensor& points, std::span<const double> signs,
                     ad::Tensor& samples) {
  const std::size_t n = samples.rows(), P = samples.cols();
  switch (spec.transform) {
    case Transform::Identity: return;
    case Transform::Exp:
      for (double& v : samples.data()) v = std::exp(spec.amplitude * v);
      return;
    case Transform::MixedExp:
      if (points.cols() != 1) throw ShapeError("mixed field is defined on 1-D points");
      if (signs.size() != n) throw ShapeError("mixed field needs one sign per draw");
      for (std::size_t d = 0; d < n; ++d)
        for (std::size_t p = 0; p < P; ++p) {
          const double m = signs[d] * std::sin(0.5 * std::numbers::pi * points[p]);
          samples(d, p) = std::exp(spec.amplitude * (samples(d, p) + m));
        }
      return;
  }
}

ad::Tensor sample_field(const FieldSpec& spec, const ad::Tensor& points, std::size_t n, Rng& rng) {
  ad::Tensor s = gp_sample(spec.kernel, points, n, rng);
  std::vector<double> signs;
  if (spec.transform == Transform::MixedExp) {
    signs.resize(n);
    for (double& v : signs) v = rng.uniform() < 0.5 ? 1.0 : -1.0;
  }
  apply_transform(spec, points, signs, s);
  return s;
}

ad::Tensor nongaussian_sample(const Kernel& k, const ad::Tensor& points, std::size_t n, Rng& rng) {
  return sample_field({k, Transform::Exp, 1.0}, points, n, rng);
}

ad::Tensor mixed_sample(const ad::Tensor& points, std::size_t n, Rng& rng, double sigma, double length,
                        double amplitude) {
  return sample_field({Kernel::squared_exponential(sigma, length), Transform::MixedExp, amplitude}, points,
                      n, rng);
}

Kernel forcing_kernel() { return {9.0 / 400.0, 25.0, 0.5}; }

ad::Tensor forcing_sample(const ad::Tensor& points, std::size_t n, Rng& rng) {
  return gp_sample(forcing_kernel(), points, n, rng);
}

std::vector<double> linspace_values(double lo, double hi, std::size_t n) {
  if (n == 0) return {};
  if (n == 1) return {0.5 * (lo + hi)};
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  v.back() = hi;
  return v;
}

ad::Tensor linspace(double lo, double hi, std::size_t n) { return ad::Tensor::column(linspace_values(lo, hi, n)); }

ad::Tensor tensor_grid(std::span<const double> a, std::span<const double> b) {
  ad::Tensor g(a.size() * b.size(), 2);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) {
      g(i * b.size() + j, 0) = a[i];
      g(i * b.size() + j, 1) = b[j];
    }
  return g;
}

namespace {

double harmonic(double a, double b) { return 2.0 * a * b / (a + b); }

void check_positive(std::span<const double> k) {
  for (double v : k)
    if (!(v > 0.0) || !std::isfinite(v)) throw NumericalError("elliptic solver: k must be positive");
}

}  // namespace

std::vector<double> solve_elliptic_1d(std::span<const double> k, std::span<const double> f,
                                      std::span<const double> nodes) {
  const std::size_t N = nodes.size();
  if (N < 3 || k.size() != N || f.size() != N) throw ShapeError("solve_elliptic_1d: need >= 3 matching nodes");
  check_positive(k);
  const double h = (nodes[N - 1] - nodes[0]) / static_cast<double>(N - 1);
  for (std::size_t i = 1; i < N; ++i)
    if (std::abs(nodes[i] - nodes[i - 1] - h) > 1e-9 * std::abs(h)) {
      throw ShapeError("solve_elliptic_1d: nodes must be uniform");
    }
  const std::size_t n = N - 2;
  std::vector<double> lower(n), diag(n), upper(n), rhs(n);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t i = j + 1;
    const double kw = harmonic(k[i - 1], k[i]), ke = harmonic(k[i], k[i + 1]);
    lower[j] = -kw / (h * h);
    upper[j] = -ke / (h * h);
    diag[j] = (kw + ke) / (h * h);
    rhs[j] = f[i];
  }
  // Thomas algorithm; the matrix is symmetric positive definite and
  // diagonally dominant, so no pivoting is needed.
  for (std::size_t j = 1; j < n; ++j) {
    const double w = lower[j] / diag[j - 1];
    diag[j] -= w * upper[j - 1];
    rhs[j] -= w * rhs[j - 1];
  }
  std::vector<double> u(N, 0.0);
  for (std::size_t j = n; j-- > 0;) {
    const double next = j + 1 < n ? u[j + 2] : 0.0;
    u[j + 1] = (rhs[j] - upper[j] * next) / diag[j];
  }
  return u;
}

std::vector<double> solve_elliptic_2d(std::span<const double> k, std::span<const double> f, std::size_t n,
                                      double spacing) {
  if (n < 3 || k.size() != n * n || f.size() != n * n) throw ShapeError("solve_elliptic_2d: grid size mismatch");
  if (!(spacing > 0.0)) throw ShapeError("solve_elliptic_2d: spacing must be positive");
  check_positive(k);
  const std::size_t m = n - 2;
  const auto id = [n](std::size_t i, std::size_t j) { return i * n + j; };
  const auto unknown = [m](std::size_t i, std::size_t j) { return static_cast<int>((i - 1) * m + (j - 1)); };
  const double h2 = spacing * spacing;

  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(5 * m * m);
  Eigen::VectorXd rhs(m * m);
  for (std::size_t i = 1; i + 1 < n; ++i)
    for (std::size_t j = 1; j + 1 < n; ++j) {
      const int row = unknown(i, j);
      const double kc = k[id(i, j)];
      const std::size_t ni[4] = {i - 1, i + 1, i, i};
      const std::size_t nj[4] = {j, j, j - 1, j + 1};
      double diag = 0.0;
      for (int q = 0; q < 4; ++q) {
        const double kf = harmonic(kc, k[id(ni[q], nj[q])]) / h2;
        diag += kf;
        const bool interior = ni[q] > 0 && ni[q] + 1 < n && nj[q] > 0 && nj[q] + 1 < n;
        if (interior) trip.emplace_back(row, unknown(ni[q], nj[q]), -kf);
      }
      trip.emplace_back(row, row, diag);
      rhs[row] = f[id(i, j)];
    }
  Eigen::SparseMatrix<double> A(static_cast<Eigen::Index>(m * m), static_cast<Eigen::Index>(m * m));
  A.setFromTriplets(trip.begin(), trip.end());
  const Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(A);
  if (solver.info() != Eigen::Success) throw NumericalError("solve_elliptic_2d: factorization failed");
  const Eigen::VectorXd sol = solver.solve(rhs);
  if (solver.info() != Eigen::Success || !sol.allFinite()) throw NumericalError("solve_elliptic_2d: singular system");
  std::vector<double> u(n * n, 0.0);
  for (std::size_t i = 1; i + 1 < n; ++i)
    for (std::size_t j = 1; j + 1 < n; ++j) u[id(i, j)] = sol[unknown(i, j)];
  return u;
}

double relative_error(std::span<const double> truth, std::span<const double> est) {
  if (truth.size() != est.size()) throw ShapeError("relative_error: grids differ");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    num += (truth[i] - est[i]) * (truth[i] - est[i]);
    den += truth[i] * truth[i];
  }
  if (den == 0.0) throw NumericalError("relative_error: reference curve is zero");
  return std::sqrt(num / den);
}

std::vector<double> symmetric_eigenvalues(const ad::Tensor& m) {
  const Eigen::SelfAdjointEigenSolver<ad::RowMatrix> es(m.mat(), Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericalError("eigenvalue computation failed");
  std::vector<double> ev(es.eigenvalues().data(), es.eigenvalues().data() + es.eigenvalues().size());
  std::sort(ev.begin(), ev.end(), std::greater<>());
  return ev;
}

std::vector<double> spectra(const ad::Tensor& samples) {
  const std::size_t n = samples.rows();
  if (n < 2) throw ShapeError("spectra: need at least two samples");
  ad::RowMatrix X = samples.mat();
  X.rowwise() -= X.colwise().mean();
  const ad::RowMatrix C = (X.transpose() * X) / static_cast<double>(n - 1);
  return symmetric_eigenvalues(ad::Tensor::from(C));
}

ModeSplit mode_split(const ad::Tensor& samples, std::span<const double> nodes) {
  const std::size_t P = nodes.size();
  if (samples.cols() != P || P < 2) throw ShapeError("mode_split: samples do not match the nodes");
  ModeSplit split;
  for (std::size_t d = 0; d < samples.rows(); ++d) {
    double left = 0.0, right = 0.0;
    for (std::size_t p = 0; p + 1 < P; ++p) {
      const double x0 = nodes[p], x1 = nodes[p + 1];
      const double y0 = samples(d, p), y1 = samples(d, p + 1);
      if (x1 <= 0.0) {
        left += 0.5 * (x1 - x0) * (y0 + y1);
      } else if (x0 >= 0.0) {
        right += 0.5 * (x1 - x0) * (y0 + y1);
      } else {
        const double y_mid = y0 + (y1 - y0) * (-x0) / (x1 - x0);
        left += 0.5 * (-x0) * (y0 + y_mid);
        right += 0.5 * x1 * (y_mid + y1);
      }
    }
    (left >= right ? split.left : split.right).push_back(d);
  }
  return split;
}

ad::Tensor select_rows(const ad::Tensor& samples, std::span<const std::size_t> rows) {
  const std::size_t P = samples.cols();
  ad::Tensor out(rows.size(), P);
  for (std::size_t r = 0; r < rows.size(); ++r)
    std::copy_n(samples.data().begin() + rows[r] * P, P, out.data().begin() + r * P);
  return out;
}

SnapshotSet make_snapshots(const ad::Tensor& samples, const ad::Tensor& sensors, std::size_t n_active,
                           Rng& rng) {
  const std::size_t S = sensors.rows(), dx = sensors.cols();
  if (samples.cols() != S) throw ShapeError("make_snapshots: samples do not match the sensor grid");
  if (n_active > S) throw ConfigError("make_snapshots: more active sensors than sensors");
  SnapshotSet set;
  set.dim_x = dx;
  set.dim_value = 1;
  std::vector<std::size_t> idx(S);
  for (std::size_t d = 0; d < samples.rows(); ++d) {
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < n_active; ++i) std::swap(idx[i], idx[i + rng.index(S - i)]);
    std::vector<std::size_t> chosen(idx.begin(), idx.begin() + n_active);
    std::sort(chosen.begin(), chosen.end());
    Snapshot s{ad::Tensor(n_active, dx), ad::Tensor(n_active, 1)};
    for (std::size_t i = 0; i < n_active; ++i) {
      for (std::size_t j = 0; j < dx; ++j) s.x(i, j) = sensors(chosen[i], j);
      s.values[i] = samples(d, chosen[i]);
    }
    set.snapshots.push_back(std::move(s));
  }
  return set;
}

namespace {

double radical_inverse(std::size_t i, std::size_t base) {
  double f = 1.0, r = 0.0;
  while (i > 0) {
    f /= static_cast<double>(base);
    r += f * static_cast<double>(i % base);
    i /= base;
  }
  return r;
}

}  // namespace

ad::Tensor halton_grid_sensors(std::size_t count, std::size_t n, double lo, double hi) {
  if (count > n * n) throw ConfigError("halton_grid_sensors: more sensors than grid nodes");
  const auto nodes = linspace_values(lo, hi, n);
  std::set<std::pair<std::size_t, std::size_t>> seen;
  ad::Tensor out(count, 2);
  std::size_t filled = 0;
  for (std::size_t i = 1; filled < count; ++i) {
    const auto snap = [n](double u) {
      return static_cast<std::size_t>(std::lround(u * static_cast<double>(n - 1)));
    };
    const std::pair<std::size_t, std::size_t> key{snap(radical_inverse(i, 2)), snap(radical_inverse(i, 3))};
    if (!seen.insert(key).second) continue;
    out(filled, 0) = nodes[key.first];
    out(filled, 1) = nodes[key.second];
    ++filled;
  }
  return out;
}

double interpolate_1d(std::span<const double> nodes, std::span<const double> values, double x) {
  if (nodes.size() != values.size() || nodes.empty()) throw ShapeError("interpolate_1d: size mismatch");
  if (x <= nodes.front()) return values.front();
  if (x >= nodes.back()) return values.back();
  const auto it = std::upper_bound(nodes.begin(), nodes.end(), x);
  const std::size_t j = static_cast<std::size_t>(it - nodes.begin());
  const double t = (x - nodes[j - 1]) / (nodes[j] - nodes[j - 1]);
  return (1.0 - t) * values[j - 1] + t * values[j];
}

}  // namespace nff

namespace nff {

namespace {

double sine_mode(double x) { return std::sin(0.5 * std::numbers::pi * x); }

ad::Tensor cross_gram(const Kernel& k, const ad::Tensor& a, const ad::Tensor& b) {
  const std::size_t d = a.cols();
  ad::Tensor G(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) G(i, j) = k(a.data().subspan(i * d, d), b.data().subspan(j * d, d));
  return G;
}

}  // namespace

std::optional<FieldMoments> analytic_moments(const FieldSpec& spec, const ad::Tensor& points) {
  const ad::Tensor K = gram(spec.kernel, points);
  const std::size_t P = points.rows();
  const double a = spec.amplitude, m = spec.kernel.mean;
  FieldMoments out{std::vector<double>(P), std::vector<double>(P), ad::Tensor(P, P)};
  switch (spec.transform) {
    case Transform::Identity:
      out.cov = K;
      for (std::size_t i = 0; i < P; ++i) out.mean[i] = m;
      break;
    case Transform::Exp:
      for (std::size_t i = 0; i < P; ++i) out.mean[i] = std::exp(a * m + 0.5 * a * a * K(i, i));
      for (std::size_t i = 0; i < P; ++i)
        for (std::size_t j = 0; j < P; ++j) out.cov(i, j) = out.mean[i] * out.mean[j] * std::expm1(a * a * K(i, j));
      break;
    case Transform::MixedExp: {
      if (points.cols() != 1 || m != 0.0) return std::nullopt;
      std::vector<double> s(P);
      for (std::size_t i = 0; i < P; ++i) {
        s[i] = sine_mode(points[i]);
        out.mean[i] = std::exp(0.5 * a * a * K(i, i)) * std::cosh(a * s[i]);
      }
      for (std::size_t i = 0; i < P; ++i)
        for (std::size_t j = 0; j < P; ++j) {
          const double second = std::exp(0.5 * a * a * (K(i, i) + K(j, j) + 2.0 * K(i, j))) * std::cosh(a * (s[i] + s[j]));
          out.cov(i, j) = second - out.mean[i] * out.mean[j];
        }
      break;
    }
  }
  for (std::size_t i = 0; i < P; ++i) out.std[i] = std::sqrt(std::max(0.0, out.cov(i, i)));
  return out;
}

std::vector<double> mixed_branch_mean(const FieldSpec& spec, const ad::Tensor& points, double sign) {
  if (spec.transform != Transform::MixedExp) throw ConfigError("mixed_branch_mean: not a mixed field");
  const double a = spec.amplitude;
  std::vector<double> mean(points.rows());
  for (std::size_t i = 0; i < points.rows(); ++i) {
    mean[i] = std::exp(0.5 * a * a * spec.kernel.variance) * std::exp(sign * a * sine_mode(points[i]));
  }
  return mean;
}

FieldMoments conditional_moments(const FieldSpec& spec, const ad::Tensor& obs_x, const ad::Tensor& obs_values,
                                 const ad::Tensor& query) {
  const std::size_t n = obs_x.rows(), q = query.rows();
  const double a = spec.amplitude, m = spec.kernel.mean;
  const Kernel centered{spec.kernel.variance, spec.kernel.gamma, 0.0};

  // Latent Gaussian conditioning g(query) | g(obs) = y.
  ad::RowMatrix Koo = gram(centered, obs_x).mat();
  Koo.diagonal().array() += kGramJitter * std::max(1.0, spec.kernel.variance);
  const ad::RowMatrix Kqo = n > 0 ? ad::RowMatrix(cross_gram(centered, query, obs_x).mat()) : ad::RowMatrix(q, 0);
  const Eigen::LDLT<ad::RowMatrix> ldlt(Koo);
  const ad::RowMatrix W = n > 0 ? ad::RowMatrix(ldlt.solve(Kqo.transpose()).transpose()) : ad::RowMatrix(q, 0);
  std::vector<double> var(q);
  for (std::size_t i = 0; i < q; ++i) {
    const double prior = spec.kernel.variance;
    var[i] = std::max(0.0, prior - (n > 0 ? W.row(i).dot(Kqo.row(i)) : 0.0));
  }
  const auto latent_mean = [&](const Eigen::VectorXd& y) {
    Eigen::VectorXd mu = Eigen::VectorXd::Constant(q, m);
    if (n > 0) mu += W * (y.array() - m).matrix();
    return mu;
  };
  const auto log_marginal = [&](const Eigen::VectorXd& y) {
    if (n == 0) return 0.0;
    const Eigen::VectorXd r = (y.array() - m).matrix();
    return -0.5 * r.dot(ldlt.solve(r)) - 0.5 * ldlt.vectorD().array().log().sum();
  };

  FieldMoments out{std::vector<double>(q), std::vector<double>(q), ad::Tensor()};
  Eigen::VectorXd y(n);
  switch (spec.transform) {
    case Transform::Identity: {
      for (std::size_t i = 0; i < n; ++i) y[i] = obs_values[i];
      const Eigen::VectorXd mu = latent_mean(y);
      for (std::size_t i = 0; i < q; ++i) out.mean[i] = mu[i], out.std[i] = std::sqrt(var[i]);
      break;
    }
    case Transform::Exp: {
      for (std::size_t i = 0; i < n; ++i) y[i] = std::log(obs_values[i]) / a;
      const Eigen::VectorXd mu = latent_mean(y);
      for (std::size_t i = 0; i < q; ++i) {
        out.mean[i] = std::exp(a * mu[i] + 0.5 * a * a * var[i]);
        out.std[i] = out.mean[i] * std::sqrt(std::expm1(a * a * var[i]));
      }
      break;
    }
    case Transform::MixedExp: {
      double logw[2];
      Eigen::VectorXd mus[2];
      const double signs[2] = {1.0, -1.0};
      for (int b = 0; b < 2; ++b) {
        for (std::size_t i = 0; i < n; ++i) y[i] = std::log(obs_values[i]) / a - signs[b] * sine_mode(obs_x[i]);
        mus[b] = latent_mean(y);
        logw[b] = log_marginal(y);
      }
      const double top = std::max(logw[0], logw[1]);
      double w[2] = {std::exp(logw[0] - top), std::exp(logw[1] - top)};
      const double total = w[0] + w[1];
      w[0] /= total;
      w[1] /= total;
      for (std::size_t i = 0; i < q; ++i) {
        double first = 0.0, second = 0.0;
        for (int b = 0; b < 2; ++b) {
          const double c = a * (mus[b][i] + signs[b] * sine_mode(query[i]));
          first += w[b] * std::exp(c + 0.5 * a * a * var[i]);
          second += w[b] * std::exp(2.0 * c + 2.0 * a * a * var[i]);
        }
        out.mean[i] = first;
        out.std[i] = std::sqrt(std::max(0.0, second - first * first));
      }
      break;
    }
  }
  return out;
}

}  // namespace nff
