#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "helpers.hpp"
#include "nff/adam.hpp"
#include "nff/autodiff.hpp"
#include "nff/coupling_flow.hpp"
#include "nff/dense_nets.hpp"
#include "nff/field_flow.hpp"
#include "nff/gp_oracle.hpp"
#include "nff/pde_loss.hpp"
#include "nff/reference_field.hpp"
#include "oracles.hpp"
#include "proptest.hpp"

namespace proptest {

namespace {

using nff::Field;
using nff::Rng;
using nff::ad::Graph;
using nff::ad::Tensor;
using nff::ad::Var;

Trial within(double error, const OracleCase& c, std::string detail = {}) { return {error, c.tolerance, std::move(detail)}; }

// ---------------------------------------------------------------- autodiff

Trial autodiff_primitives(const OracleCase& c, std::uint64_t seed, const Options&) {
  Rng rng(seed);
  Tensor a = oracle::random_tensor(3, 3, rng), b = oracle::random_tensor(3, 3, rng);
  Tensor v = oracle::random_tensor(3, 1, rng);
  for (std::size_t i = 0; i < 3; ++i) a(i, i) += 4.0;
  std::vector<Tensor*> params{&a, &b, &v};
  // One expression touching every primitive.
  const auto build = [&](Graph& g) {
    const Var A = g.parameter(a), B = g.parameter(b), V = g.parameter(v);
    const Var sq = nff::ad::matmul(A, nff::ad::transpose(A));
    const Var mixed = nff::ad::exp(nff::ad::scale(B, 0.3)) - nff::ad::relu(B) + nff::ad::tanh(B) * nff::ad::softplus(B);
    const Var pos = nff::ad::log(nff::ad::add_scalar(nff::ad::square(V), 1.0)) / nff::ad::add_scalar(nff::ad::exp(V), 1.0);
    const Var stacked = nff::ad::concat_rows({nff::ad::slice_rows(mixed, 0, 2), nff::ad::reshape(pos, 1, 3)});
    const Var cat = nff::ad::concat_cols({stacked, nff::ad::diag(pos)});
    return nff::ad::sum(nff::ad::matmul(nff::ad::inverse(sq), nff::ad::slice_cols(cat, 1, 3))) +
           nff::ad::logdet(sq) + 2.0 * nff::ad::mean(nff::ad::row_sum(cat));
  };
  Graph g;
  const auto vg = nff::ad::value_and_grad(g, build(g));
  std::vector<Tensor> grads;
  for (Tensor* p : params) grads.push_back(vg.gradients.of(*p));
  const auto res = oracle::check_gradients(params, [&] {
    Graph h;
    return build(h).item();
  }, grads, 64, rng, 1e-5);
  return within(res.worst, c);
}

Trial autodiff_inverse(const OracleCase& c, std::uint64_t seed, const Options&) {
  Rng rng(seed);
  Tensor m = oracle::random_tensor(4, 4, rng);
  for (std::size_t i = 0; i < 4; ++i) m(i, i) += 4.0;
  Graph g;
  const Var v = g.constant(m);
  const double inv_err =
      (oracle::to_mat(nff::ad::inverse(v).value()) * oracle::to_mat(m) - oracle::Mat::Identity(4, 4)).cwiseAbs().maxCoeff();
  // Cofactor expansion of the leading 3x3 block.
  const auto& M = m;
  const double det3 = M(0, 0) * (M(1, 1) * M(2, 2) - M(1, 2) * M(2, 1)) -
                      M(0, 1) * (M(1, 0) * M(2, 2) - M(1, 2) * M(2, 0)) +
                      M(0, 2) * (M(1, 0) * M(2, 1) - M(1, 1) * M(2, 0));
  Tensor m3(3, 3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) m3(i, j) = m(i, j);
  const double ld_err = std::abs(nff::ad::logdet(g.constant(m3)).item() - std::log(std::abs(det3)));
  return within(std::max(inv_err, ld_err), c);
}

Trial mlp_gradients(const OracleCase& c, std::uint64_t seed, const Options&) {
  Rng rng(seed);
  nff::Mlp net = nff::init_mlp({2, 6, 6, 1}, seed);
  std::vector<nff::NamedParam> params;
  net.collect("net", params);
  testing_util::perturb(params, rng, 0.1);
  const Tensor x = oracle::random_tensor(5, 2, rng);
  const auto ptrs = testing_util::tensors(params);
  Graph g;
  const auto vg = nff::ad::value_and_grad(g, nff::ad::sum(net.forward(g, g.constant(x))));
  std::vector<Tensor> grads;
  for (Tensor* p : ptrs) grads.push_back(vg.gradients.of(*p));
  const auto res = oracle::check_gradients(ptrs, [&] {
    Graph h;
    return nff::ad::sum(net.forward(h, h.constant(x))).item();
  }, grads, 16, rng, 1e-5);
  return within(res.worst, c);
}

Trial adam_first_step(const OracleCase& c, std::uint64_t seed, const Options&) {
  Rng rng(seed);
  Tensor p = oracle::random_tensor(2, 3, rng);
  const Tensor start = p, grad = oracle::random_tensor(2, 3, rng);
  nff::ad::AdamState st;
  nff::ad::AdamConfig cfg;
  Tensor* ptr = &p;
  nff::ad::adam_step(std::span<Tensor* const>(&ptr, 1), std::span<const Tensor>(&grad, 1), st, cfg);
  double worst = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    worst = std::max(worst, std::abs(p[i] - (start[i] - cfg.lr * grad[i] / (std::abs(grad[i]) + cfg.eps))));
  return within(worst, c);
}

// ------------------------------------------------------------ coupling flow

struct FlowInstance {
  nff::CouplingStack stack;
  Tensor z, x;
};

FlowInstance random_flow(std::uint64_t seed, std::size_t rows) {
  Rng rng(seed);
  const std::size_t dim = 2 + rng.index(3), cond = 1 + rng.index(2), blocks = 1 + rng.index(6);
  return {testing_util::random_stack(dim, cond, blocks, seed), oracle::random_tensor(rows, dim, rng, 2.0),
          oracle::random_tensor(rows, cond, rng)};
}

Trial flow_round_trip(const OracleCase& c, std::uint64_t seed, const Options&) {
  const FlowInstance f = random_flow(seed, c.size);
  const nff::FlowValues fwd = nff::flow_forward(f.stack, f.z, f.x);
  const nff::FlowValues inv = nff::flow_inverse(f.stack, fwd.value, f.x);
  double worst = 0.0;
  for (std::size_t i = 0; i < f.z.size(); ++i) worst = std::max(worst, std::abs(inv.value[i] - f.z[i]));
  return within(worst, c);
}

Trial flow_logdet_cancel(const OracleCase& c, std::uint64_t seed, const Options&) {
  const FlowInstance f = random_flow(seed, c.size);
  const nff::FlowValues fwd = nff::flow_forward(f.stack, f.z, f.x);
  const nff::FlowValues inv = nff::flow_inverse(f.stack, fwd.value, f.x);
  double worst = 0.0;
  for (std::size_t i = 0; i < f.z.rows(); ++i) worst = std::max(worst, std::abs(fwd.logdet[i] + inv.logdet[i]));
  return within(worst, c);
}

Trial flow_block_jacobian(const OracleCase& c, std::uint64_t seed, const Options& opt) {
  Rng rng(seed);
  const nff::CouplingStack s = testing_util::random_stack(2, 1, 2, seed, 0.3);
  double worst = 0.0;
  for (std::size_t b = 0; b < s.size(); ++b) {
    const nff::CouplingBlock& blk = s.block(b);
    const Tensor x = oracle::random_tensor(1, 1, rng), z = oracle::random_tensor(1, 2, rng);
    const auto fn = [&](const oracle::Vec& v) {
      Graph g;
      return oracle::to_vec(blk.forward(g, g.constant(Tensor::row({v[0], v[1]})), g.constant(x)).value.value());
    };
    const oracle::Mat J = oracle::numeric_jacobian(fn, oracle::to_vec(z));
    Graph g;
    double ld = blk.forward(g, g.constant(z), g.constant(x)).logdet.item();
    if (opt.mutate_logdet) ld = -ld;
    worst = std::max(worst, std::abs(ld - std::log(std::abs(J.determinant()))));
  }
  return within(worst, c);
}

Trial flow_stack_jacobian(const OracleCase& c, std::uint64_t seed, const Options& opt) {
  Rng rng(seed);
  const nff::CouplingStack s = testing_util::random_stack(2, 1, 6, seed);
  const Tensor x = oracle::random_tensor(1, 1, rng), z = oracle::random_tensor(1, 2, rng);
  const auto fn = [&](const oracle::Vec& v) {
    return oracle::to_vec(nff::flow_forward(s, Tensor::row({v[0], v[1]}), x).value);
  };
  const oracle::Mat J = oracle::numeric_jacobian(fn, oracle::to_vec(z));
  double ld = nff::flow_forward(s, z, x).logdet[0];
  if (opt.mutate_logdet) ld = -ld;
  return within(std::abs(ld - std::log(std::abs(J.determinant()))), c);
}

// ---------------------------------------------------------- reference field

struct PlainStats {
  Tensor mean, factor, scale;
};

PlainStats random_stats(std::size_t n, std::size_t M, Rng& rng) {
  PlainStats s{oracle::random_tensor(n, 1, rng), oracle::random_tensor(n, M, rng, 0.7), Tensor(n, 1)};
  for (double& v : s.scale.data()) v = 0.2 + rng.uniform();
  return s;
}

double dense_logpdf(const PlainStats& s, const Tensor& z) {
  const oracle::Mat B = oracle::to_mat(s.factor);
  const oracle::Vec d = oracle::to_vec(s.scale).array().square();
  return oracle::gaussian_logpdf(oracle::to_vec(z), oracle::to_vec(s.mean),
                                 B * B.transpose() + oracle::Mat(d.asDiagonal()));
}

nff::SnapshotStats constants(Graph& g, const PlainStats& s) {
  return {g.constant(s.mean), g.constant(s.factor), g.constant(s.scale)};
}

Trial lowrank_vs_dense(const OracleCase& c, std::uint64_t seed, const Options&) {
  Rng rng(seed);
  const std::size_t n = 1 + rng.index(30), M = 1 + rng.index(8);
  const PlainStats s = random_stats(n, M, rng);
  const Tensor z = oracle::random_tensor(n, 1, rng, 2.0);
  Graph g;
  const double got = nff::lowrank_logpdf(constants(g, s), g.constant(z)).item();
  return within(std::abs(got - dense_logpdf(s, z)), c);
}

Trial joint_stacking(const OracleCase& c, std::uint64_t seed, const Options&) {
  Rng rng(seed);
  const std::size_t M = 1 + rng.index(8);
  std::vector<PlainStats> parts;
  std::size_t total = 0;
  for (int f = 0; f < 3; ++f) {
    parts.push_back(random_stats(1 + rng.index(10), M, rng));
    total += parts.back().mean.rows();
  }
  const Tensor z = oracle::random_tensor(total, 1, rng);
  PlainStats dense{Tensor(total, 1), Tensor(total, M), Tensor(total, 1)};
  std::size_t r = 0;
  for (const auto& p : parts)
    for (std::size_t i = 0; i < p.mean.rows(); ++i, ++r) {
      dense.mean[r] = p.mean[i];
      dense.scale[r] = p.scale[i];
      for (std::size_t m = 0; m < M; ++m) dense.factor(r, m) = p.factor(i, m);
    }
  Graph g;
  std::vector<nff::SnapshotStats> stats;
  for (const auto& p : parts) stats.push_back(constants(g, p));
  const double got = nff::lowrank_logpdf(nff::joint_snapshot_stats(stats), g.constant(z)).item();
  return within(std::abs(got - dense_logpdf(dense, z)), c);
}

Trial posterior_xi(const OracleCase& c, std::uint64_t seed, const Options&) {
  Rng rng(seed);
  const std::size_t n = 1 + rng.index(15), M = 1 + rng.index(8);
  const PlainStats s = random_stats(n, M, rng);
  const Tensor z = oracle::random_tensor(n, 1, rng);
  const nff::PosteriorXi post = nff::posterior_xi(s.mean, s.factor, s.scale, z, M);
  const auto want = oracle::condition_latent(oracle::to_vec(z), oracle::to_vec(s.mean), oracle::to_mat(s.factor),
                                             oracle::to_vec(s.scale).array().square());
  const double err = std::max((oracle::to_vec(post.mean) - want.mean).cwiseAbs().maxCoeff(),
                              (oracle::to_mat(post.cov) - want.cov).cwiseAbs().maxCoeff());
  const Eigen::SelfAdjointEigenSolver<oracle::Mat> es(oracle::to_mat(post.cov));
  // Distance of the spectrum outside [0, 1].
  const double outside =
      std::max({0.0, -es.eigenvalues().minCoeff(), es.eigenvalues().maxCoeff() - 1.0});
  return within(std::max(err, outside), c);
}

Trial lowrank_gradients(const OracleCase& c, std::uint64_t seed, const Options&) {
  Rng rng(seed);
  PlainStats s = random_stats(7, 3, rng);
  Tensor z = oracle::random_tensor(7, 1, rng);
  std::vector<Tensor*> params{&s.mean, &s.factor, &s.scale, &z};
  Graph g;
  const auto vg = nff::ad::value_and_grad(
      g, nff::lowrank_logpdf({g.parameter(s.mean), g.parameter(s.factor), g.parameter(s.scale)}, g.parameter(z)));
  std::vector<Tensor> grads;
  for (Tensor* p : params) grads.push_back(vg.gradients.of(*p));
  const auto res = oracle::check_gradients(params, [&] {
    Graph h;
    return nff::lowrank_logpdf(constants(h, s), h.constant(z)).item();
  }, grads, 32, rng, 1e-5);
  return within(res.worst, c);
}

// ---------------------------------------------------------- training losses

// Directional checks on ReLU nets; a base point every line of which crosses a
// kink has no usable finite difference and the instance is discarded.
Trial param_gradient_error(const std::vector<nff::NamedParam>& params, const std::function<Var(Graph&)>& loss,
                           Rng& rng, const OracleCase& c, const Options& opt, bool richardson) {
  const auto ptrs = testing_util::tensors(params);
  Graph g;
  const auto vg = nff::ad::value_and_grad(g, loss(g));
  std::vector<Tensor> grads;
  for (Tensor* p : ptrs) {
    grads.push_back(vg.gradients.of(*p));
    for (double& v : grads.back().data()) v *= opt.gradient_scale;
  }
  const auto value = [&] {
    Graph h;
    return loss(h).item();
  };
  const std::size_t directions = 8;
  const auto res = richardson ? oracle::check_directional(ptrs, value, grads, directions, rng, 1e-3, true)
                              : oracle::check_directional(ptrs, value, grads, directions, rng);
  Trial t = within(res.worst, c, std::to_string(res.skipped) + " lines skipped at kinks");
  t.discarded = res.checked < directions;
  return t;
}

Trial nff_data_loss_gradients(const OracleCase& c, std::uint64_t seed, const Options& opt) {
  Rng rng(seed);
  const std::size_t dim_x = 1 + seed % 2;
  nff::FieldFlowConfig cfg = testing_util::tiny_flow(dim_x);
  cfg.dim_value = 1 + (seed / 2) % 2;
  nff::FieldFlow model(cfg, seed);
  testing_util::perturb(model.parameters(""), rng, 0.1);
  const nff::SnapshotSet data = testing_util::random_set(c.size, dim_x, cfg.dim_value, rng);
  std::vector<std::size_t> batch(data.size());
  std::iota(batch.begin(), batch.end(), 0);
  std::size_t rows = 0;
  for (const auto& s : data.snapshots) rows += s.size();
  const Tensor aux = nff::draw_aux(model, rows, rng);
  return param_gradient_error(
      model.parameters(""), [&](Graph& g) { return nff::nff_data_loss(g, model, data, batch, aux); }, rng, c, opt, false);
}

Trial joint_data_loss_gradients(const OracleCase& c, std::uint64_t seed, const Options& opt) {
  Rng rng(seed);
  const std::size_t dim = 1 + seed % 2;
  nff::SdeModel m = testing_util::tiny_sde(dim, dim == 1, seed);
  const nff::SdeDataset data = testing_util::random_sde_data(m, c.size, rng);
  std::vector<std::size_t> batch(c.size);
  std::iota(batch.begin(), batch.end(), 0);
  const auto aux = nff::draw_joint_aux(m, data, batch, rng);
  return param_gradient_error(
      m.parameters(), [&](Graph& g) { return nff::joint_data_loss(g, m, data, batch, aux); }, rng, c, opt, false);
}

Trial equation_loss_gradients(const OracleCase& c, std::uint64_t seed, const Options& opt) {
  Rng rng(seed);
  const std::size_t dim = 1 + seed % 2;
  nff::SdeModel m = testing_util::tiny_sde(dim, dim == 1, seed);
  const nff::InstanceNoise noise = nff::draw_noise(m, c.size, rng);
  const nff::Collocation col = nff::draw_collocation(m.domain, c.size, m.physics.radius, rng);
  return param_gradient_error(
      m.parameters(),
      [&](Graph& g) {
        return nff::equation_loss(g, nff::NffSurrogate(m, noise), col, m.physics.radius, 1e-3, m.domain);
      },
      rng, c, opt, true);
}

Trial boundary_loss_gradients(const OracleCase& c, std::uint64_t seed, const Options& opt) {
  Rng rng(seed);
  const std::size_t dim = 1 + seed % 2;
  nff::SdeModel m = testing_util::tiny_sde(dim, dim == 1, seed);
  const nff::InstanceNoise noise = nff::draw_noise(m, c.size, rng);
  const Tensor bnd = nff::draw_boundary(m.domain, c.size, rng);
  return param_gradient_error(
      m.parameters(), [&](Graph& g) { return nff::boundary_loss(g, nff::NffSurrogate(m, noise), bnd); }, rng, c, opt,
      false);
}

// ---------------------------------------------------------- weak-form loss

// Smooth fields where u does not solve the equation.
double k1(double x) { return 1.0 + 0.3 * std::sin(2.0 * x); }
double u1(double x) { return (1.0 - x * x) * (0.5 + 0.2 * x); }
double du1(double x) { return -2.0 * x * (0.5 + 0.2 * x) + 0.2 * (1.0 - x * x); }
double f1(double x) { return 1.0 + 0.5 * std::cos(3.0 * x); }

double k2(double a, double b) { return 1.0 + 0.3 * std::sin(2.0 * a + b); }
double u2(double a, double b) { return a * (1.0 - a) * b * (1.0 - b) * (1.0 + a); }
double u2a(double a, double b) { return b * (1.0 - b) * ((1.0 - 2.0 * a) * (1.0 + a) + a * (1.0 - a)); }
double u2b(double a, double b) { return a * (1.0 - a) * (1.0 + a) * (1.0 - 2.0 * b); }
double f2(double a, double b) { return 1.0 + 0.5 * std::cos(3.0 * a - b); }

// Mean and batch-means standard error of the loss over `total` instances.
std::pair<double, double> batched_loss(const std::function<double(std::size_t, Rng&)>& batch_loss,
                                       std::size_t total, Rng& rng) {
  const std::size_t batches = 100, per = std::max<std::size_t>(1, total / batches);
  std::vector<double> means;
  for (std::size_t b = 0; b < batches; ++b) means.push_back(batch_loss(per, rng));
  const double mean = std::accumulate(means.begin(), means.end(), 0.0) / batches;
  double var = 0.0;
  for (double m : means) var += (m - mean) * (m - mean);
  return {mean, std::sqrt(var / (batches - 1) / batches)};
}

Trial manufactured_1d(const OracleCase& c, std::uint64_t seed, const Options&) {
  const nff::Domain dom{1, -1.0, 1.0};
  const nff::FunctionSurrogate s([](auto, std::size_t) { return 1.0; }, [](auto, std::size_t) { return 1.0; },
                                 [](std::span<const double> x, std::size_t) { return 0.5 * (1.0 - x[0] * x[0]); });
  Rng rng(seed);
  const nff::Collocation col = nff::draw_collocation(dom, c.size, 0.4, rng);
  Graph g;
  return within(std::abs(nff::equation_loss_1d(g, s, col, 0.4, 1e-3, dom).item()), c);
}

Trial mismatch_1d(const OracleCase& c, std::uint64_t seed, const Options&) {
  const nff::Domain dom{1, -1.0, 1.0};
  const double r = 0.4;
  const nff::FunctionSurrogate s([](std::span<const double> x, std::size_t) { return k1(x[0]); },
                                 [](std::span<const double> x, std::size_t) { return f1(x[0]); },
                                 [](std::span<const double> x, std::size_t) { return u1(x[0]); });
  const auto gap = [&](double ctr) {
    const double w = (k1(ctr - r / 2) * du1(ctr - r / 2) - k1(ctr + r / 2) * du1(ctr + r / 2)) / r;
    return w - oracle::integrate(f1, ctr - r / 2, ctr + r / 2, 4) / r;
  };
  const double want =
      oracle::integrate([&](double ctr) { return gap(ctr) * gap(ctr); }, -1.0 + r / 2, 1.0 - r / 2) / (2.0 - r);
  Rng rng(seed);
  const auto [mean, se] = batched_loss(
      [&](std::size_t n, Rng& rr) {
        const nff::Collocation col = nff::draw_collocation(dom, n, r, rr);
        Graph g;
        return nff::equation_loss_1d(g, s, col, r, 1e-3, dom).item();
      },
      c.size, rng);
  return {std::abs(mean - want), c.tolerance * se,
          "estimate " + std::to_string(mean) + " vs quadrature " + std::to_string(want)};
}

Trial mismatch_2d(const OracleCase& c, std::uint64_t seed, const Options&) {
  const nff::Domain dom{2, 0.0, 1.0};
  const double r = 0.2, h = r / 2;
  const nff::FunctionSurrogate s([](std::span<const double> x, std::size_t) { return k2(x[0], x[1]); },
                                 [](std::span<const double> x, std::size_t) { return f2(x[0], x[1]); },
                                 [](std::span<const double> x, std::size_t) { return u2(x[0], x[1]); });
  const auto avg = [&](const std::function<double(double)>& fn, double ctr) {
    return oracle::integrate(fn, ctr - h, ctr + h, 2) / r;
  };
  const auto gap = [&](double al, double be) {
    const double w = (avg([&](double b) { return k2(al - h, b) * u2a(al - h, b); }, be) -
                      avg([&](double b) { return k2(al + h, b) * u2a(al + h, b); }, be) +
                      avg([&](double a) { return k2(a, be - h) * u2b(a, be - h); }, al) -
                      avg([&](double a) { return k2(a, be + h) * u2b(a, be + h); }, al)) /
                     r;
    return w - avg([&](double a) { return avg([&](double b) { return f2(a, b); }, be); }, al);
  };
  const double L = 1.0 - r;
  const double want =
      oracle::integrate(
          [&](double al) {
            return oracle::integrate([&](double be) { return gap(al, be) * gap(al, be); }, h, 1.0 - h, 8);
          },
          h, 1.0 - h, 8) /
      (L * L);
  Rng rng(seed);
  const auto [mean, se] = batched_loss(
      [&](std::size_t n, Rng& rr) {
        const nff::Collocation col = nff::draw_collocation(dom, n, r, rr);
        Graph g;
        return nff::equation_loss_2d(g, s, col, r, 1e-3, dom).item();
      },
      c.size, rng);
  return {std::abs(mean - want), c.tolerance * se,
          "estimate " + std::to_string(mean) + " vs quadrature " + std::to_string(want)};
}

// ------------------------------------------------------------------ oracles

Trial gp_pointwise_variance(const OracleCase& c, std::uint64_t seed, const Options&) {
  const nff::Kernel k = nff::Kernel::squared_exponential(1.0 / std::sqrt(2.0), 0.5);
  Rng rng(seed);
  const Tensor s = nff::gp_sample(k, nff::linspace(-1.0, 1.0, 4), c.size, rng);
  const nff::Moments m = nff::column_moments(s);
  double worst = 0.0;
  for (double sd : m.std) worst = std::max(worst, std::abs(sd * sd - 0.5));
  // Sample variance of normals has variance 2 sigma^4 / n.
  return {worst, c.tolerance * std::sqrt(2.0 * 0.25 / static_cast<double>(c.size)), {}};
}

Trial mixed_mean(const OracleCase& c, std::uint64_t seed, const Options&) {
  Rng rng(seed);
  const Tensor pts = Tensor::column({-0.8, -0.2, 0.0, 0.5});
  const nff::Moments m = nff::column_moments(nff::mixed_sample(pts, c.size, rng));
  double ratio = 0.0, err = 0.0, bound = 0.0;
  for (std::size_t p = 0; p < pts.rows(); ++p) {
    const double want = std::exp(0.045) * std::cosh(0.3 * std::sin(0.5 * std::numbers::pi * pts[p]));
    const double e = std::abs(m.mean[p] - want), b = c.tolerance * m.std[p] / std::sqrt(static_cast<double>(c.size));
    if (e / b > ratio) ratio = e / b, err = e, bound = b;
  }
  return {err, bound, {}};
}

Trial forcing_moments(const OracleCase& c, std::uint64_t seed, const Options&) {
  Rng rng(seed);
  const nff::Moments m = nff::column_moments(nff::forcing_sample(Tensor::column({-0.3, 0.6}), c.size, rng));
  const double sd = 0.15, n = static_cast<double>(c.size);
  double ratio = 0.0, err = 0.0, bound = 0.0;
  for (std::size_t p = 0; p < 2; ++p) {
    const std::pair<double, double> checks[2] = {{std::abs(m.mean[p] - 0.5), c.tolerance * sd / std::sqrt(n)},
                                                 {std::abs(m.std[p] * m.std[p] - sd * sd),
                                                  c.tolerance * sd * sd * std::sqrt(2.0 / n)}};
    for (const auto& [e, b] : checks)
      if (e / b > ratio) ratio = e / b, err = e, bound = b;
  }
  return {err, bound, {}};
}

Trial solver_1d_analytic(const OracleCase& c, std::uint64_t, const Options&) {
  const auto nodes = nff::linspace_values(-1.0, 1.0, c.size);
  const std::vector<double> ones(c.size, 1.0);
  const auto u = nff::solve_elliptic_1d(ones, ones, nodes);
  double worst = 0.0;
  for (std::size_t i = 0; i < c.size; ++i) worst = std::max(worst, std::abs(u[i] - 0.5 * (1.0 - nodes[i] * nodes[i])));
  return within(worst, c);
}

Trial solver_1d_refinement(const OracleCase& c, std::uint64_t, const Options&) {
  // -(k u')' = f with k = exp(x), u = 1 - x^2, f = 2 exp(x) (1 + x).
  const auto err = [](std::size_t n) {
    const auto x = nff::linspace_values(-1.0, 1.0, n);
    std::vector<double> k(n), f(n);
    for (std::size_t i = 0; i < n; ++i) k[i] = std::exp(x[i]), f[i] = 2.0 * std::exp(x[i]) * (1.0 + x[i]);
    const auto u = nff::solve_elliptic_1d(k, f, x);
    double w = 0.0;
    for (std::size_t i = 0; i < n; ++i) w = std::max(w, std::abs(u[i] - (1.0 - x[i] * x[i])));
    return w;
  };
  const double ratio = err(c.size) / err(2 * c.size - 1);
  return within(std::abs(ratio - 4.0), c, "error ratio " + std::to_string(ratio));
}

Trial solver_2d_refinement(const OracleCase& c, std::uint64_t, const Options&) {
  const auto centre = [](std::size_t n) {
    const std::vector<double> ones(n * n, 1.0);
    return nff::solve_elliptic_2d(ones, ones, n, 1.0 / static_cast<double>(n - 1))[(n / 2) * n + n / 2];
  };
  const std::size_t n = c.size;
  const double a = centre(n), b = centre(2 * n - 1), d = centre(4 * n - 3);
  const double ratio = (a - b) / (b - d);
  return within(std::abs(ratio - 4.0), c, "self-convergence ratio " + std::to_string(ratio));
}

Trial solver_2d_symmetry(const OracleCase& c, std::uint64_t, const Options&) {
  const std::size_t n = c.size;
  const std::vector<double> ones(n * n, 1.0);
  const auto u = nff::solve_elliptic_2d(ones, ones, n, 1.0 / static_cast<double>(n - 1));
  double asym = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      asym = std::max(asym, std::abs(u[i * n + j] - u[j * n + i]));
      asym = std::max(asym, std::abs(u[i * n + j] - u[(n - 1 - i) * n + j]));
    }
  return within(asym, c);
}

Trial spectra_gram(const OracleCase& c, std::uint64_t seed, const Options&) {
  const nff::Kernel k = nff::Kernel::squared_exponential(1.0 / std::sqrt(2.0), 0.5);
  const Tensor pts = nff::linspace(-1.0, 1.0, 12);
  Rng rng(seed);
  const auto ev = nff::spectra(nff::gp_sample(k, pts, c.size, rng));
  const auto exact = nff::symmetric_eigenvalues(nff::gram(k, pts));
  double worst = 0.0;
  for (std::size_t i = 0; i < 5; ++i) worst = std::max(worst, std::abs(ev[i] - exact[i]) / exact[i]);
  return within(worst, c);
}

Trial analytic_moments(const OracleCase& c, std::uint64_t seed, const Options&) {
  const Tensor pts = Tensor::column({-0.5, 0.25});
  double ratio = 0.0, err = 0.0, bound = 0.0;
  for (nff::Transform t : {nff::Transform::Identity, nff::Transform::Exp, nff::Transform::MixedExp}) {
    const double mean = t == nff::Transform::MixedExp ? 0.0 : 0.1;
    const nff::FieldSpec spec{nff::Kernel::squared_exponential(0.8, 0.3, mean), t,
                              t == nff::Transform::MixedExp ? 0.3 : 1.0};
    const auto exact = nff::analytic_moments(spec, pts);
    Rng rng(seed);
    const nff::Moments m = nff::column_moments(nff::sample_field(spec, pts, c.size, rng));
    for (std::size_t p = 0; p < 2; ++p) {
      const double e = std::abs(m.mean[p] - exact->mean[p]);
      const double b = c.tolerance * m.std[p] / std::sqrt(static_cast<double>(c.size));
      if (e / b > ratio) ratio = e / b, err = e, bound = b;
    }
  }
  return {err, bound, {}};
}

std::vector<Property> build() {
  using O = Oracle;
  return {
      {"autodiff.primitives", "every primitive adjoint matches central differences", {1, 10, 1, 1e-5, O::FiniteDifference},
       autodiff_primitives},
      {"autodiff.inverse_logdet", "A inv(A) = I and logdet equals the 3x3 cofactor determinant",
       {1, 20, 1, 1e-10, O::ClosedFormMoment}, autodiff_inverse},
      {"dense_nets.gradients", "MLP parameter gradients match central differences", {1, 5, 1, 1e-5, O::FiniteDifference},
       mlp_gradients},
      {"adam.first_step", "first Adam step is lr * g / (|g| + eps)", {1, 5, 1, 1e-14, O::ClosedFormMoment},
       adam_first_step},
      {"flow.round_trip", "flow_inverse(flow_forward(z)) = z", {1000, 125, 8, 1e-9, O::SelfConsistency},
       flow_round_trip},
      {"flow.logdet_cancel", "forward and inverse log-dets cancel", {1000, 125, 8, 1e-10, O::SelfConsistency},
       flow_logdet_cancel},
      {"flow.block_jacobian", "per-block log-det equals log|det| of the numerical 2x2 Jacobian",
       {2000, 20, 1, 1e-6, O::NumericJacobian}, flow_block_jacobian},
      {"flow.stack_jacobian", "6-block log-det equals log|det| of the numerical 2x2 Jacobian",
       {3000, 20, 1, 1e-6, O::NumericJacobian}, flow_stack_jacobian},
      {"reference.lowrank_vs_dense", "Woodbury log-density equals the dense Gaussian",
       {4000, 100, 1, 1e-8, O::DenseGaussian}, lowrank_vs_dense},
      {"reference.joint_stacking", "stacked k, f, u log-density equals the dense Gaussian",
       {5000, 20, 1, 1e-8, O::DenseGaussian}, joint_stacking},
      {"reference.posterior_xi", "posterior of xi equals dense conditioning, spectrum in [0, 1]",
       {6000, 50, 1, 1e-8, O::DenseGaussian}, posterior_xi},
      {"reference.lowrank_gradients", "log-density gradients match central differences",
       {7000, 5, 1, 1e-5, O::FiniteDifference}, lowrank_gradients},
      {"losses.nff_data_loss_gradients", "single-field data loss gradients (directional differences)",
       {8000, 32, 5, 1e-5, O::FiniteDifference}, nff_data_loss_gradients},
      {"losses.joint_data_loss_gradients", "joint data loss gradients (directional differences)",
       {8100, 32, 5, 1e-5, O::FiniteDifference}, joint_data_loss_gradients},
      {"losses.equation_loss_gradients", "equation loss gradients with frozen noise (Richardson directional)",
       {8200, 32, 4, 1e-5, O::FiniteDifference}, equation_loss_gradients},
      {"losses.boundary_loss_gradients", "boundary loss gradients with frozen noise",
       {8300, 32, 4, 1e-5, O::FiniteDifference}, boundary_loss_gradients},
      {"weak.manufactured_1d", "k = 1, u = (1 - x^2) / 2, f = 1 gives zero equation loss",
       {9000, 3, 4096, 1e-20, O::ClosedFormMoment}, manufactured_1d},
      {"weak.mismatch_1d", "1-D weak loss of a non-solution matches quadrature (tolerance in standard errors)",
       {9100, 1, 100000, 4.0, O::Quadrature}, mismatch_1d},
      {"weak.mismatch_2d", "2-D weak loss of a non-solution matches quadrature (tolerance in standard errors)",
       {9200, 1, 100000, 4.0, O::Quadrature}, mismatch_2d},
      {"gp.pointwise_variance", "GP samples have pointwise variance sigma^2 (standard errors)",
       {10000, 1, 100000, 4.0, O::ClosedFormMoment}, gp_pointwise_variance},
      {"gp.mixed_mean", "mixed field mean is exp(0.045) cosh(0.3 sin(pi x / 2)) (standard errors)",
       {10100, 1, 100000, 4.0, O::ClosedFormMoment}, mixed_mean},
      {"gp.forcing_moments", "forcing has mean 1/2 and variance 9/400 (standard errors)",
       {10200, 1, 100000, 4.0, O::ClosedFormMoment}, forcing_moments},
      {"gp.analytic_moments", "closed-form field means agree with sampling (standard errors)",
       {10300, 1, 100000, 4.0, O::ClosedFormMoment}, analytic_moments},
      {"gp.spectra_gram", "top-5 sample spectrum within 5% of the Gram eigenvalues",
       {10400, 1, 100000, 0.05, O::ClosedFormMoment}, spectra_gram},
      {"solver.1d_analytic", "-u'' = 1 solver error below 1e-3 at h = 1/128", {0, 1, 257, 1e-3, O::ClosedFormMoment},
       solver_1d_analytic},
      {"solver.1d_refinement", "variable-k 1-D error ratio under halving is 4 +- 0.5", {0, 1, 65, 0.5, O::GridRefinement},
       solver_1d_refinement},
      {"solver.2d_refinement", "2-D centre value self-convergence ratio is 4 +- 0.5", {0, 1, 17, 0.5, O::GridRefinement},
       solver_2d_refinement},
      {"solver.2d_symmetry", "2-D solution of a symmetric problem is symmetric", {0, 1, 33, 1e-13, O::SelfConsistency},
       solver_2d_symmetry},
  };
}

}  // namespace

const std::vector<Property>& registry() {
  static const std::vector<Property> props = build();
  return props;
}

}  // namespace proptest
