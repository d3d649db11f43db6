#include <doctest.h>

#include <cmath>
#include <numbers>
#include <numeric>

#include "helpers.hpp"
#include "nff/field_flow.hpp"
#include "oracles.hpp"

using namespace nff;
using ad::Graph;
using ad::Tensor;

namespace {

double gradient_error(FieldFlow& model, const SnapshotSet& data, Rng& rng) {
  std::vector<std::size_t> batch(data.size());
  std::iota(batch.begin(), batch.end(), 0);
  std::size_t rows = 0;
  for (const auto& s : data.snapshots) rows += s.size();
  const Tensor aux = draw_aux(model, rows, rng);
  const auto params = model.parameters("");
  const auto ptrs = testing_util::tensors(params);
  Graph g;
  const auto vg = ad::value_and_grad(g, nff_data_loss(g, model, data, batch, aux));
  std::vector<Tensor> grads;
  for (Tensor* p : ptrs) grads.push_back(vg.gradients.of(*p));
  const auto loss = [&] {
    Graph h;
    return nff_data_loss(h, model, data, batch, aux).item();
  };
  return oracle::check_directional(ptrs, loss, grads, 8, rng).worst;
}

}  // namespace

TEST_SUITE("field_flow") {
  TEST_CASE("data-loss gradients match finite differences") {
    Rng rng(31);
    for (std::size_t dim_x : {1u, 2u}) {
      FieldFlow model(testing_util::tiny_flow(dim_x), 3 + dim_x);
      testing_util::perturb(model.parameters(""), rng, 0.1);
      CHECK(gradient_error(model, testing_util::random_set(5, dim_x, 1, rng), rng) < 1e-5);
    }
    FieldFlowConfig vec = testing_util::tiny_flow(1);
    vec.dim_value = 2;
    FieldFlow model(vec, 9);
    testing_util::perturb(model.parameters(""), rng, 0.1);
    CHECK(gradient_error(model, testing_util::random_set(4, 1, 2, rng), rng) < 1e-5);
  }

  TEST_CASE("an identity flow scores the Gaussian reference plus the auxiliary density") {
    Rng rng(32);
    const FieldFlow model(testing_util::tiny_flow(1, 4), 5);
    const SnapshotSet data = testing_util::random_set(6, 1, 1, rng);
    std::vector<std::size_t> batch{0, 2, 3, 5};
    std::size_t rows = 0;
    for (std::size_t i : batch) rows += data.snapshots[i].size();
    const Tensor aux = draw_aux(model, rows, rng);
    Graph g;
    const double got = nff_data_loss(g, model, data, batch, aux).item();

    double want = 0.0;
    std::size_t r = 0;
    for (std::size_t i : batch) {
      const Snapshot& s = data.snapshots[i];
      Graph h;
      const auto c = model.reference().evaluate(h, h.constant(s.x));
      const oracle::Mat B = oracle::to_mat(c.factor.value());
      const oracle::Vec d = oracle::to_vec(c.scale.value()).array().square();
      want += oracle::gaussian_logpdf(oracle::to_vec(s.values), oracle::to_vec(c.mean.value()),
                                      B * B.transpose() + oracle::Mat(d.asDiagonal()));
      for (std::size_t p = 0; p < s.size(); ++p, ++r)
        want += -0.5 * aux[r] * aux[r] - 0.5 * std::log(2.0 * std::numbers::pi);
    }
    CHECK(got == doctest::Approx(-want / 4.0).epsilon(1e-12));
  }

  TEST_CASE("packing records snapshot offsets") {
    Rng rng(33);
    const SnapshotSet data = testing_util::random_set(5, 1, 1, rng);
    const std::vector<std::size_t> idx{4, 1};
    const PackedBatch p = pack(data, idx);
    REQUIRE(p.offsets.size() == 3);
    CHECK(p.offsets[1] == data.snapshots[4].size());
    CHECK(p.x.rows() == data.snapshots[4].size() + data.snapshots[1].size());
    CHECK(p.values[p.offsets[1]] == data.snapshots[1].values[0]);
    CHECK_THROWS_AS(pack(data, std::vector<std::size_t>{7}), ShapeError);
  }

  TEST_CASE("training lowers the loss and a resumed run matches an uninterrupted one") {
    Rng rng(34);
    SnapshotSet data;
    data.dim_x = 1;
    for (int s = 0; s < 40; ++s) {
      const double a = rng.normal();
      Snapshot snap{Tensor(3, 1), Tensor(3, 1)};
      for (int p = 0; p < 3; ++p) {
        snap.x[p] = rng.uniform(-1.0, 1.0);
        snap.values[p] = 1.0 + a * snap.x[p] + 0.1 * rng.normal();
      }
      data.snapshots.push_back(snap);
    }
    TrainConfig cfg;
    cfg.batch = 16;
    cfg.adam.lr = 3e-3;

    FieldFlow straight(testing_util::tiny_flow(), 2);
    TrainState s1{{}, Rng(5)};
    cfg.epochs = 30;
    train_field(straight, data, cfg, s1);
    CHECK(s1.history.back() < s1.history.front());

    FieldFlow split(testing_util::tiny_flow(), 2);
    TrainState s2{{}, Rng(5)};
    cfg.epochs = 12;
    train_field(split, data, cfg, s2);
    TrainState resumed = s2;
    resumed.rng.restore(s2.rng.save());
    cfg.epochs = 30;
    train_field(split, data, cfg, resumed);

    CHECK(resumed.history == s1.history);
    const auto a = straight.parameters(""), b = split.parameters("");
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].tensor->storage() == b[i].tensor->storage());
  }

  TEST_CASE("training refuses an oversized batch") {
    Rng rng(35);
    FieldFlow model(testing_util::tiny_flow(), 1);
    const SnapshotSet data = testing_util::random_set(3, 1, 1, rng);
    TrainConfig cfg;
    cfg.batch = 4;
    TrainState st;
    CHECK_THROWS_AS(train_field(model, data, cfg, st), ConfigError);
  }

  TEST_CASE("no observations reduces to unconditional sampling") {
    FieldFlow model(testing_util::tiny_flow(), 7);
    Rng noise(1);
    testing_util::perturb(model.parameters(""), noise, 0.1);
    const Tensor q = Tensor::column({-0.5, 0.0, 0.5});
    Rng a(3), b(3);
    const Tensor cond = predict_conditional(model, Tensor(0, 1), Tensor(0, 1), q, 20, a);
    const Tensor unc = generate_samples(model, q, 20, b);
    CHECK(cond.storage() == unc.storage());
  }

  TEST_CASE("conditional draws of a Gaussian field follow Gaussian conditioning") {
    FieldFlowConfig cfg = testing_util::tiny_flow(1, 3);
    cfg.dim_value = 1;
    cfg.blocks = 0;  // identity flow: k is the reference field itself
    FieldFlow model(cfg, 11);
    Rng noise(2);
    testing_util::perturb(model.parameters(""), noise, 0.3);
    const Tensor ox = Tensor::column({-0.4, 0.3}), ov = Tensor::column({0.5, -0.2});
    const Tensor q = Tensor::column({0.0, 0.8});

    Tensor A, B, C;
    {
      Graph g;
      const auto c = model.reference().evaluate(g, g.constant(ox));
      A = c.mean.value(), B = c.factor.value(), C = c.scale.value();
    }
    const auto post = oracle::condition_latent(oracle::to_vec(ov), oracle::to_vec(A), oracle::to_mat(B),
                                               oracle::to_vec(C).array().square());
    Graph g;
    const auto cq = model.reference().evaluate(g, g.constant(q));
    const oracle::Mat Bq = oracle::to_mat(cq.factor.value());
    const oracle::Vec mean = oracle::to_vec(cq.mean.value()) + Bq * post.mean;
    const oracle::Vec var = (Bq * post.cov * Bq.transpose()).diagonal().array() +
                            oracle::to_vec(cq.scale.value()).array().square();

    const std::size_t n = 20000;
    Rng rng(4);
    const Moments m = column_moments(predict_conditional(model, ox, ov, q, n, rng));
    for (std::size_t p = 0; p < 2; ++p) {
      const double se = std::sqrt(var[p] / static_cast<double>(n));
      CHECK(std::abs(m.mean[p] - mean[p]) < 4.0 * se);
      // Standard error of a sample standard deviation is about sd / sqrt(2n).
      CHECK(std::abs(m.std[p] - std::sqrt(var[p])) < 4.0 * std::sqrt(var[p] / (2.0 * n)));
    }
  }

  TEST_CASE("gaussian sampling reproduces the covariance") {
    const Tensor mean = Tensor::column({1.0, -1.0});
    const Tensor cov(2, 2, std::vector<double>{2.0, 0.6, 0.6, 0.5});
    Rng rng(5);
    const std::size_t n = 40000;
    const Tensor s = sample_gaussian(mean, cov, n, rng);
    const Moments m = column_moments(s);
    CHECK(std::abs(m.mean[0] - 1.0) < 4.0 * std::sqrt(2.0 / n));
    CHECK(std::abs(m.std[1] - std::sqrt(0.5)) < 4.0 * std::sqrt(0.5 / (2.0 * n)));
    double c = 0.0;
    for (std::size_t i = 0; i < n; ++i) c += (s(i, 0) - m.mean[0]) * (s(i, 1) - m.mean[1]);
    c /= static_cast<double>(n - 1);
    // var of the product of correlated normals: s00 s11 + s01^2.
    CHECK(std::abs(c - 0.6) < 4.0 * std::sqrt((2.0 * 0.5 + 0.36) / n));
  }

  TEST_CASE("column moments use the unbiased variance") {
    const Tensor s(3, 1, std::vector<double>{1.0, 2.0, 6.0});
    const Moments m = column_moments(s);
    CHECK(m.mean[0] == doctest::Approx(3.0));
    CHECK(m.std[0] == doctest::Approx(std::sqrt(7.0)));
  }
}
