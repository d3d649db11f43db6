#pragma once

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nff/field_flow.hpp"

namespace nff {

/// The three fields of -div(k grad u) = f.
enum class Field : int { K = 0, F = 1, U = 2 };
inline constexpr std::array<Field, 3> kAllFields{Field::K, Field::F, Field::U};
const char* field_name(Field f);

/// Interval [lo, hi] (dim 1) or the box [lo, hi]^2 (dim 2).
struct Domain {
  std::size_t dim = 1;
  double lo = -1.0;
  double hi = 1.0;
  double side() const { return hi - lo; }
};

struct PhysicsConfig {
  double w_data = 1.0;
  double w_equ = 1.0;
  double w_bnd = 1.0;
  double radius = 0.4;  // side of the box test function
  std::size_t collocation = 128;
  std::size_t boundary = 64;
  double fd_step = 1e-3;
};

/// A field that is either learned by its own flow or known to be constant.
struct FieldSlot {
  std::optional<FieldFlow> flow;
  double constant = 0.0;
  bool learned() const { return flow.has_value(); }
};

/// Flows for k, f and u sharing one latent xi.
struct SdeModel {
  Domain domain;
  PhysicsConfig physics;
  std::array<FieldSlot, 3> fields;

  FieldSlot& slot(Field f) { return fields[static_cast<int>(f)]; }
  const FieldSlot& slot(Field f) const { return fields[static_cast<int>(f)]; }
  std::size_t latent() const;
  /// Throws if flows disagree on M, are not scalar, or do not match the domain.
  void validate() const;
  std::vector<NamedParam> parameters();
};

/// Snapshot data per field; every set has the same number of snapshots (a
/// snapshot may hold no points for a given field).
struct SdeDataset {
  std::array<SnapshotSet, 3> fields;
  std::size_t size() const;
  SnapshotSet& field(Field f) { return fields[static_cast<int>(f)]; }
  const SnapshotSet& field(Field f) const { return fields[static_cast<int>(f)]; }
};

/// Shared xi and per-field eps / zeta draws, one row per instance.
struct InstanceNoise {
  ad::Tensor xi;                   // n x M
  std::array<ad::Tensor, 3> eps;   // n x 1 each
  std::array<ad::Tensor, 3> zeta;  // n x 1 each
  std::size_t size() const { return xi.rows(); }
};
InstanceNoise draw_noise(const SdeModel& model, std::size_t n, Rng& rng);

/// Scalar field values at points X (P x dim_x); row r belongs to instance
/// instance[r] and must see that instance's frozen randomness.
class Surrogate {
 public:
  virtual ~Surrogate() = default;
  virtual ad::Var eval(ad::Graph& g, Field f, const ad::Tensor& x,
                       std::span<const std::size_t> instance) const = 0;
};

/// The learned model with frozen per-instance noise.
class NffSurrogate final : public Surrogate {
 public:
  NffSurrogate(const SdeModel& model, const InstanceNoise& noise) : model_(model), noise_(noise) {}
  ad::Var eval(ad::Graph& g, Field f, const ad::Tensor& x,
               std::span<const std::size_t> instance) const override;

 private:
  const SdeModel& model_;
  const InstanceNoise& noise_;
};

/// Plain functions of (x, instance); carries no parameters.
class FunctionSurrogate final : public Surrogate {
 public:
  using Fn = std::function<double(std::span<const double> x, std::size_t instance)>;
  FunctionSurrogate(Fn k, Fn f, Fn u) : fns_{std::move(k), std::move(f), std::move(u)} {}
  ad::Var eval(ad::Graph& g, Field f, const ad::Tensor& x,
               std::span<const std::size_t> instance) const override;

 private:
  std::array<Fn, 3> fns_;
};

/// Central difference (step h, stencil x +- h/2) along `axis`; a
/// second-order one-sided stencil where that would leave the domain.
/// Returns P x 1.
ad::Var spatial_grad(ad::Graph& g, const Surrogate& s, Field f, const ad::Tensor& x,
                     std::span<const std::size_t> instance, std::size_t axis, double h,
                     const Domain& domain);

/// Random test-function placements for n instances.
struct Collocation {
  ad::Tensor center;  // n x dim, box centres
  ad::Tensor point;   // n x dim, uniform in the box
  ad::Tensor twin;    // n x dim, independent replica of `point`
  std::size_t size() const { return center.rows(); }
};
Collocation draw_collocation(const Domain& domain, std::size_t n, double radius, Rng& rng);

/// Unbiased estimate (1/n) sum e_i e_i' of the squared weak residual with box
/// test functions of side `radius`. Dispatches on domain.dim.
ad::Var equation_loss(ad::Graph& g, const Surrogate& s, const Collocation& c, double radius,
                      double h, const Domain& domain);
ad::Var equation_loss_1d(ad::Graph& g, const Surrogate& s, const Collocation& c, double radius,
                         double h, const Domain& domain);
ad::Var equation_loss_2d(ad::Graph& g, const Surrogate& s, const Collocation& c, double radius,
                         double h, const Domain& domain);

/// Uniform points on the boundary of the domain, n x dim.
ad::Tensor draw_boundary(const Domain& domain, std::size_t n, Rng& rng);
/// Mean of u^2 over the boundary points, instance i for point i.
ad::Var boundary_loss(ad::Graph& g, const Surrogate& s, const ad::Tensor& points);

/// Auxiliary channel draws per field for a batch (empty for constant fields).
std::array<ad::Tensor, 3> draw_joint_aux(const SdeModel& model, const SdeDataset& data,
                                         std::span<const std::size_t> batch, Rng& rng);

/// Negative mean joint log-likelihood over the batch with shared xi.
ad::Var joint_data_loss(ad::Graph& g, const SdeModel& model, const SdeDataset& data,
                        std::span<const std::size_t> batch, const std::array<ad::Tensor, 3>& aux);

struct LossParts {
  ad::Var total;
  ad::Var data;
  ad::Var equ;
  ad::Var bnd;
};

/// w_data L_data + w_equ L_equ + w_bnd L_bnd with fresh randomness from
/// `rng`. Randomness is drawn in the same order whatever the weights; zero
/// weighted components are not evaluated and reported as 0.
LossParts total_loss(ad::Graph& g, const SdeModel& model, const SdeDataset& data,
                     std::span<const std::size_t> batch, Rng& rng);

/// Minibatch Adam on total_loss until state.epoch == cfg.epochs.
void train_sde(SdeModel& model, const SdeDataset& data, const TrainConfig& cfg, TrainState& state,
               const EpochCallback& on_epoch = {});

/// Samples of one field of the model on a grid (n_draws x grid rows), all
/// fields sharing xi per draw.
std::array<ad::Tensor, 3> generate_sde_samples(const SdeModel& model, const ad::Tensor& grid,
                                               std::size_t n_draws, Rng& rng);

}  // namespace nff
