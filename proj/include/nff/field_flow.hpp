#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "nff/adam.hpp"
#include "nff/autodiff.hpp"
#include "nff/coupling_flow.hpp"
#include "nff/reference_field.hpp"
#include "nff/rng.hpp"

namespace nff {

struct FieldFlowConfig {
  std::size_t dim_x = 1;
  std::size_t dim_value = 1;
  std::size_t latent = 30;
  std::size_t ref_hidden = 128;
  std::size_t ref_layers = 4;
  double c_floor = 1e-4;
  std::size_t blocks = 6;
  std::size_t flow_hidden = 128;
  std::size_t flow_layers = 3;
  double s_clamp = 7.0;
};

/// Reference field pushed through a conditional coupling stack. Scalar fields
/// (dim_value == 1) carry an auxiliary channel so the stack is 2-dimensional.
class FieldFlow {
 public:
  FieldFlow() = default;
  FieldFlow(const FieldFlowConfig& cfg, std::uint64_t seed);

  const FieldFlowConfig& config() const { return cfg_; }
  bool scalar_augmented() const { return cfg_.dim_value == 1; }
  std::size_t dim_x() const { return cfg_.dim_x; }
  std::size_t dim_value() const { return cfg_.dim_value; }
  std::size_t latent() const { return cfg_.latent; }

  ReferenceField& reference() { return ref_; }
  const ReferenceField& reference() const { return ref_; }
  CouplingStack& stack() { return stack_; }
  const CouplingStack& stack() const { return stack_; }

  struct Reduced {
    ad::Var z;       // P x D
    ad::Var zeta;    // P x 1 for scalar fields, invalid otherwise
    ad::Var logdet;  // P x 1, log|det dz/dk|
  };
  /// Maps field values (P x D) at x (P x dim_x) to the reference space. For
  /// scalar fields `aux` (P x 1) supplies the auxiliary channel v.
  Reduced to_reference(ad::Graph& g, ad::Var x, ad::Var values, ad::Var aux) const;

  /// Pushes reference values z (P x D) and, for scalar fields, zeta (P x 1)
  /// forward; returns the field values P x D.
  ad::Var from_reference(ad::Graph& g, ad::Var x, ad::Var z, ad::Var zeta) const;

  std::vector<NamedParam> parameters(const std::string& prefix);

 private:
  FieldFlowConfig cfg_;
  ReferenceField ref_;
  CouplingStack stack_;
};

/// Sensor measurements of one random event. Rows of x and values pair up.
struct Snapshot {
  ad::Tensor x;       // n x dim_x
  ad::Tensor values;  // n x dim_value
  std::size_t size() const { return x.rows(); }
};

struct SnapshotSet {
  std::size_t dim_x = 1;
  std::size_t dim_value = 1;
  std::vector<Snapshot> snapshots;
  std::size_t size() const { return snapshots.size(); }
  std::size_t total_points() const;
};

/// Concatenated rows of a subset of snapshots, plus the row offset of each.
struct PackedBatch {
  ad::Tensor x;
  ad::Tensor values;
  std::vector<std::size_t> offsets;  // size = snapshots + 1
};
PackedBatch pack(const SnapshotSet& data, std::span<const std::size_t> indices);

/// Mean negative log-likelihood over the batch. For scalar fields `aux`
/// holds one auxiliary draw per packed row (total_points x 1).
ad::Var nff_data_loss(ad::Graph& g, const FieldFlow& model, const SnapshotSet& data,
                      std::span<const std::size_t> batch, const ad::Tensor& aux);
/// Same, drawing the auxiliary channel from `rng`.
ad::Var nff_data_loss(ad::Graph& g, const FieldFlow& model, const SnapshotSet& data,
                      std::span<const std::size_t> batch, Rng& rng);
double nff_data_loss(const FieldFlow& model, const SnapshotSet& data, Rng& rng);

/// Per-row log-likelihood pieces shared with the multi-field loss.
struct ReducedBatch {
  FieldFlow::Reduced reduced;
  ReferenceField::Coefficients coeffs;
};
ReducedBatch reduce_batch(ad::Graph& g, const FieldFlow& model, const PackedBatch& packed,
                          const ad::Tensor& aux);

/// Sum over rows of the per-point terms: Jacobian log-dets plus, for scalar
/// fields, the standard normal log-density of zeta.
ad::Var pointwise_terms(const FieldFlow& model, const FieldFlow::Reduced& r);

/// Draws an auxiliary channel for `rows` points, or an empty tensor when the
/// field is not scalar.
ad::Tensor draw_aux(const FieldFlow& model, std::size_t rows, Rng& rng);

struct TrainConfig {
  std::size_t epochs = 400;
  std::size_t batch = 128;
  ad::AdamConfig adam{};
};

/// Everything needed to continue a run exactly where it stopped.
struct TrainState {
  ad::AdamState adam;
  Rng rng;
  std::size_t epoch = 0;
  std::vector<double> history;  // mean loss per completed epoch
};

using EpochCallback = std::function<void(std::size_t epoch, double loss)>;

/// Minibatch Adam on nff_data_loss until state.epoch == cfg.epochs. Throws
/// NumericalError on a non-finite loss; state.history then holds the epochs
/// completed so far.
void train_field(FieldFlow& model, const SnapshotSet& data, const TrainConfig& cfg,
                 TrainState& state, const EpochCallback& on_epoch = {});

/// Draws (n x size) with rows of the form mean + L e, L L^T = cov.
ad::Tensor sample_gaussian(const ad::Tensor& mean, const ad::Tensor& cov, std::size_t n, Rng& rng);

/// n_draws x (q * D) samples at q query locations, given per-draw latent xi
/// (n_draws x M).
ad::Tensor push_samples(const FieldFlow& model, const ad::Tensor& query, const ad::Tensor& xi,
                        Rng& rng);

/// Unconditional samples: n_draws x (grid * D).
ad::Tensor generate_samples(const FieldFlow& model, const ad::Tensor& grid, std::size_t n_draws,
                            Rng& rng);

/// Conditional samples given observed values (n x D) at observed locations.
ad::Tensor predict_conditional(const FieldFlow& model, const ad::Tensor& obs_x,
                               const ad::Tensor& obs_values, const ad::Tensor& query,
                               std::size_t n_draws, Rng& rng);

/// Column-wise mean and standard deviation (unbiased) of a draws x points array.
struct Moments {
  std::vector<double> mean;
  std::vector<double> std;
};
Moments column_moments(const ad::Tensor& samples);

}  // namespace nff
