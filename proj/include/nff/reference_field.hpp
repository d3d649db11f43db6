#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nff/autodiff.hpp"
#include "nff/dense_nets.hpp"

namespace nff {

struct ReferenceConfig {
  std::size_t dim_x = 1;      // spatial dimension of x
  std::size_t dim_value = 1;  // D, value dimension of the field
  std::size_t latent = 30;    // M, number of KL modes
  std::size_t hidden = 128;
  std::size_t layers = 4;
  double c_floor = 1e-4;
};

/// Gaussian reference field z(x) = A(x) + B(x) xi + diag(C(x)) eps with
/// xi ~ N(0, I_M) shared across locations and eps iid per location.
/// C(x) = softplus(c_raw(x)) + c_floor, so C is strictly positive.
class ReferenceField {
 public:
  ReferenceField() = default;
  ReferenceField(const ReferenceConfig& cfg, std::uint64_t seed);

  std::size_t dim_x() const { return cfg_.dim_x; }
  std::size_t dim_value() const { return cfg_.dim_value; }
  std::size_t latent() const { return cfg_.latent; }
  double c_floor() const { return cfg_.c_floor; }
  const ReferenceConfig& config() const { return cfg_; }

  Mlp& mean_net() { return a_; }
  Mlp& factor_net() { return b_; }
  Mlp& scale_net() { return c_; }
  const Mlp& mean_net() const { return a_; }
  const Mlp& factor_net() const { return b_; }
  const Mlp& scale_net() const { return c_; }

  /// Per-location coefficients for a batch of P locations.
  struct Coefficients {
    ad::Var mean;    // P x D
    ad::Var factor;  // P x (D*M), row p holds B(x_p) in row-major order
    ad::Var scale;   // P x D, strictly positive
  };
  Coefficients evaluate(ad::Graph& g, ad::Var x) const;

  void collect(const std::string& prefix, std::vector<NamedParam>& out);

 private:
  ReferenceConfig cfg_;
  Mlp a_, b_, c_;
};

/// A(x) + B(x) xi + C(x) * eps at a single location.
ad::Tensor reference_sample(const ReferenceField& field, std::span<const double> x,
                            std::span<const double> xi, std::span<const double> eps);

/// Stacked Gaussian statistics of z at N locations:
/// z ~ N(mean, factor factor^T + diag(scale)^2).
struct SnapshotStats {
  ad::Var mean;    // (N*D) x 1
  ad::Var factor;  // (N*D) x M
  ad::Var scale;   // (N*D) x 1
};

/// Stacks coefficient rows [begin, begin+count) into snapshot statistics.
SnapshotStats stack_stats(const ReferenceField::Coefficients& c, std::size_t begin,
                          std::size_t count, std::size_t latent);

/// Concatenates the statistics of several fields sharing the same latent xi.
SnapshotStats joint_snapshot_stats(std::span<const SnapshotStats> parts);

/// Condition-number ceiling of the capacitance matrix I + B^T D^-1 B.
inline constexpr double kCapacitanceConditionLimit = 1e12;

/// log N(z | mean, factor factor^T + diag(scale)^2) with the Woodbury identity
/// and the matrix determinant lemma: O(N M^2 + M^3).
ad::Var lowrank_logpdf(const SnapshotStats& stats, ad::Var z);

struct PosteriorXi {
  ad::Tensor mean;  // M x 1
  ad::Tensor cov;   // M x M
};

/// Posterior of xi given reference values z (n x D) observed at x (n x dim_x).
PosteriorXi posterior_xi(const ReferenceField& field, const ad::Tensor& x, const ad::Tensor& z);

/// Same, from already-evaluated per-location coefficients (plain values).
PosteriorXi posterior_xi(const ad::Tensor& mean, const ad::Tensor& factor, const ad::Tensor& scale,
                         const ad::Tensor& z, std::size_t latent);

}  // namespace nff
