#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "nff/autodiff.hpp"
#include "nff/field_flow.hpp"
#include "nff/rng.hpp"

namespace nff {

/// Squared-exponential kernel variance * exp(-gamma |x - x'|^2) plus a
/// constant mean.
struct Kernel {
  double variance = 1.0;
  double gamma = 1.0;
  double mean = 0.0;

  /// sigma^2 exp(-|x - x'|^2 / (2 l^2)).
  static Kernel squared_exponential(double sigma, double length, double mean = 0.0) {
    return {sigma * sigma, 1.0 / (2.0 * length * length), mean};
  }
  double operator()(std::span<const double> a, std::span<const double> b) const;
};

/// Gram matrix over the rows of `points` (P x dim).
ad::Tensor gram(const Kernel& k, const ad::Tensor& points);

inline constexpr double kGramJitter = 1e-10;

/// Returns L with L L^T = K (+ jitter), from a clamped eigendecomposition.
ad::RowMatrix gram_root(const ad::Tensor& gram);

/// n joint draws (n x P) of the Gaussian process at `points`.
ad::Tensor gp_sample(const Kernel& k, const ad::Tensor& points, std::size_t n, Rng& rng);

/// n draws on the tensor grid a x b (row index i * |b| + j <-> (a_i, b_j)),
/// using the separable structure of the kernel.
ad::Tensor gp_sample_tensor(const Kernel& k, std::span<const double> a, std::span<const double> b,
                            std::size_t n, Rng& rng);

/// How a latent Gaussian sample g becomes a field value.
enum class Transform {
  Identity,  // g
  Exp,       // exp(g)
  MixedExp,  // exp(amplitude * (g + s sin(pi x / 2))), s = +-1 per draw
};

struct FieldSpec {
  Kernel kernel;
  Transform transform = Transform::Identity;
  double amplitude = 1.0;
};

/// Applies the spec's transform to latent draws (n x P) at 1-D points.
/// `signs` (one per draw) selects the mixed-field branch.
void apply_transform(const FieldSpec& spec, const ad::Tensor& points, std::span<const double> signs,
                     ad::Tensor& samples);

ad::Tensor sample_field(const FieldSpec& spec, const ad::Tensor& points, std::size_t n, Rng& rng);

ad::Tensor nongaussian_sample(const Kernel& k, const ad::Tensor& points, std::size_t n, Rng& rng);
/// exp(amplitude (g + m)), g ~ GP(0, sigma^2 exp(-(x-x')^2 / (2 l^2))).
ad::Tensor mixed_sample(const ad::Tensor& points, std::size_t n, Rng& rng, double sigma = 1.0,
                        double length = 0.2, double amplitude = 0.3);
/// GP(1/2, (9/400) exp(-25 (x - x')^2)).
ad::Tensor forcing_sample(const ad::Tensor& points, std::size_t n, Rng& rng);
Kernel forcing_kernel();

/// n uniform nodes on [lo, hi] as an n x 1 tensor.
ad::Tensor linspace(double lo, double hi, std::size_t n);
/// Tensor grid, row i * nb + j <-> (a_i, b_j).
ad::Tensor tensor_grid(std::span<const double> a, std::span<const double> b);
std::vector<double> linspace_values(double lo, double hi, std::size_t n);

/// -(k u')' = f on a uniform grid with u = 0 at both ends; harmonic means of k
/// at half nodes, Thomas algorithm. Boundary entries of f are ignored.
std::vector<double> solve_elliptic_1d(std::span<const double> k, std::span<const double> f,
                                      std::span<const double> nodes);

/// -div(k grad u) = f on a uniform n x n grid over a square, u = 0 on the
/// boundary; 5-point flux form with harmonic face means, sparse LDL^T.
/// Arrays use row index i * n + j <-> (a_i, b_j).
std::vector<double> solve_elliptic_2d(std::span<const double> k, std::span<const double> f,
                                      std::size_t n, double spacing);

/// |true - est|_2 / |true|_2.
double relative_error(std::span<const double> truth, std::span<const double> est);

/// Eigenvalues of the sample covariance over columns, descending.
std::vector<double> spectra(const ad::Tensor& samples);
/// Eigenvalues of a symmetric matrix, descending.
std::vector<double> symmetric_eigenvalues(const ad::Tensor& m);

struct ModeSplit {
  std::vector<std::size_t> left;
  std::vector<std::size_t> right;
};
/// Assigns each sample (row) to the left mode when its trapezoidal integral
/// over [-1, 0] is at least the one over [0, 1].
ModeSplit mode_split(const ad::Tensor& samples, std::span<const double> nodes);
/// Rows of `samples` listed in `rows`.
ad::Tensor select_rows(const ad::Tensor& samples, std::span<const std::size_t> rows);

/// Per snapshot, a uniform random subset of n_active sensors paired with that
/// sample's values. samples: n x S, sensors: S x dim.
SnapshotSet make_snapshots(const ad::Tensor& samples, const ad::Tensor& sensors, std::size_t n_active,
                           Rng& rng);

/// Halton points in [lo, hi]^2 snapped to an n x n grid, distinct.
ad::Tensor halton_grid_sensors(std::size_t count, std::size_t n, double lo, double hi);

/// Closed-form pointwise moments (and covariance) of a field spec on 1-D
/// points; empty optional when the spec has no closed form.
struct FieldMoments {
  std::vector<double> mean;
  std::vector<double> std;
  ad::Tensor cov;
};
std::optional<FieldMoments> analytic_moments(const FieldSpec& spec, const ad::Tensor& points);

/// Mean of the mixed field restricted to one sign branch (+1 or -1).
std::vector<double> mixed_branch_mean(const FieldSpec& spec, const ad::Tensor& points, double sign);

/// Pointwise moments at `query` conditioned on exact observations of the
/// field. Mixed fields condition the sign as well (a two-component mixture).
FieldMoments conditional_moments(const FieldSpec& spec, const ad::Tensor& obs_x, const ad::Tensor& obs_values,
                                 const ad::Tensor& query);

/// Linear interpolation of grid values at x (nodes ascending, uniform or not).
double interpolate_1d(std::span<const double> nodes, std::span<const double> values, double x);

}  // namespace nff
