#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nff/autodiff.hpp"
#include "nff/dense_nets.hpp"

namespace nff {

struct CouplingConfig {
  std::size_t dim = 2;       // dimension of the transformed variable
  std::size_t cond_dim = 1;  // dimension of the conditioning location x
  std::size_t blocks = 6;
  std::size_t hidden = 128;
  std::size_t layers = 3;  // affine maps per s/t net, i.e. two hidden layers
  double s_clamp = 7.0;    // s is squashed to (-s_clamp, s_clamp); <= 0 disables
};

/// Result of pushing a batch through a flow: transformed rows plus the
/// per-row log|det J| (P x 1).
struct FlowResult {
  ad::Var value;
  ad::Var logdet;
};

/// Affine coupling conditioned on x. With m = ceil(dim/2), an odd block keeps
/// the first m coordinates and transforms the rest; an even block keeps the
/// last dim-m coordinates and transforms the first m.
class CouplingBlock {
 public:
  CouplingBlock() = default;
  CouplingBlock(std::size_t dim, std::size_t cond_dim, bool odd, std::size_t hidden,
                std::size_t layers, double s_clamp, std::uint64_t seed);

  bool odd() const { return odd_; }
  std::size_t dim() const { return dim_; }
  std::size_t split() const { return (dim_ + 1) / 2; }
  std::size_t passthrough_begin() const { return odd_ ? 0 : split(); }
  std::size_t passthrough_size() const { return odd_ ? split() : dim_ - split(); }
  std::size_t transformed_begin() const { return odd_ ? split() : 0; }
  std::size_t transformed_size() const { return dim_ - passthrough_size(); }

  Mlp& s_net() { return s_; }
  Mlp& t_net() { return t_; }
  const Mlp& s_net() const { return s_; }
  const Mlp& t_net() const { return t_; }

  /// z: P x dim, x: P x cond_dim.
  FlowResult forward(ad::Graph& g, ad::Var z, ad::Var x) const;
  FlowResult inverse(ad::Graph& g, ad::Var k, ad::Var x) const;

  void collect(const std::string& prefix, std::vector<NamedParam>& out);

 private:
  std::pair<ad::Var, ad::Var> scale_shift(ad::Var pass, ad::Var x) const;
  ad::Var assemble(ad::Var pass, ad::Var moved) const;

  std::size_t dim_ = 0;
  std::size_t cond_dim_ = 0;
  bool odd_ = true;
  double s_clamp_ = 7.0;
  Mlp s_, t_;
};

class CouplingStack {
 public:
  CouplingStack() = default;
  CouplingStack(const CouplingConfig& cfg, std::uint64_t seed);

  const CouplingConfig& config() const { return cfg_; }
  std::size_t dim() const { return cfg_.dim; }
  std::size_t cond_dim() const { return cfg_.cond_dim; }
  std::size_t size() const { return blocks_.size(); }
  CouplingBlock& block(std::size_t i) { return blocks_[i]; }
  const CouplingBlock& block(std::size_t i) const { return blocks_[i]; }

  FlowResult forward(ad::Graph& g, ad::Var z, ad::Var x) const;
  FlowResult inverse(ad::Graph& g, ad::Var k, ad::Var x) const;

  void collect(const std::string& prefix, std::vector<NamedParam>& out);

 private:
  CouplingConfig cfg_;
  std::vector<CouplingBlock> blocks_;
};

/// Plain-value results for single points or batches.
struct FlowValues {
  ad::Tensor value;   // P x dim
  ad::Tensor logdet;  // P x 1
};

FlowValues flow_forward(const CouplingStack& stack, const ad::Tensor& z, const ad::Tensor& x);
FlowValues flow_inverse(const CouplingStack& stack, const ad::Tensor& k, const ad::Tensor& x);

struct AugmentedPoint {
  double first = 0.0;   // k (forward output) or z (inverse output)
  double second = 0.0;  // v (forward output) or zeta (inverse output)
  double logdet = 0.0;
};

/// Scalar-field augmentation: a 2-dimensional flow over (z, zeta) -> (k, v).
AugmentedPoint augmented_forward(const CouplingStack& stack, double z, double zeta,
                                 std::span<const double> x);
AugmentedPoint augmented_inverse(const CouplingStack& stack, double k, double v,
                                 std::span<const double> x);

}  // namespace nff
