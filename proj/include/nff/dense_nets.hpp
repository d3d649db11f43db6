#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nff/autodiff.hpp"

namespace nff {

/// A trainable tensor together with its checkpoint name.
struct NamedParam {
  std::string name;
  ad::Tensor* tensor = nullptr;
};

enum class InitMode {
  Standard,    // He-scaled normal weights, zero biases
  ZeroOutput,  // as Standard, but the final layer starts at exactly zero
};

/// Fully connected ReLU network; identity on the output layer.
/// widths = {in, hidden..., out}; layer l maps widths[l] -> widths[l+1].
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<std::size_t> widths);

  std::size_t in_dim() const { return widths_.front(); }
  std::size_t out_dim() const { return widths_.back(); }
  std::size_t layer_count() const { return weights_.size(); }
  const std::vector<std::size_t>& widths() const { return widths_; }

  ad::Tensor& weight(std::size_t l) { return weights_[l]; }
  const ad::Tensor& weight(std::size_t l) const { return weights_[l]; }
  ad::Tensor& bias(std::size_t l) { return biases_[l]; }
  const ad::Tensor& bias(std::size_t l) const { return biases_[l]; }

  /// x: batch x in_dim -> batch x out_dim.
  ad::Var forward(ad::Graph& g, ad::Var x) const;

  void collect(const std::string& prefix, std::vector<NamedParam>& out);

 private:
  std::vector<std::size_t> widths_;
  std::vector<ad::Tensor> weights_;  // in x out
  std::vector<ad::Tensor> biases_;   // 1 x out
};

Mlp init_mlp(const std::vector<std::size_t>& widths, std::uint64_t seed,
             InitMode mode = InitMode::Standard);

/// Plain evaluation without keeping a tape around.
ad::Tensor mlp_forward(const Mlp& net, const ad::Tensor& x);

/// Layer widths {in, hidden x (layers-1), out} for a net with `layers` affine maps.
std::vector<std::size_t> layer_widths(std::size_t in, std::size_t hidden, std::size_t layers,
                                      std::size_t out);

}  // namespace nff
