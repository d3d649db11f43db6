#include "nff/dense_nets.hpp"

#include <cmath>

#include "nff/rng.hpp"

namespace nff {

Mlp::Mlp(std::vector<std::size_t> widths) : widths_(std::move(widths)) {
  if (widths_.size() < 2) throw ShapeError("mlp needs at least input and output widths");
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    if (widths_[l] == 0 || widths_[l + 1] == 0) throw ShapeError("mlp layer width must be positive");
    weights_.emplace_back(widths_[l], widths_[l + 1]);
    biases_.emplace_back(1, widths_[l + 1]);
  }
}

ad::Var Mlp::forward(ad::Graph& g, ad::Var x) const {
  if (x.cols() != in_dim()) {
    throw ShapeError("mlp input has " + std::to_string(x.cols()) + " columns, expected " +
                     std::to_string(in_dim()));
  }
  ad::Var h = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    h = ad::matmul(h, g.parameter(weights_[l])) + g.parameter(biases_[l]);
    if (l + 1 < weights_.size()) h = ad::relu(h);
  }
  return h;
}

void Mlp::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back({prefix + ".w" + std::to_string(l), &weights_[l]});
    out.push_back({prefix + ".b" + std::to_string(l), &biases_[l]});
  }
}

Mlp init_mlp(const std::vector<std::size_t>& widths, std::uint64_t seed, InitMode mode) {
  if (widths.empty()) throw ShapeError("init_mlp: empty widths");
  Mlp net(widths);
  Rng rng(seed);
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const double sd = std::sqrt(2.0 / static_cast<double>(widths[l]));
    for (double& w : net.weight(l).data()) w = sd * rng.normal();
  }
  if (mode == InitMode::ZeroOutput) {
    const std::size_t last = net.layer_count() - 1;
    net.weight(last).fill(0.0);
    net.bias(last).fill(0.0);
  }
  return net;
}

ad::Tensor mlp_forward(const Mlp& net, const ad::Tensor& x) {
  ad::Graph g;
  return net.forward(g, g.constant(x)).value();
}

std::vector<std::size_t> layer_widths(std::size_t in, std::size_t hidden, std::size_t layers,
                                      std::size_t out) {
  if (layers == 0) throw ShapeError("network needs at least one layer");
  std::vector<std::size_t> w{in};
  for (std::size_t l = 0; l + 1 < layers; ++l) w.push_back(hidden);
  w.push_back(out);
  return w;
}

}  // namespace nff
