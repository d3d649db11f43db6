#include "nff/coupling_flow.hpp"

namespace nff {

CouplingBlock::CouplingBlock(std::size_t dim, std::size_t cond_dim, bool odd, std::size_t hidden,
                             std::size_t layers, double s_clamp, std::uint64_t seed)
    : dim_(dim), cond_dim_(cond_dim), odd_(odd), s_clamp_(s_clamp) {
  if (dim < 2) throw ShapeError("coupling block needs dimension >= 2");
  const std::size_t in = passthrough_size() + cond_dim;
  const auto widths = layer_widths(in, hidden, layers, transformed_size());
  s_ = init_mlp(widths, seed * 2 + 1, InitMode::ZeroOutput);
  t_ = init_mlp(widths, seed * 2 + 2, InitMode::ZeroOutput);
}

std::pair<ad::Var, ad::Var> CouplingBlock::scale_shift(ad::Var pass, ad::Var x) const {
  const ad::Var in = cond_dim_ > 0 ? ad::concat_cols({pass, x}) : pass;
  ad::Var s = s_.forward(in.graph(), in);
  if (s_clamp_ > 0.0) s = s_clamp_ * ad::tanh(s * (1.0 / s_clamp_));
  return {s, t_.forward(in.graph(), in)};
}

ad::Var CouplingBlock::assemble(ad::Var pass, ad::Var moved) const {
  return odd_ ? ad::concat_cols({pass, moved}) : ad::concat_cols({moved, pass});
}

FlowResult CouplingBlock::forward(ad::Graph& g, ad::Var z, ad::Var x) const {
  (void)g;
  if (z.cols() != dim_ || x.cols() != cond_dim_ || z.rows() != x.rows()) {
    throw ShapeError("coupling block: input shapes do not match");
  }
  const ad::Var pass = ad::slice_cols(z, passthrough_begin(), passthrough_size());
  const ad::Var moved = ad::slice_cols(z, transformed_begin(), transformed_size());
  const auto [s, t] = scale_shift(pass, x);
  return {assemble(pass, moved * ad::exp(s) + t), ad::row_sum(s)};
}

FlowResult CouplingBlock::inverse(ad::Graph& g, ad::Var k, ad::Var x) const {
  (void)g;
  if (k.cols() != dim_ || x.cols() != cond_dim_ || k.rows() != x.rows()) {
    throw ShapeError("coupling block: input shapes do not match");
  }
  const ad::Var pass = ad::slice_cols(k, passthrough_begin(), passthrough_size());
  const ad::Var moved = ad::slice_cols(k, transformed_begin(), transformed_size());
  const auto [s, t] = scale_shift(pass, x);
  return {assemble(pass, (moved - t) * ad::exp(-s)), -ad::row_sum(s)};
}

void CouplingBlock::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  s_.collect(prefix + ".s", out);
  t_.collect(prefix + ".t", out);
}

CouplingStack::CouplingStack(const CouplingConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  for (std::size_t i = 0; i < cfg.blocks; ++i) {
    blocks_.emplace_back(cfg.dim, cfg.cond_dim, i % 2 == 0, cfg.hidden, cfg.layers, cfg.s_clamp,
                         seed * 64 + i);
  }
}

FlowResult CouplingStack::forward(ad::Graph& g, ad::Var z, ad::Var x) const {
  if (z.cols() != cfg_.dim || x.cols() != cfg_.cond_dim) throw ShapeError("flow_forward: dimension mismatch");
  ad::Var logdet = g.constant(ad::Tensor(z.rows(), 1));
  for (const auto& b : blocks_) {
    const FlowResult r = b.forward(g, z, x);
    z = r.value;
    logdet = logdet + r.logdet;
  }
  return {z, logdet};
}

FlowResult CouplingStack::inverse(ad::Graph& g, ad::Var k, ad::Var x) const {
  if (k.cols() != cfg_.dim || x.cols() != cfg_.cond_dim) throw ShapeError("flow_inverse: dimension mismatch");
  ad::Var logdet = g.constant(ad::Tensor(k.rows(), 1));
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
    const FlowResult r = it->inverse(g, k, x);
    k = r.value;
    logdet = logdet + r.logdet;
  }
  return {k, logdet};
}

void CouplingStack::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(prefix + ".block" + std::to_string(i), out);
}

FlowValues flow_forward(const CouplingStack& stack, const ad::Tensor& z, const ad::Tensor& x) {
  ad::Graph g;
  const FlowResult r = stack.forward(g, g.constant(z), g.constant(x));
  return {r.value.value(), r.logdet.value()};
}

FlowValues flow_inverse(const CouplingStack& stack, const ad::Tensor& k, const ad::Tensor& x) {
  ad::Graph g;
  const FlowResult r = stack.inverse(g, g.constant(k), g.constant(x));
  return {r.value.value(), r.logdet.value()};
}

namespace {

AugmentedPoint augmented(const CouplingStack& stack, double a, double b, std::span<const double> x,
                         bool forward) {
  if (stack.dim() != 2) throw ShapeError("augmented flow requires a 2-dimensional stack");
  const ad::Tensor in(1, 2, {a, b});
  const ad::Tensor xt(1, x.size(), std::vector<double>(x.begin(), x.end()));
  const FlowValues r = forward ? flow_forward(stack, in, xt) : flow_inverse(stack, in, xt);
  return {r.value[0], r.value[1], r.logdet[0]};
}

}  // namespace

AugmentedPoint augmented_forward(const CouplingStack& stack, double z, double zeta,
                                 std::span<const double> x) {
  return augmented(stack, z, zeta, x, true);
}

AugmentedPoint augmented_inverse(const CouplingStack& stack, double k, double v,
                                 std::span<const double> x) {
  return augmented(stack, k, v, x, false);
}

}  // namespace nff
