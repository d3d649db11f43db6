#pragma once

#include <string>
#include <vector>

#include "nff/coupling_flow.hpp"
#include "nff/dense_nets.hpp"
#include "nff/field_flow.hpp"
#include "nff/pde_loss.hpp"
#include "nff/rng.hpp"
#include "oracles.hpp"

namespace testing_util {

/// Adds N(0, scale^2) noise to every parameter, so zero-initialised nets
/// become non-trivial.
inline void perturb(const std::vector<nff::NamedParam>& params, nff::Rng& rng, double scale) {
  for (const auto& p : params)
    for (double& v : p.tensor->data()) v += scale * rng.normal();
}

inline std::vector<nff::ad::Tensor*> tensors(const std::vector<nff::NamedParam>& params) {
  std::vector<nff::ad::Tensor*> out;
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

/// A small scalar field flow for fast checks.
inline nff::FieldFlowConfig tiny_flow(std::size_t dim_x = 1, std::size_t latent = 3) {
  nff::FieldFlowConfig c;
  c.dim_x = dim_x;
  c.latent = latent;
  c.ref_hidden = 6;
  c.ref_layers = 3;
  c.blocks = 2;
  c.flow_hidden = 5;
  c.flow_layers = 3;
  return c;
}

// Hidden layers keep their He initialisation; the zero output layers get
// N(0, noise^2) entries. Perturbing every layer heavily produces stacks that
// map O(1) inputs to |k| ~ 1e6, where no double-precision inverse is 1e-9 exact.
inline nff::CouplingStack random_stack(std::size_t dim, std::size_t cond, std::size_t blocks, std::uint64_t seed,
                                       double noise = 0.05) {
  nff::CouplingConfig cfg;
  cfg.dim = dim;
  cfg.cond_dim = cond;
  cfg.blocks = blocks;
  cfg.hidden = 8;
  nff::CouplingStack s(cfg, seed);
  std::vector<nff::NamedParam> params;
  s.collect("f", params);
  nff::Rng rng(seed + 100);
  const std::string last = std::to_string(cfg.layers - 1);
  for (const auto& p : params)
    if (p.name.ends_with("w" + last) || p.name.ends_with("b" + last))
      for (double& v : p.tensor->data()) v += noise * rng.normal();
  return s;
}

inline nff::SnapshotSet random_set(std::size_t n, std::size_t dim_x, std::size_t dim_value, nff::Rng& rng) {
  nff::SnapshotSet set;
  set.dim_x = dim_x;
  set.dim_value = dim_value;
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t pts = 1 + rng.index(5);
    set.snapshots.push_back({oracle::random_tensor(pts, dim_x, rng), oracle::random_tensor(pts, dim_value, rng)});
  }
  return set;
}

/// Tiny physics-informed model; f is the constant 1 unless learned.
inline nff::SdeModel tiny_sde(std::size_t dim, bool learn_f, std::uint64_t seed) {
  using nff::Field;
  nff::SdeModel m;
  m.domain = dim == 1 ? nff::Domain{1, -1.0, 1.0} : nff::Domain{2, 0.0, 1.0};
  m.physics.collocation = 4;
  m.physics.boundary = 3;
  m.physics.radius = 0.2 * m.domain.side();
  nff::Rng rng(seed);
  for (Field f : nff::kAllFields) {
    if (f == Field::F && !learn_f) {
      m.slot(f).constant = 1.0;
      continue;
    }
    m.slot(f).flow.emplace(tiny_flow(dim, 3), seed * 10 + static_cast<int>(f));
    perturb(m.slot(f).flow->parameters(""), rng, 0.1);
  }
  return m;
}

inline nff::SdeDataset random_sde_data(const nff::SdeModel& m, std::size_t n, nff::Rng& rng) {
  nff::SdeDataset data;
  for (nff::Field f : nff::kAllFields) {
    if (!m.slot(f).learned()) continue;
    nff::SnapshotSet& set = data.field(f);
    set.dim_x = m.domain.dim;
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t pts = rng.index(4);  // some snapshots hold no points for a field
      nff::Snapshot snap{nff::ad::Tensor(pts, m.domain.dim), oracle::random_tensor(pts, 1, rng, 0.5)};
      for (double& v : snap.x.data()) v = rng.uniform(m.domain.lo, m.domain.hi);
      for (double& v : snap.values.data()) v += 1.0;
      set.snapshots.push_back(snap);
    }
  }
  return data;
}

}  // namespace testing_util
