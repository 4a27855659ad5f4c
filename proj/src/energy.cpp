// SPDX-License-Identifier: Apache-2.0
#include "sorbet/energy.hpp"

#include <stdexcept>

namespace sorbet {

std::string kernel_kind_name(KernelKind k) {
  switch (k) {
    case KernelKind::softmax:
      return "softmax";
    case KernelKind::ptsoftmax:
      return "ptsoftmax";
    case KernelKind::layernorm:
      return "layernorm";
    case KernelKind::bspn:
      return "bspn";
  }
  throw std::invalid_argument("unknown kernel kind");
}

OpCounter table_cost(KernelKind kind, std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("row length must be >= 1");
  OpCounter c;
  switch (kind) {
    case KernelKind::softmax:
      c.add = n - 1;
      c.div = n;
      c.exp = n;
      break;
    case KernelKind::ptsoftmax:
      c.add = n - 1;
      c.sub = n;
      c.shift = n;
      c.lut = 1;
      break;
    case KernelKind::layernorm:
      c.add = 3 * n - 2;
      c.sub = 2 * n;
      c.mul = 2 * n;
      c.div = n + 2;
      c.square = n;
      c.sqrt = 1;
      break;
    case KernelKind::bspn:
      c.add = 2 * n - 1;
      c.shift = 2 * n;
      c.lut = 1;
      break;
  }
  return c;
}

double EnergyModel::cost(const OpCounter& c) const {
  return static_cast<double>(c.add) * add + static_cast<double>(c.sub) * sub +
         static_cast<double>(c.mul) * mul + static_cast<double>(c.div) * div +
         static_cast<double>(c.exp) * exp +
         static_cast<double>(c.square) * square +
         static_cast<double>(c.sqrt) * sqrt +
         static_cast<double>(c.shift) * shift +
         static_cast<double>(c.lut) * lut;
}

double kernel_energy(const EnergyModel& em, KernelKind kind, std::uint64_t n) {
  return em.cost(table_cost(kind, n));
}

double break_even_rate(std::size_t timesteps, double mul_add_ratio) {
  if (timesteps == 0) throw std::invalid_argument("timesteps must be >= 1");
  if (!(mul_add_ratio > 0.0))
    throw std::domain_error("energy ratio must be positive");
  return mul_add_ratio / static_cast<double>(timesteps);
}

double n_sorbet_ops(std::size_t timesteps, double spike_rate,
                    double n_bert_macs) {
  if (timesteps == 0) throw std::invalid_argument("timesteps must be >= 1");
  if (spike_rate < 0.0 || spike_rate > 1.0)
    throw std::domain_error("spike rate must be in [0, 1]");
  if (n_bert_macs < 0.0) throw std::domain_error("negative op count");
  return static_cast<double>(timesteps) * spike_rate * n_bert_macs;
}

EnergyDelta encoder_energy_delta(std::size_t layers, double e_softmax,
                                 double e_ptsoftmax, double e_layernorm,
                                 double e_bspn, double e_gelu, double e_tanh,
                                 double e_relu) {
  const double l = static_cast<double>(layers);
  EnergyDelta d;
  d.softmax_term = l * (e_softmax - e_ptsoftmax);
  d.norm_term = 2.0 * l * (e_layernorm - e_bspn);
  d.activation_term = l * (e_gelu + e_tanh - 2.0 * e_relu);
  d.total = d.softmax_term + d.norm_term + d.activation_term;
  return d;
}

}  // namespace sorbet
