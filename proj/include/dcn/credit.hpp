#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "dcn/network.hpp"

namespace dcn {

// Credit-assignment backend. FA carries one fixed feedback matrix per
// weighted layer (the shape of that layer's W transposed); NP carries the
// perturbation scale.
struct CreditMethod {
  enum class Kind { BP, FA, NP };
  Kind kind = Kind::BP;
  std::vector<Matrix> feedback;
  double sigma = 1e-3;
  std::uint64_t seed = 0;

  static CreditMethod bp();
  // Feedback drawn from the init_weights distribution, then frozen.
  static CreditMethod fa(const Network& net, std::uint64_t seed);
  static CreditMethod np(double sigma, std::uint64_t seed);
};

// Per weighted layer delta at the pre-activation, batch-stacked. Conv deltas
// live in column space (out_c x B*P) like ForwardTrace.h.
struct DeltaSet {
  std::vector<Matrix> delta;
};

DeltaSet bp_deltas(const Network& net, const ForwardTrace& trace,
                   const Eigen::Ref<const Matrix>& Y);

// bp_deltas with W^T replaced by the fixed feedback matrices; M^T is kept,
// it is local to the layer.
DeltaSet fa_deltas(const Network& net, const ForwardTrace& trace,
                   const Eigen::Ref<const Matrix>& Y,
                   const CreditMethod& method);

// Node perturbation: one perturbed forward pass against the clean trace.
// Per sample, delta_i = ((L_xi - L_0) / sigma^2) * xi_i with iid
// xi ~ Normal(0, sigma^2) on every pre-activation. The stream selects the
// noise draw deterministically (no global RNG).
DeltaSet np_update(const Network& net, const ForwardTrace& trace,
                   const Eigen::Ref<const Matrix>& Y,
                   const CreditMethod& method, std::uint64_t stream);

// Testing hook: supplies the noise for weighted layer k of the given shape.
using NoiseFn = std::function<Matrix(std::size_t k, Index rows, Index cols)>;
DeltaSet np_update(const Network& net, const ForwardTrace& trace,
                   const Eigen::Ref<const Matrix>& Y,
                   const CreditMethod& method, const NoiseFn& noise);

// Batch-mean weight gradients dW = (1/B) delta x_hat^T per weighted layer.
std::vector<Matrix> weight_gradients(const Network& net,
                                     const ForwardTrace& trace,
                                     const DeltaSet& deltas);

}  // namespace dcn
