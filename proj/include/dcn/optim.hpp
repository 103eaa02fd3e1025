#pragma once

#include "dcn/types.hpp"

namespace dcn {

// Adam with bias correction. One state per parameter matrix; decorrelation
// matrices never go through here, they have their own update rule.
struct AdamState {
  Matrix m;
  Matrix v;
  long t = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_shape(Index rows, Index cols, double lr);
};

Matrix sgd_step(const Eigen::Ref<const Matrix>& W,
                const Eigen::Ref<const Matrix>& grad, double lr);

// Returns the updated weights and advances the moment estimates in place.
Matrix adam_step(AdamState& state, const Eigen::Ref<const Matrix>& W,
                 const Eigen::Ref<const Matrix>& grad);

}  // namespace dcn
