#include "dcn/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace dcn {

AdamState AdamState::for_shape(Index rows, Index cols, double lr) {
  AdamState s;
  s.m = Matrix::Zero(rows, cols);
  s.v = Matrix::Zero(rows, cols);
  s.lr = lr;
  return s;
}

Matrix sgd_step(const Eigen::Ref<const Matrix>& W,
                const Eigen::Ref<const Matrix>& grad, double lr) {
  if (W.rows() != grad.rows() || W.cols() != grad.cols()) {
    throw std::invalid_argument("sgd_step: shape mismatch");
  }
  return W - lr * grad;
}

Matrix adam_step(AdamState& state, const Eigen::Ref<const Matrix>& W,
                 const Eigen::Ref<const Matrix>& grad) {
  if (W.rows() != grad.rows() || W.cols() != grad.cols() ||
      state.m.rows() != W.rows() || state.m.cols() != W.cols()) {
    throw std::invalid_argument("adam_step: shape mismatch");
  }
  state.t += 1;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad;
  state.v.array() =
      state.beta2 * state.v.array() + (1.0 - state.beta2) * grad.array().square();
  const double c1 = 1.0 - std::pow(state.beta1, double(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, double(state.t));
  return W.array() -
         state.lr * (state.m.array() / c1) /
             ((state.v.array() / c2).sqrt() + state.eps);
}

}  // namespace dcn
