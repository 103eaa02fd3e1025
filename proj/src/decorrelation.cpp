#include "dcn/decorrelation.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace dcn {

DecorrelationState DecorrelationState::identity(Index n, double eta_M) {
  DecorrelationState s;
  s.M = Matrix::Identity(n, n);
  s.mu = Vector::Zero(n);
  s.eta_M = eta_M;
  return s;
}

Matrix decorrelate(const DecorrelationState& state,
                   const Eigen::Ref<const Matrix>& X) {
  if (X.rows() != state.dim()) {
    std::ostringstream msg;
    msg << "decorrelate: expected " << state.dim() << " rows, got "
        << X.rows();
    throw std::invalid_argument(msg.str());
  }
  return state.M * (X.colwise() - state.mu);
}

CorrelationReport correlation_report(const Eigen::Ref<const Matrix>& X_hat) {
  if (X_hat.cols() == 0) {
    throw std::invalid_argument("correlation_report: empty batch");
  }
  const Index n = X_hat.rows();
  Matrix C = Matrix::Zero(n, n);
  C.selfadjointView<Eigen::Lower>().rankUpdate(X_hat,
                                               1.0 / double(X_hat.cols()));
  C = C.selfadjointView<Eigen::Lower>();

  CorrelationReport report;
  report.C = std::move(C);
  report.diag_mean = report.C.trace() / double(n);
  if (n > 1) {
    const double total = report.C.array().square().sum();
    const double diag = report.C.diagonal().array().square().sum();
    report.off_diag_loss = (total - diag) / double(n * n - n);
  } else {
    report.off_diag_loss = 0.0;
  }
  return report;
}

double normalized_off_diag_loss(const Eigen::Ref<const Matrix>& C) {
  const Index n = C.rows();
  if (C.cols() != n) {
    throw std::invalid_argument("normalized_off_diag_loss: C not square");
  }
  if (n <= 1) return 0.0;
  double sum = 0.0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const double den = std::max(C(i, i) * C(j, j), 1e-300);
      sum += C(i, j) * C(i, j) / den;
    }
  }
  return sum / double(n * n - n);
}

Vector compute_gain(const Eigen::Ref<const Matrix>& X,
                    const Eigen::Ref<const Matrix>& X_hat, double eps_gain) {
  if (X.rows() != X_hat.rows() || X.cols() != X_hat.cols()) {
    throw std::invalid_argument("compute_gain: shape mismatch");
  }
  const double B = double(X.cols());
  Vector num = X.array().square().rowwise().sum() / B;
  Vector den = X_hat.array().square().rowwise().sum() / B;
  Vector g(X.rows());
  for (Index j = 0; j < g.size(); ++j) {
    g(j) = num(j) < eps_gain
               ? 1.0
               : std::sqrt(num(j) / std::max(den(j), eps_gain));
  }
  return g;
}

double compute_gain_scalar(const Eigen::Ref<const Matrix>& X,
                           const Eigen::Ref<const Matrix>& X_hat,
                           double eps_gain) {
  if (X.rows() != X_hat.rows() || X.cols() != X_hat.cols()) {
    throw std::invalid_argument("compute_gain_scalar: shape mismatch");
  }
  const double num = X.array().square().matrix().norm();
  if (num < eps_gain) return 1.0;
  const double den = X_hat.array().square().matrix().norm();
  return num / std::max(den, eps_gain);
}

DecorrelationState update_decorrelation(DecorrelationState state,
                                        const Eigen::Ref<const Matrix>& X) {
  const Matrix X_hat = decorrelate(state, X);
  return update_decorrelation(std::move(state), X, X_hat);
}

DecorrelationState update_decorrelation(
    DecorrelationState state, const Eigen::Ref<const Matrix>& X,
    const Eigen::Ref<const Matrix>& X_hat) {
  const Index n = state.dim();
  const Index B = X.cols();
  if (X.rows() != n || X_hat.rows() != n || X_hat.cols() != B) {
    throw std::invalid_argument("update_decorrelation: shape mismatch");
  }
  if (B == 0) {
    throw std::invalid_argument("update_decorrelation: empty batch");
  }

  if (state.eta_M != 0.0) {
    // M <- M - eta_M <x^ x^T> M, factored as X^ (X^T M)/B when the batch is
    // smaller than the layer (avoids the n^3 product against explicit C).
    if (B < n) {
      state.M -= (state.eta_M / double(B)) * (X_hat * (X_hat.transpose() * state.M));
    } else {
      state.M -= state.eta_M * (correlation_report(X_hat).C * state.M);
    }
  }

  const Matrix Xc = X.colwise() - state.mu;
  if (state.gain_mode == GainMode::PerUnit) {
    const Vector g = compute_gain(Xc, X_hat, state.eps_gain);
    state.M = g.asDiagonal() * state.M;
  } else {
    state.M *= compute_gain_scalar(Xc, X_hat, state.eps_gain);
  }

  if (!state.M.allFinite()) {
    throw std::runtime_error(
        "update_decorrelation: M became non-finite (eta_M too large for the "
        "data scale)");
  }

  state.mu += state.mu_rate * (X.rowwise().mean() - state.mu);
  return state;
}

Matrix sherman_morrison_inverse_update(const Eigen::Ref<const Matrix>& M_inv,
                                       const Eigen::Ref<const Vector>& x_hat,
                                       double eta_M, double g) {
  return (M_inv + eta_M * (M_inv * x_hat) * x_hat.transpose()) / g;
}

Vector recurrent_decorrelate(const Eigen::Ref<const Matrix>& M,
                             const Eigen::Ref<const Vector>& x, double step,
                             double tol, int max_iters) {
  if (M.rows() != M.cols() || M.rows() != x.size()) {
    throw std::invalid_argument("recurrent_decorrelate: shape mismatch");
  }
  Eigen::JacobiSVD<Matrix> svd(M);
  const double smin = svd.singularValues().minCoeff();
  if (smin <= 0.0 || svd.singularValues().maxCoeff() / smin >= 1e12) {
    throw std::runtime_error("recurrent_decorrelate: M is singular or nearly so");
  }
  const Matrix M_inv = M.inverse();

  // Euler on dxbar/dt = -xbar + x - R xbar with R = M^-1 - I. The residual
  // r = x - M^-1 xbar satisfies M r = M x - xbar, so ||M r|| bounds the
  // distance to the fixed point exactly.
  Vector xbar = Vector::Zero(x.size());
  for (int it = 0; it < max_iters; ++it) {
    const Vector r = x - M_inv * xbar;
    if ((M * r).norm() <= tol) return xbar;
    xbar += step * r;
  }
  const double residual = (M * (x - M_inv * xbar)).norm();
  std::ostringstream msg;
  msg << "recurrent_decorrelate: no convergence after " << max_iters
      << " iterations (residual " << residual << ")";
  throw std::runtime_error(msg.str());
}

}  // namespace dcn
