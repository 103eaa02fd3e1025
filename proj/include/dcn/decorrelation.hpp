#pragma once

#include <Eigen/Dense>

#include "dcn/types.hpp"

namespace dcn {

// How the activity-restoring gain is computed. PerUnit rescales every row of
// M by sqrt(mean x_j^2 / mean xhat_j^2); Scalar applies one common factor
// ||x.^2||_F / ||xhat.^2||_F to the whole matrix.
enum class GainMode { PerUnit, Scalar };

// Per-layer decorrelation transform xhat = M (x - mu) together with the
// learning rates of its local update rule.
struct DecorrelationState {
  Matrix M;               // square decorrelating matrix, starts as identity
  Vector mu;              // running mean estimate, starts at zero
  double eta_M = 0.0;     // decorrelation learning rate (>= 0)
  double mu_rate = 0.1;   // fixed mean-tracking rate in (0, 1]
  double eps_gain = 1e-8; // guards the gain denominator for dead units
  GainMode gain_mode = GainMode::PerUnit;

  static DecorrelationState identity(Index n, double eta_M);
  Index dim() const { return M.rows(); }
};

// Batch-averaged second-moment matrix of decorrelated activity and the
// correlation loss derived from it.
struct CorrelationReport {
  Matrix C;             // (1/B) sum_b xhat_b xhat_b^T, symmetric
  double off_diag_loss; // mean of squared off-diagonal entries of C
  double diag_mean;     // mean of diagonal entries of C
};

// Applies xhat = M (x - mu) column-wise. Input is not modified.
Matrix decorrelate(const DecorrelationState& state,
                   const Eigen::Ref<const Matrix>& X);

CorrelationReport correlation_report(const Eigen::Ref<const Matrix>& X_hat);

// Scale-free variant of off_diag_loss: mean over i != j of the squared
// correlation coefficient C_ij / sqrt(C_ii C_jj). Invariant under row
// rescalings of X_hat so runs started at different M scales are comparable.
double normalized_off_diag_loss(const Eigen::Ref<const Matrix>& C);

// Per-unit gain g_j = sqrt(mean X_j^2 / max(mean X_hat_j^2, eps_gain)); a
// unit whose input power is itself below eps_gain gets g_j = 1. X is the
// demeaned input the gain should restore, X_hat the decorrelated output.
Vector compute_gain(const Eigen::Ref<const Matrix>& X,
                    const Eigen::Ref<const Matrix>& X_hat, double eps_gain);

// Scalar variant ||X.^2||_F / ||X_hat.^2||_F with the same dead-unit guard.
double compute_gain_scalar(const Eigen::Ref<const Matrix>& X,
                           const Eigen::Ref<const Matrix>& X_hat,
                           double eps_gain);

// One step of the local decorrelation rule on a minibatch:
//   X_hat = M (X - mu),  C = <X_hat X_hat^T>,  g from compute_gain,
//   M <- diag(g) (M - eta_M C M),  then  mu <- mu + mu_rate (<X> - mu).
// The M update uses the pre-update mu. Throws if the update would produce
// non-finite entries (eta_M too large for the data scale).
DecorrelationState update_decorrelation(DecorrelationState state,
                                        const Eigen::Ref<const Matrix>& X);

// Same update with the decorrelated batch already at hand (callers that just
// ran a forward pass); X_hat must equal decorrelate(state, X).
DecorrelationState update_decorrelation(DecorrelationState state,
                                        const Eigen::Ref<const Matrix>& X,
                                        const Eigen::Ref<const Matrix>& X_hat);

// Rank-1 inverse maintenance for the single-sample update
// M <- g (I - eta_M xhat xhat^T) M: returns g^-1 (M^-1 + eta_M (M^-1 xhat) xhat^T),
// an O(eta_M^2)-accurate approximation of the updated inverse.
Matrix sherman_morrison_inverse_update(const Eigen::Ref<const Matrix>& M_inv,
                                       const Eigen::Ref<const Vector>& x_hat,
                                       double eta_M, double g);

// Computes xbar = M x through the relaxation dxbar/dt = -xbar + x - R xbar
// with lateral weights R = M^-1 - I, forward-Euler with the given step.
// Converges when the spectrum of M^-1 lies in the right half-plane; errors
// out with the final residual otherwise. Requires cond(M) < 1e12.
Vector recurrent_decorrelate(const Eigen::Ref<const Matrix>& M,
                             const Eigen::Ref<const Vector>& x, double step,
                             double tol, int max_iters);

}  // namespace dcn
