#pragma once

#include <vector>

#include "dcn/plotdata.hpp"
#include "dcn/types.hpp"

namespace dcn {

// Riemann metric built from per-sample loss gradients, G = <g g^T>.
// damping is added to the diagonal whenever the metric is inverted.
struct EmpiricalMetric {
  Matrix G;
  double damping = 0.0;

  static double default_damping(const Matrix& G);
};

EmpiricalMetric empirical_metric(const std::vector<Vector>& per_sample_grads);

// -lr * (G + damping*I)^-1 * grad
Vector ngd_update(const Vector& grad, const EmpiricalMetric& metric, double lr);

// Separable (j,i) block of the layer-wise metric:
// kron(<x_{j-1} x_{i-1}^T>, <delta_j delta_i^T>), matching vec(d x^T) = x (x) d
// under column-major flattening. Batches are column-per-sample.
Matrix layer_block_metric(const Matrix& X_prev_i, const Matrix& D_i,
                          const Matrix& D_j, const Matrix& X_prev_j);

// -lr * (<dd^T> + damping*I)^-1 * grad_W * (<xx^T> + damping*I)^-1
Matrix layerwise_ngd_update(const Matrix& X_prev, const Matrix& D,
                            const Matrix& grad_W, double damping,
                            double lr = 1.0);

// Quadratic regression landscape of the arrow demos:
// L(W) = <(Wx - y)^T A (Wx - y)> with y = W*x and <x x^T> = Sigma,
// so L(W) = tr(A (W - W*) Sigma (W - W*)^T).
struct QuadraticLandscape {
  Matrix A;
  Matrix Sigma;
  Matrix W_star;
  double grid_lo = -3.0;
  double grid_hi = 3.0;
  int grid_points = 41;
};

double landscape_loss(const QuadraticLandscape& ls, const Matrix& W);
Matrix landscape_gradient(const QuadraticLandscape& ls, const Matrix& W);

// Exact curvature of the quadratic under column-major vec: 2 * kron(Sigma, A).
Matrix landscape_hessian(const QuadraticLandscape& ls);

// Contour grid over the two parameters of W plus unit-length GD, NGD and
// decorrelated-GD arrows at W0. Requires W_star.size() == 2.
PlotData landscape_demo(const QuadraticLandscape& ls, const Matrix& W0);

}  // namespace dcn
