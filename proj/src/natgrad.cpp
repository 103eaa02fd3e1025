#include "dcn/natgrad.hpp"

#include <sstream>
#include <stdexcept>

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/KroneckerProduct>

namespace dcn {
namespace {

Eigen::Map<const Vector> vec(const Matrix& M) {
  return Eigen::Map<const Vector>(M.data(), M.size());
}

// (S + damping*I)^-1 * B for symmetric S, with a singularity check.
Matrix damped_solve(const Matrix& S, double damping, const Matrix& B,
                    const char* what) {
  Matrix damped = S + damping * Matrix::Identity(S.rows(), S.cols());
  Eigen::FullPivLU<Matrix> lu(damped);
  if (!lu.isInvertible()) {
    std::ostringstream msg;
    msg << what << ": metric is singular after damping (lambda = " << damping
        << ")";
    throw std::runtime_error(msg.str());
  }
  return lu.solve(B);
}

void require_psd(const Matrix& S, const char* what) {
  if (S.rows() != S.cols() || !S.isApprox(S.transpose(), 1e-10)) {
    throw std::invalid_argument(std::string(what) + " must be symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(S, Eigen::EigenvaluesOnly);
  const double floor = -1e-10 * std::max(1.0, S.cwiseAbs().maxCoeff());
  if (eig.eigenvalues().minCoeff() < floor) {
    throw std::invalid_argument(std::string(what) +
                                " must be positive semi-definite");
  }
}

Matrix batch_second_moment(const Matrix& A, const Matrix& B) {
  return (A * B.transpose()) / double(A.cols());
}

}  // namespace

double EmpiricalMetric::default_damping(const Matrix& G) {
  return 1e-6 * G.trace() / double(G.rows());
}

EmpiricalMetric empirical_metric(const std::vector<Vector>& per_sample_grads) {
  if (per_sample_grads.empty()) {
    throw std::invalid_argument("empirical_metric: no gradient samples");
  }
  const Index P = per_sample_grads.front().size();
  Matrix G = Matrix::Zero(P, P);
  for (const Vector& g : per_sample_grads) {
    if (g.size() != P) {
      throw std::invalid_argument("empirical_metric: inconsistent sizes");
    }
    G.selfadjointView<Eigen::Lower>().rankUpdate(g);
  }
  G /= double(per_sample_grads.size());
  G.triangularView<Eigen::StrictlyUpper>() = G.transpose();
  return EmpiricalMetric{std::move(G), 0.0};
}

Vector ngd_update(const Vector& grad, const EmpiricalMetric& metric,
                  double lr) {
  if (grad.size() != metric.G.rows()) {
    throw std::invalid_argument("ngd_update: gradient size mismatch");
  }
  return -lr * damped_solve(metric.G, metric.damping, grad, "ngd_update");
}

Matrix layer_block_metric(const Matrix& X_prev_i, const Matrix& D_i,
                          const Matrix& D_j, const Matrix& X_prev_j) {
  const Index B = X_prev_i.cols();
  if (D_i.cols() != B || D_j.cols() != B || X_prev_j.cols() != B) {
    throw std::invalid_argument("layer_block_metric: batch size mismatch");
  }
  Matrix xfac = batch_second_moment(X_prev_j, X_prev_i);
  Matrix dfac = batch_second_moment(D_j, D_i);
  return Eigen::kroneckerProduct(xfac, dfac);
}

Matrix layerwise_ngd_update(const Matrix& X_prev, const Matrix& D,
                            const Matrix& grad_W, double damping, double lr) {
  if (X_prev.cols() != D.cols()) {
    throw std::invalid_argument("layerwise_ngd_update: batch size mismatch");
  }
  if (grad_W.rows() != D.rows() || grad_W.cols() != X_prev.rows()) {
    throw std::invalid_argument("layerwise_ngd_update: gradient shape mismatch");
  }
  Matrix dcorr = batch_second_moment(D, D);
  Matrix xcorr = batch_second_moment(X_prev, X_prev);
  Matrix left = damped_solve(dcorr, damping, grad_W, "layerwise_ngd_update");
  // Right factor applied through a transposed solve: G * (xcorr + l*I)^-1.
  Matrix right =
      damped_solve(xcorr, damping, left.transpose(), "layerwise_ngd_update");
  return -lr * right.transpose();
}

double landscape_loss(const QuadraticLandscape& ls, const Matrix& W) {
  Matrix delta = W - ls.W_star;
  return (ls.A * delta * ls.Sigma * delta.transpose()).trace();
}

Matrix landscape_gradient(const QuadraticLandscape& ls, const Matrix& W) {
  return 2.0 * ls.A * (W - ls.W_star) * ls.Sigma;
}

Matrix landscape_hessian(const QuadraticLandscape& ls) {
  return 2.0 * Eigen::kroneckerProduct(ls.Sigma, ls.A);
}

PlotData landscape_demo(const QuadraticLandscape& ls, const Matrix& W0) {
  require_psd(ls.A, "landscape_demo: A");
  require_psd(ls.Sigma, "landscape_demo: Sigma");
  if (ls.W_star.size() != 2 || W0.rows() != ls.W_star.rows() ||
      W0.cols() != ls.W_star.cols()) {
    throw std::invalid_argument(
        "landscape_demo: W must have exactly two parameters");
  }
  if (ls.grid_points < 2 || !(ls.grid_hi > ls.grid_lo)) {
    throw std::invalid_argument("landscape_demo: bad grid spec");
  }

  PlotData out;
  const int n = ls.grid_points;
  PlotSection& contour = out.add("contour", {"w1", "w2", "loss"});
  contour.values.resize(Index(n) * n, 3);
  Matrix W = W0;
  const double step = (ls.grid_hi - ls.grid_lo) / double(n - 1);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double w1 = ls.grid_lo + i * step;
      const double w2 = ls.grid_lo + j * step;
      W(0) = w1;
      W(1) = w2;
      contour.values.row(Index(i) * n + j) << w1, w2, landscape_loss(ls, W);
    }
  }

  const Vector grad = vec(landscape_gradient(ls, W0));
  const Matrix H = landscape_hessian(ls);
  EmpiricalMetric metric{H, EmpiricalMetric::default_damping(H)};

  Vector gd = -grad;
  Vector ngd = ngd_update(grad, metric, 1.0);
  // GD on ZCA-whitened inputs mapped back to W coordinates: the x-correlation
  // divides out on the right, leaving -2A(W - W*).
  Matrix decor_W = -2.0 * ls.A * (W0 - ls.W_star);
  Vector decor = vec(decor_W);

  auto arrow = [&out, &W0](const char* name, Vector dir) {
    const double norm = dir.norm();
    if (norm > 0.0) dir /= norm;
    PlotSection& s = out.add(name, {"w1", "w2", "dw1", "dw2"});
    s.values.resize(1, 4);
    s.values << W0(0), W0(1), dir(0), dir(1);
  };
  arrow("gd_arrow", gd);
  arrow("ngd_arrow", ngd);
  arrow("decor_gd_arrow", decor);

  PlotSection& minimum = out.add("minimum", {"w1", "w2"});
  minimum.values.resize(1, 2);
  minimum.values << ls.W_star(0), ls.W_star(1);
  return out;
}

}  // namespace dcn
