#include "dcn/credit.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

namespace dcn {
namespace {

void check_trace(const Network& net, const ForwardTrace& trace,
                 const Eigen::Ref<const Matrix>& Y) {
  if (trace.x.size() != net.layers.size() + 1) {
    throw std::invalid_argument("credit: trace does not match network depth");
  }
  if (Y.rows() != net.output_dim() || Y.cols() != trace.batch) {
    std::ostringstream msg;
    msg << "credit: targets are " << Y.rows() << "x" << Y.cols()
        << ", expected " << net.output_dim() << "x" << trace.batch;
    throw std::invalid_argument(msg.str());
  }
}

// Shared BP/FA recursion; fa == nullptr selects the true transposes.
DeltaSet backward_deltas(const Network& net, const ForwardTrace& trace,
                         const Eigen::Ref<const Matrix>& Y,
                         const std::vector<Matrix>* fa) {
  check_trace(net, trace, Y);
  const Index L = Index(net.layers.size());
  const std::vector<Index> widx = net.weighted_layer_indices();
  if (fa && fa->size() != widx.size()) {
    throw std::invalid_argument("fa_deltas: missing feedback matrices");
  }
  DeltaSet out;
  out.delta.resize(widx.size());

  const bool cce = net.loss_kind == LossKind::SoftmaxCrossEntropy;
  Matrix grad_x;  // gradient w.r.t. x_i while walking down
  if (!cce) grad_x = trace.x.back() - Y;

  Index k = Index(widx.size()) - 1;
  for (Index li = L - 1; li >= 0; --li) {
    const Layer& layer = net.layers[li];
    if (!layer.weighted()) {
      grad_x = maxpool_backward(grad_x, trace.pool_argmax[li], layer.in_shape);
      continue;
    }
    Matrix delta_h;
    if (li == L - 1 && cce) {
      delta_h = softmax_columns(trace.h[li]) - Y;
    } else {
      Matrix grad_h = grad_x;
      if (layer.spec.kind == LayerSpec::Kind::Conv) {
        grad_h = images_to_cols(grad_x, layer.spec.out_channels,
                                layer.out_shape.h * layer.out_shape.w);
      }
      delta_h = activation_derivative(layer.spec.activation, trace.h[li])
                    .cwiseProduct(grad_h);
    }
    out.delta[k] = delta_h;
    if (li > 0) {
      Matrix grad_xhat;
      if (fa) {
        grad_xhat = (*fa)[k] * delta_h;
      } else {
        grad_xhat = layer.W.transpose() * delta_h;
      }
      Matrix grad_pre = layer.decor.M.transpose() * grad_xhat;
      if (layer.spec.kind == LayerSpec::Kind::Conv) {
        grad_x = col2im(grad_pre, layer.in_shape, layer.spec.kernel,
                        layer.spec.stride, layer.spec.padding, trace.batch);
      } else {
        grad_x = std::move(grad_pre);
      }
    }
    --k;
  }
  return out;
}

}  // namespace

CreditMethod CreditMethod::bp() { return CreditMethod{}; }

CreditMethod CreditMethod::fa(const Network& net, std::uint64_t seed) {
  CreditMethod m;
  m.kind = Kind::FA;
  m.seed = seed;
  std::size_t k = 0;
  for (Index li : net.weighted_layer_indices()) {
    const Matrix& W = net.layers[li].W;
    const double bound = 1.0 / std::sqrt(double(W.cols()));
    std::mt19937_64 rng(mix_seed(seed, k));
    std::uniform_real_distribution<double> u(-bound, bound);
    Matrix B(W.cols(), W.rows());
    for (Index i = 0; i < B.rows(); ++i)
      for (Index j = 0; j < B.cols(); ++j) B(i, j) = u(rng);
    m.feedback.push_back(std::move(B));
    ++k;
  }
  return m;
}

CreditMethod CreditMethod::np(double sigma, std::uint64_t seed) {
  CreditMethod m;
  m.kind = Kind::NP;
  m.sigma = sigma;
  m.seed = seed;
  return m;
}

DeltaSet bp_deltas(const Network& net, const ForwardTrace& trace,
                   const Eigen::Ref<const Matrix>& Y) {
  return backward_deltas(net, trace, Y, nullptr);
}

DeltaSet fa_deltas(const Network& net, const ForwardTrace& trace,
                   const Eigen::Ref<const Matrix>& Y,
                   const CreditMethod& method) {
  return backward_deltas(net, trace, Y, &method.feedback);
}

DeltaSet np_update(const Network& net, const ForwardTrace& trace,
                   const Eigen::Ref<const Matrix>& Y,
                   const CreditMethod& method, std::uint64_t stream) {
  const double sigma = method.sigma;
  const std::uint64_t base = mix_seed(method.seed, stream);
  NoiseFn noise = [sigma, base](std::size_t k, Index rows, Index cols) {
    std::mt19937_64 rng(mix_seed(base, k));
    std::normal_distribution<double> n(0.0, sigma);
    Matrix xi(rows, cols);
    for (Index j = 0; j < cols; ++j)
      for (Index i = 0; i < rows; ++i) xi(i, j) = n(rng);
    return xi;
  };
  return np_update(net, trace, Y, method, noise);
}

DeltaSet np_update(const Network& net, const ForwardTrace& trace,
                   const Eigen::Ref<const Matrix>& Y,
                   const CreditMethod& method, const NoiseFn& noise) {
  if (method.sigma <= 0.0) {
    throw std::invalid_argument("np_update: sigma must be positive");
  }
  check_trace(net, trace, Y);
  const Vector L0 = per_sample_loss(net.loss_kind, trace.x.back(), Y);

  // Perturbed pass: same wiring as forward() plus noise on pre-activations.
  std::vector<Matrix> xi(net.layers.size());
  Matrix cur = trace.x[0];
  std::size_t k = 0;
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    const Layer& layer = net.layers[li];
    switch (layer.spec.kind) {
      case LayerSpec::Kind::Dense: {
        Matrix h = layer.W * decorrelate(layer.decor, cur);
        xi[li] = noise(k++, h.rows(), h.cols());
        cur = apply_activation(layer.spec.activation, h + xi[li]);
        break;
      }
      case LayerSpec::Kind::Conv: {
        Matrix h = layer.W *
                   decorrelate(layer.decor,
                               im2col(cur, layer.in_shape, layer.spec.kernel,
                                      layer.spec.stride, layer.spec.padding));
        xi[li] = noise(k++, h.rows(), h.cols());
        cur = cols_to_images(
            apply_activation(layer.spec.activation, h + xi[li]),
            layer.spec.out_channels, layer.out_shape.h * layer.out_shape.w);
        break;
      }
      case LayerSpec::Kind::MaxPool: {
        cur = maxpool_forward(cur, layer.in_shape, layer.spec.window,
                              layer.spec.pool_stride)
                  .first;
        break;
      }
    }
  }
  const Vector L_xi = per_sample_loss(net.loss_kind, cur, Y);
  const Vector scale = (L_xi - L0) / (method.sigma * method.sigma);

  DeltaSet out;
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    const Layer& layer = net.layers[li];
    if (!layer.weighted()) continue;
    Matrix d = std::move(xi[li]);
    const Index per_sample = d.cols() / trace.batch;  // P positions, dense: 1
    for (Index col = 0; col < d.cols(); ++col) {
      d.col(col) *= scale(col / per_sample);
    }
    out.delta.push_back(std::move(d));
  }
  return out;
}

std::vector<Matrix> weight_gradients(const Network& net,
                                     const ForwardTrace& trace,
                                     const DeltaSet& deltas) {
  const std::vector<Index> widx = net.weighted_layer_indices();
  if (deltas.delta.size() != widx.size()) {
    throw std::invalid_argument("weight_gradients: delta count mismatch");
  }
  std::vector<Matrix> grads;
  grads.reserve(widx.size());
  for (std::size_t k = 0; k < widx.size(); ++k) {
    const Matrix& d = deltas.delta[k];
    const Matrix& xh = trace.x_hat[widx[k]];
    if (d.cols() != xh.cols()) {
      throw std::invalid_argument("weight_gradients: shape mismatch");
    }
    grads.push_back(d * xh.transpose() / double(trace.batch));
  }
  return grads;
}

}  // namespace dcn
