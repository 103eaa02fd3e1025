#include "dcn/network.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>

namespace dcn {
namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

}  // namespace

LayerSpec LayerSpec::dense(Index in, Index out, Activation act) {
  LayerSpec s;
  s.kind = Kind::Dense;
  s.in = in;
  s.out = out;
  s.activation = act;
  return s;
}

LayerSpec LayerSpec::conv(Index kernel, Index in_channels, Index out_channels,
                          Index stride, Index padding, Activation act) {
  LayerSpec s;
  s.kind = Kind::Conv;
  s.kernel = kernel;
  s.in_channels = in_channels;
  s.out_channels = out_channels;
  s.stride = stride;
  s.padding = padding;
  s.activation = act;
  return s;
}

LayerSpec LayerSpec::maxpool(Index window, Index stride) {
  LayerSpec s;
  s.kind = Kind::MaxPool;
  s.window = window;
  s.pool_stride = stride;
  s.activation = Activation::Identity;
  return s;
}

std::vector<Index> Network::weighted_layer_indices() const {
  std::vector<Index> out;
  for (Index i = 0; i < Index(layers.size()); ++i)
    if (layers[i].weighted()) out.push_back(i);
  return out;
}

ImageShape conv_output_shape(ImageShape in, Index kernel, Index out_channels,
                             Index stride, Index padding) {
  const Index span_h = in.h + 2 * padding - kernel;
  const Index span_w = in.w + 2 * padding - kernel;
  if (kernel < 1 || stride < 1 || padding < 0 || span_h < 0 || span_w < 0 ||
      span_h % stride != 0 || span_w % stride != 0) {
    std::ostringstream msg;
    msg << "incompatible geometry: " << in.c << "x" << in.h << "x" << in.w
        << " with kernel " << kernel << " stride " << stride << " padding "
        << padding << " gives output " << (double(span_h) / double(stride) + 1)
        << "x" << (double(span_w) / double(stride) + 1);
    throw std::invalid_argument(msg.str());
  }
  return ImageShape{out_channels, span_h / stride + 1, span_w / stride + 1};
}

Matrix im2col(const Eigen::Ref<const Matrix>& X, ImageShape shape,
              Index kernel, Index stride, Index padding) {
  if (X.rows() != shape.flat()) {
    fail("im2col: input rows do not match image shape");
  }
  const ImageShape out = conv_output_shape(shape, kernel, 1, stride, padding);
  const Index P = out.h * out.w;
  const Index B = X.cols();
  Matrix cols = Matrix::Zero(kernel * kernel * shape.c, B * P);
  for (Index b = 0; b < B; ++b) {
    for (Index oh = 0; oh < out.h; ++oh) {
      for (Index ow = 0; ow < out.w; ++ow) {
        const Index col = b * P + oh * out.w + ow;
        for (Index c = 0; c < shape.c; ++c) {
          for (Index kh = 0; kh < kernel; ++kh) {
            const Index ih = oh * stride + kh - padding;
            if (ih < 0 || ih >= shape.h) continue;
            for (Index kw = 0; kw < kernel; ++kw) {
              const Index iw = ow * stride + kw - padding;
              if (iw < 0 || iw >= shape.w) continue;
              cols(c * kernel * kernel + kh * kernel + kw, col) =
                  X(c * shape.h * shape.w + ih * shape.w + iw, b);
            }
          }
        }
      }
    }
  }
  return cols;
}

Matrix col2im(const Eigen::Ref<const Matrix>& cols, ImageShape shape,
              Index kernel, Index stride, Index padding, Index batch) {
  const ImageShape out = conv_output_shape(shape, kernel, 1, stride, padding);
  const Index P = out.h * out.w;
  if (cols.rows() != kernel * kernel * shape.c || cols.cols() != batch * P) {
    fail("col2im: column matrix does not match geometry");
  }
  Matrix X = Matrix::Zero(shape.flat(), batch);
  for (Index b = 0; b < batch; ++b) {
    for (Index oh = 0; oh < out.h; ++oh) {
      for (Index ow = 0; ow < out.w; ++ow) {
        const Index col = b * P + oh * out.w + ow;
        for (Index c = 0; c < shape.c; ++c) {
          for (Index kh = 0; kh < kernel; ++kh) {
            const Index ih = oh * stride + kh - padding;
            if (ih < 0 || ih >= shape.h) continue;
            for (Index kw = 0; kw < kernel; ++kw) {
              const Index iw = ow * stride + kw - padding;
              if (iw < 0 || iw >= shape.w) continue;
              X(c * shape.h * shape.w + ih * shape.w + iw, b) +=
                  cols(c * kernel * kernel + kh * kernel + kw, col);
            }
          }
        }
      }
    }
  }
  return X;
}

std::pair<Matrix, IndexMatrix> maxpool_forward(
    const Eigen::Ref<const Matrix>& X, ImageShape shape, Index window,
    Index stride) {
  if (X.rows() != shape.flat()) {
    fail("maxpool_forward: input rows do not match image shape");
  }
  const ImageShape out = conv_output_shape(shape, window, shape.c, stride, 0);
  const Index P = out.h * out.w;
  const Index B = X.cols();
  Matrix pooled(shape.c * P, B);
  IndexMatrix argmax(shape.c * P, B);
  for (Index b = 0; b < B; ++b) {
    for (Index c = 0; c < shape.c; ++c) {
      for (Index oh = 0; oh < out.h; ++oh) {
        for (Index ow = 0; ow < out.w; ++ow) {
          double best = -std::numeric_limits<double>::infinity();
          Index best_idx = -1;
          // Window scanned in flat-index order so ties keep the lowest index.
          for (Index kh = 0; kh < window; ++kh) {
            for (Index kw = 0; kw < window; ++kw) {
              const Index ih = oh * stride + kh;
              const Index iw = ow * stride + kw;
              const Index idx = c * shape.h * shape.w + ih * shape.w + iw;
              if (X(idx, b) > best) {
                best = X(idx, b);
                best_idx = idx;
              }
            }
          }
          pooled(c * P + oh * out.w + ow, b) = best;
          argmax(c * P + oh * out.w + ow, b) = best_idx;
        }
      }
    }
  }
  return {std::move(pooled), std::move(argmax)};
}

Matrix maxpool_backward(const Eigen::Ref<const Matrix>& delta_pooled,
                        const IndexMatrix& argmax, ImageShape in_shape) {
  if (delta_pooled.rows() != argmax.rows() ||
      delta_pooled.cols() != argmax.cols()) {
    fail("maxpool_backward: delta/argmax shape mismatch");
  }
  Matrix out = Matrix::Zero(in_shape.flat(), delta_pooled.cols());
  for (Index b = 0; b < delta_pooled.cols(); ++b)
    for (Index r = 0; r < delta_pooled.rows(); ++r)
      out(argmax(r, b), b) += delta_pooled(r, b);
  return out;
}

Matrix images_to_cols(const Eigen::Ref<const Matrix>& X, Index channels,
                      Index positions) {
  const Index B = X.cols();
  if (X.rows() != channels * positions) {
    fail("images_to_cols: shape mismatch");
  }
  Matrix cols(channels, B * positions);
  for (Index b = 0; b < B; ++b)
    for (Index c = 0; c < channels; ++c)
      for (Index p = 0; p < positions; ++p)
        cols(c, b * positions + p) = X(c * positions + p, b);
  return cols;
}

Matrix cols_to_images(const Eigen::Ref<const Matrix>& cols, Index channels,
                      Index positions) {
  if (cols.rows() != channels || cols.cols() % positions != 0) {
    fail("cols_to_images: shape mismatch");
  }
  const Index B = cols.cols() / positions;
  Matrix X(channels * positions, B);
  for (Index b = 0; b < B; ++b)
    for (Index c = 0; c < channels; ++c)
      for (Index p = 0; p < positions; ++p)
        X(c * positions + p, b) = cols(c, b * positions + p);
  return X;
}

Matrix apply_activation(Activation act, const Eigen::Ref<const Matrix>& H) {
  switch (act) {
    case Activation::Identity:
      return H;
    case Activation::ReLU:
      return H.cwiseMax(0.0);
  }
  fail("apply_activation: unknown activation");
}

Matrix activation_derivative(Activation act,
                             const Eigen::Ref<const Matrix>& H) {
  switch (act) {
    case Activation::Identity:
      return Matrix::Ones(H.rows(), H.cols());
    case Activation::ReLU:
      return (H.array() > 0.0).cast<double>();
  }
  fail("activation_derivative: unknown activation");
}

Matrix softmax_columns(const Eigen::Ref<const Matrix>& H) {
  Matrix Z = H;
  Z.rowwise() -= H.colwise().maxCoeff();
  Z = Z.array().exp();
  Z.array().rowwise() /= Z.colwise().sum().array();
  return Z;
}

Vector per_sample_loss(LossKind kind, const Eigen::Ref<const Matrix>& output,
                       const Eigen::Ref<const Matrix>& Y) {
  if (output.rows() != Y.rows() || output.cols() != Y.cols()) {
    fail("per_sample_loss: output/target shape mismatch");
  }
  switch (kind) {
    case LossKind::SoftmaxCrossEntropy: {
      RowVector mx = output.colwise().maxCoeff();
      RowVector lse =
          (output.rowwise() - mx).array().exp().colwise().sum().log().matrix() +
          mx;
      RowVector picked = (Y.array() * output.array()).colwise().sum();
      return (lse - picked).transpose();
    }
    case LossKind::SquaredError:
      return 0.5 * (output - Y).colwise().squaredNorm().transpose();
  }
  fail("per_sample_loss: unknown loss");
}

double mean_loss(LossKind kind, const Eigen::Ref<const Matrix>& output,
                 const Eigen::Ref<const Matrix>& Y) {
  return per_sample_loss(kind, output, Y).mean();
}

Matrix init_weights(const LayerSpec& spec, std::uint64_t seed) {
  Index rows = 0, fan_in = 0;
  if (spec.kind == LayerSpec::Kind::Dense) {
    rows = spec.out;
    fan_in = spec.in;
  } else if (spec.kind == LayerSpec::Kind::Conv) {
    rows = spec.out_channels;
    fan_in = spec.kernel * spec.kernel * spec.in_channels;
  } else {
    fail("init_weights: layer has no weights");
  }
  const double bound = 1.0 / std::sqrt(double(fan_in));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-bound, bound);
  Matrix W(rows, fan_in);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < fan_in; ++j) W(i, j) = u(rng);
  return W;
}

Network make_network(ImageShape input, const std::vector<LayerSpec>& specs,
                     LossKind loss, std::uint64_t seed) {
  if (input.flat() <= 0) fail("make_network: empty input shape");
  if (specs.empty()) fail("make_network: no layers");
  Network net;
  net.loss_kind = loss;
  net.input_shape = input;
  ImageShape cur = input;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    Layer layer;
    layer.spec = specs[i];
    layer.in_shape = cur;
    std::ostringstream where;
    where << "layer " << i << ": ";
    switch (specs[i].kind) {
      case LayerSpec::Kind::Dense: {
        if (specs[i].in != cur.flat()) {
          fail(where.str() + "dense expects in=" + std::to_string(specs[i].in) +
               ", previous layer provides " + std::to_string(cur.flat()));
        }
        layer.out_shape = ImageShape{specs[i].out, 1, 1};
        layer.W = init_weights(specs[i], mix_seed(seed, i));
        layer.decor = DecorrelationState::identity(specs[i].in, 0.0);
        break;
      }
      case LayerSpec::Kind::Conv: {
        if (specs[i].in_channels != cur.c) {
          fail(where.str() + "conv expects " +
               std::to_string(specs[i].in_channels) + " channels, previous " +
               "layer provides " + std::to_string(cur.c));
        }
        layer.out_shape =
            conv_output_shape(cur, specs[i].kernel, specs[i].out_channels,
                              specs[i].stride, specs[i].padding);
        layer.W = init_weights(specs[i], mix_seed(seed, i));
        layer.decor = DecorrelationState::identity(
            specs[i].kernel * specs[i].kernel * specs[i].in_channels, 0.0);
        break;
      }
      case LayerSpec::Kind::MaxPool: {
        layer.out_shape = conv_output_shape(cur, specs[i].window, cur.c,
                                            specs[i].pool_stride, 0);
        break;
      }
    }
    cur = layer.out_shape;
    net.layers.push_back(std::move(layer));
  }
  if (loss == LossKind::SoftmaxCrossEntropy) {
    const Layer& last = net.layers.back();
    if (last.spec.kind != LayerSpec::Kind::Dense ||
        last.spec.activation != Activation::Identity) {
      fail("make_network: cross-entropy requires a final dense layer with "
           "identity activation");
    }
  }
  return net;
}

void set_decorrelation(Network& net, double eta_M, GainMode mode) {
  for (Layer& layer : net.layers) {
    if (!layer.weighted()) continue;
    layer.decor.eta_M = eta_M;
    layer.decor.gain_mode = mode;
  }
}

ForwardTrace forward(const Network& net, const Eigen::Ref<const Matrix>& X0) {
  if (X0.rows() != net.input_dim()) {
    std::ostringstream msg;
    msg << "forward: expected " << net.input_dim() << " input rows, got "
        << X0.rows();
    throw std::invalid_argument(msg.str());
  }
  const std::size_t L = net.layers.size();
  ForwardTrace trace;
  trace.batch = X0.cols();
  trace.x.reserve(L + 1);
  trace.h.resize(L);
  trace.x_hat.resize(L);
  trace.pool_argmax.resize(L);
  trace.x.push_back(X0);
  for (std::size_t i = 0; i < L; ++i) {
    const Layer& layer = net.layers[i];
    const Matrix& cur = trace.x.back();
    switch (layer.spec.kind) {
      case LayerSpec::Kind::Dense: {
        trace.x_hat[i] = decorrelate(layer.decor, cur);
        trace.h[i] = layer.W * trace.x_hat[i];
        trace.x.push_back(apply_activation(layer.spec.activation, trace.h[i]));
        break;
      }
      case LayerSpec::Kind::Conv: {
        const Matrix patches =
            im2col(cur, layer.in_shape, layer.spec.kernel, layer.spec.stride,
                   layer.spec.padding);
        trace.x_hat[i] = decorrelate(layer.decor, patches);
        trace.h[i] = layer.W * trace.x_hat[i];
        const Index P = layer.out_shape.h * layer.out_shape.w;
        trace.x.push_back(cols_to_images(
            apply_activation(layer.spec.activation, trace.h[i]),
            layer.spec.out_channels, P));
        break;
      }
      case LayerSpec::Kind::MaxPool: {
        auto pooled = maxpool_forward(cur, layer.in_shape, layer.spec.window,
                                      layer.spec.pool_stride);
        trace.pool_argmax[i] = std::move(pooled.second);
        trace.x.push_back(std::move(pooled.first));
        break;
      }
    }
  }
  return trace;
}

namespace {

void write_bytes(std::ofstream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), std::streamsize(n));
}

void write_u32(std::ofstream& out, std::uint32_t v) { write_bytes(out, &v, 4); }

void write_matrix_rowmajor(std::ofstream& out, const Matrix& M) {
  for (Index i = 0; i < M.rows(); ++i)
    for (Index j = 0; j < M.cols(); ++j) {
      const double v = M(i, j);
      write_bytes(out, &v, sizeof v);
    }
}

void read_bytes(std::ifstream& in, void* p, std::size_t n,
                const std::string& what) {
  in.read(static_cast<char*>(p), std::streamsize(n));
  if (!in) fail("checkpoint: truncated while reading " + what);
}

std::uint32_t read_u32(std::ifstream& in, const std::string& what) {
  std::uint32_t v = 0;
  read_bytes(in, &v, 4, what);
  return v;
}

Matrix read_matrix_rowmajor(std::ifstream& in, Index rows, Index cols,
                            const std::string& what) {
  Matrix M(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) {
      double v = 0;
      read_bytes(in, &v, sizeof v, what);
      M(i, j) = v;
    }
  return M;
}

}  // namespace

void save_checkpoint(const Network& net, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail("checkpoint: cannot open " + path + " for writing");
  write_bytes(out, "DCNW", 4);
  write_u32(out, 1);
  const std::vector<Index> widx = net.weighted_layer_indices();
  write_u32(out, std::uint32_t(widx.size()));
  for (Index i : widx) {
    const Layer& layer = net.layers[i];
    write_u32(out, std::uint32_t(layer.W.rows()));
    write_u32(out, std::uint32_t(layer.W.cols()));
    write_matrix_rowmajor(out, layer.W);
    write_matrix_rowmajor(out, layer.decor.M);
    write_matrix_rowmajor(out, layer.decor.mu);
  }
  if (!out) fail("checkpoint: write failed for " + path);
}

void load_checkpoint(Network& net, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("checkpoint: cannot open " + path);
  char magic[4];
  read_bytes(in, magic, 4, "magic");
  if (std::string(magic, 4) != "DCNW") fail("checkpoint: bad magic");
  if (read_u32(in, "version") != 1) fail("checkpoint: unsupported version");
  const std::vector<Index> widx = net.weighted_layer_indices();
  const std::uint32_t count = read_u32(in, "layer count");
  if (count != widx.size()) {
    fail("checkpoint: expected " + std::to_string(widx.size()) +
         " weighted layers, file has " + std::to_string(count));
  }
  for (Index i : widx) {
    Layer& layer = net.layers[i];
    const std::uint32_t rows = read_u32(in, "rows");
    const std::uint32_t cols = read_u32(in, "cols");
    if (Index(rows) != layer.W.rows() || Index(cols) != layer.W.cols()) {
      std::ostringstream msg;
      msg << "checkpoint: layer " << i << " shape " << rows << "x" << cols
          << " does not match network " << layer.W.rows() << "x"
          << layer.W.cols();
      fail(msg.str());
    }
    layer.W = read_matrix_rowmajor(in, rows, cols, "weights");
    layer.decor.M = read_matrix_rowmajor(in, cols, cols, "decorrelation");
    layer.decor.mu = read_matrix_rowmajor(in, cols, 1, "mean");
  }
}

}  // namespace dcn
