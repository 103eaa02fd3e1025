#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dcn/decorrelation.hpp"
#include "dcn/types.hpp"

namespace dcn {

enum class Activation { Identity, ReLU };
enum class LossKind { SoftmaxCrossEntropy, SquaredError };

// Channel-major image geometry: a sample is flattened as c*H*W + h*W + w.
struct ImageShape {
  Index c = 0;
  Index h = 0;
  Index w = 0;
  Index flat() const { return c * h * w; }
};

struct LayerSpec {
  enum class Kind { Dense, Conv, MaxPool };
  Kind kind = Kind::Dense;
  Activation activation = Activation::Identity;

  Index in = 0, out = 0;                       // Dense
  Index kernel = 0, in_channels = 0,           // Conv
      out_channels = 0, stride = 1, padding = 0;
  Index window = 0, pool_stride = 0;           // MaxPool

  static LayerSpec dense(Index in, Index out,
                         Activation act = Activation::ReLU);
  static LayerSpec conv(Index kernel, Index in_channels, Index out_channels,
                        Index stride, Index padding,
                        Activation act = Activation::ReLU);
  static LayerSpec maxpool(Index window, Index stride);
  bool weighted() const { return kind != Kind::MaxPool; }
};

// One concrete layer: the spec plus parameters and cached geometry. Dense
// layers use in_shape/out_shape with h = w = 1.
struct Layer {
  LayerSpec spec;
  Matrix W;                  // Dense: out x in; Conv: out_c x k*k*in_c
  DecorrelationState decor;  // weighted layers only; dimension = W.cols()
  ImageShape in_shape;
  ImageShape out_shape;
  bool weighted() const { return spec.weighted(); }
};

struct Network {
  std::vector<Layer> layers;
  LossKind loss_kind = LossKind::SoftmaxCrossEntropy;
  ImageShape input_shape;
  Index input_dim() const { return input_shape.flat(); }
  Index output_dim() const { return layers.back().out_shape.flat(); }
  std::vector<Index> weighted_layer_indices() const;
};

// Activations of one batch, stored for the backward pass. x[0] is the input,
// x[i+1] the output of layer i. For conv layers h and x_hat live in column
// space (out_c x B*P and k*k*in_c x B*P); the argmax of a pool layer holds,
// per pooled output entry, the flat input index that produced the maximum.
struct ForwardTrace {
  std::vector<Matrix> x;
  std::vector<Matrix> h;
  std::vector<Matrix> x_hat;
  std::vector<IndexMatrix> pool_argmax;
  Index batch = 0;
};

Matrix init_weights(const LayerSpec& spec, std::uint64_t seed);

// Builds the network, validates adjacent shapes, initializes W per layer
// from the seed and M = I, mu = 0 with eta_M = 0 (decorrelation off).
Network make_network(ImageShape input, const std::vector<LayerSpec>& specs,
                     LossKind loss, std::uint64_t seed);

void set_decorrelation(Network& net, double eta_M,
                       GainMode mode = GainMode::PerUnit);

ForwardTrace forward(const Network& net, const Eigen::Ref<const Matrix>& X0);

// Patch extraction: column (b*P + p) holds the k*k*c patch at output
// position p = oh*out_w + ow of sample b, flattened as c*k*k + kh*k + kw.
Matrix im2col(const Eigen::Ref<const Matrix>& X, ImageShape shape,
              Index kernel, Index stride, Index padding);

// Adjoint of im2col: scatter-adds patch columns back into image space.
Matrix col2im(const Eigen::Ref<const Matrix>& cols, ImageShape shape,
              Index kernel, Index stride, Index padding, Index batch);

std::pair<Matrix, IndexMatrix> maxpool_forward(
    const Eigen::Ref<const Matrix>& X, ImageShape shape, Index window,
    Index stride);

Matrix maxpool_backward(const Eigen::Ref<const Matrix>& delta_pooled,
                        const IndexMatrix& argmax, ImageShape in_shape);

// Geometry of the conv/pool output grid; throws unless the kernel tiles the
// padded input exactly.
ImageShape conv_output_shape(ImageShape in, Index kernel, Index out_channels,
                             Index stride, Index padding);

// Column-space layout helpers for conv layers: images are (c*P x B) with P
// output positions, columns are (c x B*P).
Matrix images_to_cols(const Eigen::Ref<const Matrix>& X, Index channels,
                      Index positions);
Matrix cols_to_images(const Eigen::Ref<const Matrix>& cols, Index channels,
                      Index positions);

Matrix apply_activation(Activation act, const Eigen::Ref<const Matrix>& H);
// Derivative evaluated at the pre-activation; ReLU' at 0 is defined as 0.
Matrix activation_derivative(Activation act, const Eigen::Ref<const Matrix>& H);

Matrix softmax_columns(const Eigen::Ref<const Matrix>& H);

// Per-sample losses of the network output (logits for cross-entropy).
Vector per_sample_loss(LossKind kind, const Eigen::Ref<const Matrix>& output,
                       const Eigen::Ref<const Matrix>& Y);
double mean_loss(LossKind kind, const Eigen::Ref<const Matrix>& output,
                 const Eigen::Ref<const Matrix>& Y);

// Flat binary checkpoint: magic "DCNW", version u32, weighted-layer count
// u32, then per weighted layer rows/cols u32 pairs followed by row-major
// float64 payloads for W, M (cols x cols) and mu (cols). Native endianness.
void save_checkpoint(const Network& net, const std::string& path);
void load_checkpoint(Network& net, const std::string& path);

}  // namespace dcn
