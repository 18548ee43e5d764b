#pragma once

#include <cstddef>
#include <vector>

#include "aeda/rng.hpp"
#include "aeda/tensor.hpp"

namespace aeda {

enum class ParamKind : unsigned char { conv = 0, dense = 1 };

// Trainable weights of one conv or dense layer.
//   conv:  weights C_out x C_in x kh x kw, bias C_out
//   dense: weights out x in, bias out
// A frozen layer is bit-identical before and after any optimizer step.
struct LayerParams {
  ParamKind kind = ParamKind::dense;
  Tensor weights;
  Tensor bias;
  bool frozen = false;
};

// Glorot-uniform initialization.
LayerParams make_conv_params(std::size_t c_out, std::size_t c_in, std::size_t kh, std::size_t kw,
                             Rng& rng);
LayerParams make_dense_params(std::size_t out_dim, std::size_t in_dim, Rng& rng);

// 2-D cross-correlation, stride 1, zero "same" padding (output spatial size
// equals input). Input is C_in x H x W or batched N x C_in x H x W.
Tensor conv2d(const Tensor& input, const LayerParams& p);
void conv2d_backward(Tensor& input, LayerParams& p, const Tensor& grad_out);

// Max pooling with ragged trailing windows (output ceil(H/ph) x ceil(W/pw)).
Tensor maxpool(const Tensor& input, std::size_t ph, std::size_t pw);
// Gradient routes to each window's first (row-major) maximal element.
void maxpool_backward(Tensor& input, std::size_t ph, std::size_t pw, const Tensor& grad_out);

// Nearest-neighbor upsampling by integer factors.
Tensor upsample(const Tensor& input, std::size_t fh, std::size_t fw);
void upsample_backward(Tensor& input, std::size_t fh, std::size_t fw, const Tensor& grad_out);

// Affine map W x + b. Input is a flat vector or a batch (first dim = batch,
// remaining dims flattened).
Tensor dense(const Tensor& input, const LayerParams& p);
void dense_backward(Tensor& input, LayerParams& p, const Tensor& grad_out);

Tensor relu(const Tensor& input);
void relu_backward(Tensor& input, const Tensor& grad_out);

// Numerically stabilized softmax over a 1-D tensor.
Tensor softmax(const Tensor& logits);
void softmax_backward(Tensor& logits, const Tensor& grad_out);
// J^T g for the softmax Jacobian at the given output distribution.
std::vector<double> softmax_vjp(const std::vector<double>& probs, const std::vector<double>& g);

// Mean squared difference over all elements.
double mse_loss(const Tensor& pred, const Tensor& target);
void mse_backward(Tensor& pred, const Tensor& target, double upstream = 1.0);

// -log softmax(logits)[label] for a single 1-D logit vector.
double cross_entropy_loss(const Tensor& logits, int label);
void cross_entropy_backward(Tensor& logits, int label, double upstream = 1.0);

// Mean cross-entropy over the rows of an N x K logit matrix. Rows with
// label -1 are skipped. When `active_classes` is given, the softmax runs over
// that subset of columns only and all other columns receive zero gradient.
double cross_entropy_batch(const Tensor& logits, const std::vector<int>& labels,
                           const std::vector<int>* active_classes = nullptr);
void cross_entropy_batch_backward(Tensor& logits, const std::vector<int>& labels,
                                  double upstream = 1.0,
                                  const std::vector<int>* active_classes = nullptr);

// Identity map whose backward scales the upstream gradient by -lambda,
// making everything upstream adversarial to whatever loss sits downstream.
// lambda = 0 detaches the input from that loss entirely.
Tensor gradient_reversal(const Tensor& input, double lambda);
void gradient_reversal_backward(Tensor& input, double lambda, const Tensor& grad_out);

// Kullback-Leibler divergence sum_i p_i (ln p_i - ln q_i) between two
// probability vectors. Both are epsilon-smoothed and renormalized before the
// logs so zeroed channels cannot produce log(0).
double kld(const Tensor& p, const Tensor& q);
// Gradient w.r.t. q with p held constant: -p~/q~ elementwise on the smoothed
// values. This is the simplex gradient; its constant offset is annihilated by
// the softmax that produces q in every use site.
void kld_backward(const Tensor& p, Tensor& q, double upstream = 1.0);

constexpr double kKldEpsilon = 1e-8;

}  // namespace aeda
