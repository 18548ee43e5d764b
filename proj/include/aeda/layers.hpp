#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "aeda/ops.hpp"
#include "aeda/tensor.hpp"

namespace aeda {

// One stage of a feed-forward stack. Layers are stateless between calls;
// the owning LayerStack caches activations and feeds them back to backward().
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& input) = 0;
  // Accumulates parameter gradients and returns the gradient w.r.t. input.
  // `input` must be the tensor passed to the matching forward call.
  virtual Tensor backward(Tensor& input, const Tensor& grad_out) = 0;
  virtual LayerParams* params() { return nullptr; }
  virtual std::string kind() const = 0;
};

class Conv2dLayer final : public Layer {
 public:
  Conv2dLayer(std::size_t c_out, std::size_t c_in, std::size_t kh, std::size_t kw, Rng& rng)
      : p_(make_conv_params(c_out, c_in, kh, kw, rng)) {}
  Tensor forward(const Tensor& input) override { return conv2d(input, p_); }
  Tensor backward(Tensor& input, const Tensor& grad_out) override;
  LayerParams* params() override { return &p_; }
  std::string kind() const override { return "conv"; }

 private:
  LayerParams p_;
};

class DenseLayer final : public Layer {
 public:
  DenseLayer(std::size_t out_dim, std::size_t in_dim, Rng& rng)
      : p_(make_dense_params(out_dim, in_dim, rng)) {}
  Tensor forward(const Tensor& input) override { return dense(input, p_); }
  Tensor backward(Tensor& input, const Tensor& grad_out) override;
  LayerParams* params() override { return &p_; }
  std::string kind() const override { return "dense"; }

 private:
  LayerParams p_;
};

class ReluLayer final : public Layer {
 public:
  Tensor forward(const Tensor& input) override { return relu(input); }
  Tensor backward(Tensor& input, const Tensor& grad_out) override;
  std::string kind() const override { return "relu"; }
};

class MaxPoolLayer final : public Layer {
 public:
  MaxPoolLayer(std::size_t ph, std::size_t pw) : ph_(ph), pw_(pw) {}
  Tensor forward(const Tensor& input) override { return maxpool(input, ph_, pw_); }
  Tensor backward(Tensor& input, const Tensor& grad_out) override;
  std::string kind() const override { return "maxpool"; }

 private:
  std::size_t ph_, pw_;
};

class UpsampleLayer final : public Layer {
 public:
  UpsampleLayer(std::size_t fh, std::size_t fw) : fh_(fh), fw_(fw) {}
  Tensor forward(const Tensor& input) override { return upsample(input, fh_, fw_); }
  Tensor backward(Tensor& input, const Tensor& grad_out) override;
  std::string kind() const override { return "upsample"; }

 private:
  std::size_t fh_, fw_;
};

// Identity forward, gradient scaled by -lambda backward. Placed in front of a
// domain classifier it turns the layers upstream into its adversary.
class GradReversalLayer final : public Layer {
 public:
  explicit GradReversalLayer(double lambda) : lambda_(lambda) {}
  Tensor forward(const Tensor& input) override { return gradient_reversal(input, lambda_); }
  Tensor backward(Tensor& input, const Tensor& grad_out) override;
  std::string kind() const override { return "grl"; }
  double lambda() const { return lambda_; }

 private:
  double lambda_;
};

// Crops trailing rows/columns down to a fixed spatial size. Undoes the
// overshoot that ceil-pooling followed by upsampling introduces on odd dims.
class CropToLayer final : public Layer {
 public:
  CropToLayer(std::size_t h, std::size_t w) : h_(h), w_(w) {}
  Tensor forward(const Tensor& input) override;
  Tensor backward(Tensor& input, const Tensor& grad_out) override;
  std::string kind() const override { return "crop"; }

 private:
  std::size_t h_, w_;
};

// N x C x H x W -> N x (C*H*W).
class FlattenLayer final : public Layer {
 public:
  Tensor forward(const Tensor& input) override;
  Tensor backward(Tensor& input, const Tensor& grad_out) override;
  std::string kind() const override { return "flatten"; }
};

// N x F -> N x c x h x w with c*h*w == F.
class ReshapeLayer final : public Layer {
 public:
  ReshapeLayer(std::size_t c, std::size_t h, std::size_t w) : c_(c), h_(h), w_(w) {}
  Tensor forward(const Tensor& input) override;
  Tensor backward(Tensor& input, const Tensor& grad_out) override;
  std::string kind() const override { return "reshape"; }

 private:
  std::size_t c_, h_, w_;
};

// Extra gradient added to the output of layer `layer_idx` during backward,
// on top of whatever flows down from the loss.
struct GradInjection {
  std::size_t layer_idx;
  Tensor grad;
};

class LayerStack {
 public:
  LayerStack() = default;
  LayerStack(LayerStack&&) = default;
  LayerStack& operator=(LayerStack&&) = default;

  void add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }
  std::size_t size() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_[i]; }
  const Layer& layer(std::size_t i) const { return *layers_[i]; }

  // Runs all layers, caching every activation for the following backward.
  Tensor forward(const Tensor& input);
  // Output of layer `i` from the last forward pass.
  const Tensor& activation(std::size_t i) const;
  // Propagates `grad_loss` (w.r.t. the final output) down the stack,
  // accumulating parameter gradients and returning the gradient w.r.t. the
  // stack input. Injections are added to the gradient at their layer's
  // output before that layer's backward runs.
  Tensor backward(const Tensor& grad_loss, const std::vector<GradInjection>* injections = nullptr);

  std::vector<LayerParams*> params();

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
  std::vector<Tensor> acts_;  // acts_[0] = input, acts_[i+1] = output of layer i
};

}  // namespace aeda
