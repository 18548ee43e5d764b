#include "aeda/layers.hpp"

#include <string>

#include "aeda/errors.hpp"

namespace aeda {

namespace {

Tensor take_input_grad(Tensor& input) {
  Tensor g(input.shape(), input.grad_vec());
  input.drop_grad();
  return g;
}

}  // namespace

Tensor Conv2dLayer::backward(Tensor& input, const Tensor& grad_out) {
  conv2d_backward(input, p_, grad_out);
  return take_input_grad(input);
}

Tensor DenseLayer::backward(Tensor& input, const Tensor& grad_out) {
  dense_backward(input, p_, grad_out);
  return take_input_grad(input);
}

Tensor ReluLayer::backward(Tensor& input, const Tensor& grad_out) {
  relu_backward(input, grad_out);
  return take_input_grad(input);
}

Tensor MaxPoolLayer::backward(Tensor& input, const Tensor& grad_out) {
  maxpool_backward(input, ph_, pw_, grad_out);
  return take_input_grad(input);
}

Tensor GradReversalLayer::backward(Tensor& input, const Tensor& grad_out) {
  gradient_reversal_backward(input, lambda_, grad_out);
  return take_input_grad(input);
}

Tensor UpsampleLayer::backward(Tensor& input, const Tensor& grad_out) {
  upsample_backward(input, fh_, fw_, grad_out);
  return take_input_grad(input);
}

Tensor CropToLayer::forward(const Tensor& input) {
  if (input.ndim() != 4)
    throw ShapeError("crop: input must be 4-D, got " + shape_str(input.shape()));
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h < h_ || w < w_)
    throw ShapeError("crop: input " + shape_str(input.shape()) + " smaller than crop target " +
                     std::to_string(h_) + "x" + std::to_string(w_));
  Tensor out({n, c, h_, w_});
  const double* in = input.data();
  double* o = out.data();
  for (std::size_t nc = 0; nc < n * c; ++nc)
    for (std::size_t y = 0; y < h_; ++y)
      for (std::size_t x = 0; x < w_; ++x)
        o[(nc * h_ + y) * w_ + x] = in[(nc * h + y) * w + x];
  return out;
}

Tensor CropToLayer::backward(Tensor& input, const Tensor& grad_out) {
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (grad_out.shape() != Shape{n, c, h_, w_})
    throw ShapeError("crop: upstream gradient shape " + shape_str(grad_out.shape()) +
                     " does not match cropped shape");
  Tensor g(input.shape());
  const double* go = grad_out.data();
  double* dg = g.data();
  for (std::size_t nc = 0; nc < n * c; ++nc)
    for (std::size_t y = 0; y < h_; ++y)
      for (std::size_t x = 0; x < w_; ++x)
        dg[(nc * h + y) * w + x] = go[(nc * h_ + y) * w_ + x];
  return g;
}

Tensor FlattenLayer::forward(const Tensor& input) {
  if (input.ndim() != 4)
    throw ShapeError("flatten: input must be 4-D, got " + shape_str(input.shape()));
  return input.reshaped({input.dim(0), input.size() / input.dim(0)});
}

Tensor FlattenLayer::backward(Tensor& input, const Tensor& grad_out) {
  if (grad_out.size() != input.size())
    throw ShapeError("flatten: upstream gradient has " + std::to_string(grad_out.size()) +
                     " values, input has " + std::to_string(input.size()));
  return grad_out.reshaped(input.shape());
}

Tensor ReshapeLayer::forward(const Tensor& input) {
  if (input.ndim() != 2)
    throw ShapeError("reshape: input must be 2-D, got " + shape_str(input.shape()));
  if (input.dim(1) != c_ * h_ * w_)
    throw ShapeError("reshape: input row size " + std::to_string(input.dim(1)) +
                     " does not equal " + std::to_string(c_ * h_ * w_));
  return input.reshaped({input.dim(0), c_, h_, w_});
}

Tensor ReshapeLayer::backward(Tensor& input, const Tensor& grad_out) {
  if (grad_out.size() != input.size())
    throw ShapeError("reshape: upstream gradient has " + std::to_string(grad_out.size()) +
                     " values, input has " + std::to_string(input.size()));
  return grad_out.reshaped(input.shape());
}

Tensor LayerStack::forward(const Tensor& input) {
  acts_.clear();
  acts_.reserve(layers_.size() + 1);
  acts_.push_back(input);
  for (auto& l : layers_) acts_.push_back(l->forward(acts_.back()));
  return acts_.back();
}

const Tensor& LayerStack::activation(std::size_t i) const {
  if (i + 1 >= acts_.size())
    throw ShapeError("activation: layer " + std::to_string(i) + " has no cached output");
  return acts_[i + 1];
}

Tensor LayerStack::backward(const Tensor& grad_loss, const std::vector<GradInjection>* injections) {
  if (acts_.size() != layers_.size() + 1)
    throw ShapeError("backward: no cached forward pass");
  if (grad_loss.shape() != acts_.back().shape())
    throw ShapeError("backward: loss gradient shape " + shape_str(grad_loss.shape()) +
                     " does not match output shape " + shape_str(acts_.back().shape()));
  Tensor grad = grad_loss;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    if (injections)
      for (const auto& inj : *injections)
        if (inj.layer_idx == i) {
          if (inj.grad.shape() != grad.shape())
            throw ShapeError("backward: injection at layer " + std::to_string(i) + " has shape " +
                             shape_str(inj.grad.shape()) + ", activation has " +
                             shape_str(grad.shape()));
          for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += inj.grad[k];
        }
    grad = layers_[i]->backward(acts_[i], grad);
  }
  return grad;
}

std::vector<LayerParams*> LayerStack::params() {
  std::vector<LayerParams*> out;
  for (auto& l : layers_)
    if (LayerParams* p = l->params()) out.push_back(p);
  return out;
}

}  // namespace aeda
