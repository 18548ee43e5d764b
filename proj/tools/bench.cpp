// Rough throughput check for the hot training ops on one core.
#include <chrono>
#include <cstdio>

#include "aeda/layers.hpp"
#include "aeda/ops.hpp"
#include "aeda/rng.hpp"

using namespace aeda;

static double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int main() {
  Rng rng(42);
  const std::size_t batch = 128, nf = 32, nw = 10;
  Tensor x({batch, 1, nf, nw});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-1.0, 1.0);

  LayerParams c1 = make_conv_params(16, 1, 3, 3, rng);
  LayerParams c2 = make_conv_params(32, 16, 2, 2, rng);

  auto t0 = std::chrono::steady_clock::now();
  int reps = 20;
  for (int r = 0; r < reps; ++r) {
    Tensor z1 = conv2d(x, c1);
    Tensor a1 = relu(z1);
    Tensor p1 = maxpool(a1, 2, 2);
    Tensor z2 = conv2d(p1, c2);
    Tensor a2 = relu(z2);
    Tensor p2 = maxpool(a2, 2, 1);
    Tensor g(p2.shape());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = 1e-3;
    maxpool_backward(a2, 2, 1, g);
    Tensor g2(a2.shape(), a2.grad_vec());
    a2.drop_grad();
    relu_backward(z2, g2);
    Tensor g3(z2.shape(), z2.grad_vec());
    z2.drop_grad();
    conv2d_backward(p1, c2, g3);
    Tensor g4(p1.shape(), p1.grad_vec());
    p1.drop_grad();
    maxpool_backward(a1, 2, 2, g4);
    Tensor g5(a1.shape(), a1.grad_vec());
    a1.drop_grad();
    relu_backward(z1, g5);
    Tensor g6(z1.shape(), z1.grad_vec());
    z1.drop_grad();
    conv2d_backward(x, c1, g6);
    x.drop_grad();
    c1.weights.zero_grad();
    c2.weights.zero_grad();
    c1.bias.zero_grad();
    c2.bias.zero_grad();
  }
  double dt = seconds_since(t0);
  std::printf("encoder fwd+bwd, batch %zu, %zux%zu: %.1f ms/iter\n", batch, nf, nw,
              1e3 * dt / reps);
  return 0;
}
