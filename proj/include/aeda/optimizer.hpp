#pragma once

#include <cstddef>
#include <vector>

#include "aeda/ops.hpp"

namespace aeda {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adaptive-moment optimizer. Frozen parameters are never registered, so no
// moment state exists for them and they stay bit-identical across steps.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  // Registers every non-frozen parameter in the list; frozen ones are skipped.
  void add_params(const std::vector<LayerParams*>& params);

  // Applies one update to all registered parameters and zeroes their grads.
  // Called before any backward has produced a gradient: warns and no-ops.
  void step();

  long step_count() const { return t_; }

 private:
  struct Slot {
    LayerParams* p;
    std::vector<double> mw, vw, mb, vb;
  };

  void update(Tensor& t, std::vector<double>& m, std::vector<double>& v) const;

  AdamConfig cfg_;
  std::vector<Slot> slots_;
  long t_ = 0;
};

}  // namespace aeda
