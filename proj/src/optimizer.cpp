#include "aeda/optimizer.hpp"

#include <cmath>
#include <cstdio>

namespace aeda {

void Adam::add_params(const std::vector<LayerParams*>& params) {
  for (LayerParams* p : params) {
    if (!p || p->frozen) continue;
    Slot s;
    s.p = p;
    s.mw.assign(p->weights.size(), 0.0);
    s.vw.assign(p->weights.size(), 0.0);
    s.mb.assign(p->bias.size(), 0.0);
    s.vb.assign(p->bias.size(), 0.0);
    slots_.push_back(std::move(s));
  }
}

void Adam::update(Tensor& t, std::vector<double>& m, std::vector<double>& v) const {
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const double* g = t.has_grad() ? t.grad() : nullptr;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double gi = g ? g[i] : 0.0;
    m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
    v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    t[i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
  }
  t.zero_grad();
}

void Adam::step() {
  bool any_grad = false;
  for (const Slot& s : slots_)
    if (s.p->weights.has_grad() || s.p->bias.has_grad()) {
      any_grad = true;
      break;
    }
  if (!any_grad) {
    std::fprintf(stderr, "warning: optimizer step before any backward pass, skipping\n");
    return;
  }
  ++t_;
  for (Slot& s : slots_) {
    if (s.p->frozen) continue;
    update(s.p->weights, s.mw, s.vw);
    update(s.p->bias, s.mb, s.vb);
  }
}

}  // namespace aeda
