#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "aeda/data.hpp"
#include "aeda/tensor.hpp"

namespace aeda {

struct SynthConfig {
  std::size_t n_classes = 6;
  std::size_t shared_classes = 4;
  std::size_t latent_dim = 8;
  std::size_t n_f_source = 20;
  std::size_t n_f_target = 32;
  std::size_t samples_per_class = 300;
  std::size_t n_w = 10;
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;
};

// Generation internals kept around so tests can invert the construction.
struct SynthPair {
  WindowedDataset source;
  WindowedDataset target;
  std::vector<Tensor> prototypes;  // one latent_dim x n_w curve per class
  Tensor map_source;               // n_f_source x latent_dim
  Tensor map_target;               // n_f_target x latent_dim
};

// Two heterogeneous domains over a shared latent activity structure. Classes
// [0, shared_classes) appear in both domains and reuse the same prototypes;
// the rest appear only in the target domain. Each domain observes
// tanh(map . prototype) plus white noise.
SynthPair generate_synthetic(const SynthConfig& cfg);
std::pair<WindowedDataset, WindowedDataset> generate_domain_pair(const SynthConfig& cfg);

struct DiversityProfile {
  std::size_t unseen_features = 0;
  std::size_t unseen_classes = 0;
  bool high_sensor_diversity = false;  // more than 15 unseen sensors
  bool high_class_diversity = false;   // more than 3 unseen classes
};

DiversityProfile diversity_profile(const WindowedDataset& source, const WindowedDataset& target);

}  // namespace aeda
