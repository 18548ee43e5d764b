#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "aeda/engine.hpp"

namespace aeda {

struct DannConfig {
  TrainConfig base;
  double lambda = 1.0;
  std::size_t f_dim = 32;
};

void validate_dann_config(const DannConfig& cfg);

// Adversarial head shared by both domains: the frozen encoders' bottlenecks
// feed one feature extractor, whose output goes to a label predictor and,
// through a gradient-reversal junction, to a source-vs-target classifier.
struct DannNetwork {
  LayerStack feature_extractor;  // dense b -> f_dim, relu
  LayerStack label_predictor;    // dense f_dim -> |union labels|
  LayerStack domain_classifier;  // reversal, dense f_dim -> 2
  std::size_t in_width = 0;
  std::size_t f_dim = 0;
  std::size_t n_labels = 0;
  double lambda = 1.0;
};

DannNetwork make_dann_network(std::size_t b, std::size_t n_labels, const DannConfig& cfg,
                              Rng& rng);

struct DannInfo {
  std::size_t epochs = 0;
  // Label cross-entropy on the held-out rows at the restored best epoch.
  double best_loss = 0.0;
  // Mean of the per-domain held-out classification accuracies, so a constant
  // classifier scores 0.5 regardless of domain sizes.
  double holdout_domain_accuracy = 0.0;
};

// Trains the adversarial head on frozen-encoder bottlenecks: every source
// window and every labeled target window, each routed through its own
// domain's encoder. Label cross-entropy covers all rows; domain cross-entropy
// (0 = source, 1 = target) reaches the feature extractor through the
// reversal. Batches draw half from each domain.
DannNetwork train_aedann(AutoEncoderModel& src_model, AutoEncoderModel& tgt_model,
                         const WindowedDataset& source, const WindowedDataset& target,
                         const std::vector<std::string>& union_vocab, const DannConfig& cfg,
                         DannInfo* info = nullptr);

Prediction predict_aedann(DannNetwork& net, AutoEncoderModel& tgt_model,
                          const std::vector<Tensor>& windows, std::size_t batch_size);

// Balanced domain-classification accuracy on raw bottleneck rows.
double domain_accuracy(DannNetwork& net, const Tensor& src_features, const Tensor& tgt_features);

void save_dann(const std::string& path, const DannNetwork& net);
void load_dann(const std::string& path, DannNetwork& net);

}  // namespace aeda
