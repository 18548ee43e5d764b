#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aeda/data.hpp"
#include "aeda/layers.hpp"
#include "aeda/rng.hpp"
#include "aeda/tensor.hpp"

namespace aeda {

struct TrainConfig {
  double alpha = 1e-6;
  std::size_t batch_size = 128;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  std::size_t b = 64;
  std::size_t c_l = 2;
  // Reconstruction on unlabeled target windows as well (the default trains
  // on labeled windows only).
  bool use_unlabeled_recon = false;
  // Extends the alignment term to the decoder's hidden conv layer.
  bool kld_include_decoder = false;
};

void validate_config(const TrainConfig& cfg);

// Convolutional auto-encoder over one sensor window, 1 x n_f x n_w in and
// out, with a dense bottleneck of width b between the two stacks.
struct AutoEncoderModel {
  LayerStack encoder;
  LayerStack decoder;
  std::size_t n_f = 0;
  std::size_t n_w = 0;
  std::size_t bottleneck = 0;

  // Encoder layout: conv - relu - pool - conv - relu - pool - flatten - dense.
  static constexpr std::size_t kConv1 = 0;
  static constexpr std::size_t kRelu1 = 1;
  static constexpr std::size_t kConv2 = 3;
  static constexpr std::size_t kRelu2 = 4;
  // Decoder layout: dense - relu - reshape - conv - relu - up - crop - up -
  // crop - conv.
  static constexpr std::size_t kDecoderRelu2 = 4;

  static constexpr std::size_t kChannels1 = 16;
  static constexpr std::size_t kChannels2 = 32;
};

AutoEncoderModel make_autoencoder(std::size_t n_f, std::size_t n_w, std::size_t b, Rng& rng);

struct ClassifierHead {
  LayerStack stack;
  std::size_t in_width = 0;
  std::size_t n_out = 0;
};

ClassifierHead make_classifier_head(std::size_t b, std::size_t n_out, std::size_t c_l, Rng& rng);

// Deep copy, parameters and frozen flags included.
ClassifierHead clone_head(const ClassifierHead& head);

// Per-conv-layer channel distributions of the frozen source encoder: post-relu
// activations averaged over every window and spatial position, then
// softmax-normalized over channels.
struct ReferenceStats {
  std::vector<std::vector<double>> dists;
};

struct StageInfo {
  std::size_t epochs = 0;
  double best_loss = 0.0;
};

// Source vocabulary order first, then target-only classes in target order.
std::vector<std::string> union_vocabulary(const DomainSpec& source, const DomainSpec& target);
// For each index of `vocab`, its position in `union_vocab`.
std::vector<int> vocabulary_map(const std::vector<std::string>& vocab,
                                const std::vector<std::string>& union_vocab);

// Stacks dataset windows `indices` into an N x 1 x n_f x n_w batch.
Tensor gather_windows(const WindowedDataset& ds, const std::vector<std::size_t>& indices);

void freeze_stack(LayerStack& stack);
bool stack_frozen(const LayerStack& stack);

// Stage 1: reconstruction training on the source domain.
AutoEncoderModel train_source_ae(const WindowedDataset& source, const TrainConfig& cfg,
                                 StageInfo* info = nullptr);

// Stage 2: freezes the encoder, then trains a fresh head over the union
// vocabulary with cross-entropy restricted to the source classes; target-only
// logit rows keep their random initialization here.
ClassifierHead train_source_classifier(AutoEncoderModel& model, const WindowedDataset& source,
                                       const std::vector<std::string>& union_vocab,
                                       const TrainConfig& cfg, StageInfo* info = nullptr);

ReferenceStats compute_reference_stats(AutoEncoderModel& model, const WindowedDataset& source,
                                       const TrainConfig& cfg);

// Stage 3: target auto-encoder minimizing MSE plus alpha times the summed
// per-layer KLD between the source reference and the live batch distribution.
AutoEncoderModel train_target_ae(const WindowedDataset& target, const ReferenceStats& ref,
                                 const TrainConfig& cfg, StageInfo* info = nullptr);

// Stage 4: freezes the target encoder and fine-tunes the head on labeled
// target windows over the full union vocabulary.
void finetune_target(AutoEncoderModel& target_model, ClassifierHead& head,
                     const WindowedDataset& target, const std::vector<std::string>& union_vocab,
                     const TrainConfig& cfg, StageInfo* info = nullptr);

struct Prediction {
  std::vector<int> labels;  // indices into the union vocabulary
  Tensor scores;            // N x |union| softmax rows
};

Prediction predict(AutoEncoderModel& model, ClassifierHead& head,
                   const std::vector<Tensor>& windows, std::size_t batch_size);

// Frozen-encoder bottlenecks for the given windows, computed in chunks.
Tensor encode_windows(AutoEncoderModel& model, const std::vector<Tensor>& windows,
                      std::size_t batch_size);

// Loss pieces shared by training and holdout evaluation.
double reconstruction_mse(AutoEncoderModel& model, const Tensor& batch);
// The alignment term alone: alpha times the summed encoder-layer KLDs of
// `batch` against `ref`, with its gradient accumulated into the encoder
// parameters. Expects encoder-only reference stats.
double alignment_backward(AutoEncoderModel& model, const Tensor& batch, const ReferenceStats& ref,
                          double alpha);
// KLD of the live batch distributions against the reference, reusing the
// activations cached by the model's last encoder forward.
std::vector<double> batch_layer_klds(AutoEncoderModel& model, const ReferenceStats& ref);

void save_model(const std::string& path, const AutoEncoderModel& model);
void load_model(const std::string& path, AutoEncoderModel& model);
void save_head(const std::string& path, const ClassifierHead& head);
void load_head(const std::string& path, ClassifierHead& head);

}  // namespace aeda
