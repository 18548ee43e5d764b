#include "aeda/engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <utility>

#include "aeda/checkpoint.hpp"
#include "aeda/errors.hpp"
#include "aeda/ops.hpp"
#include "aeda/optimizer.hpp"
#include "train_util.hpp"

namespace aeda {

namespace {

std::vector<LayerParams*> model_params(AutoEncoderModel& model) {
  auto out = model.encoder.params();
  for (LayerParams* p : model.decoder.params()) out.push_back(p);
  return out;
}

std::vector<double> channel_means(const Tensor& act) {
  const std::size_t n = act.dim(0), c = act.dim(1), h = act.dim(2), w = act.dim(3);
  std::vector<double> mean(c, 0.0);
  const std::size_t plane = h * w;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* base = act.data() + (i * c + ch) * plane;
      double s = 0.0;
      for (std::size_t k = 0; k < plane; ++k) s += base[k];
      mean[ch] += s;
    }
  const double scale = 1.0 / static_cast<double>(n * plane);
  for (double& m : mean) m *= scale;
  return mean;
}

std::vector<double> softmax_vec(const std::vector<double>& v) {
  Tensor t({v.size()});
  for (std::size_t i = 0; i < v.size(); ++i) t[i] = v[i];
  const Tensor s = softmax(t);
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = s[i];
  return out;
}

Tensor to_tensor(const std::vector<double>& v) {
  Tensor t({v.size()});
  for (std::size_t i = 0; i < v.size(); ++i) t[i] = v[i];
  return t;
}

// The activations whose channel distributions feed the alignment term, in
// reference-stats order.
struct KldTap {
  bool decoder = false;
  std::size_t layer_idx = 0;
};

std::vector<KldTap> kld_taps(bool include_decoder) {
  std::vector<KldTap> taps = {{false, AutoEncoderModel::kRelu1}, {false, AutoEncoderModel::kRelu2}};
  if (include_decoder) taps.push_back({true, AutoEncoderModel::kDecoderRelu2});
  return taps;
}

void check_reference_shapes(const ReferenceStats& ref, const TrainConfig& cfg) {
  const auto taps = kld_taps(cfg.kld_include_decoder);
  if (ref.dists.size() != taps.size())
    throw ShapeError("reference stats cover " + std::to_string(ref.dists.size()) +
                     " layers, expected " + std::to_string(taps.size()));
  const std::size_t expect[3] = {AutoEncoderModel::kChannels1, AutoEncoderModel::kChannels2,
                                 AutoEncoderModel::kChannels2};
  for (std::size_t i = 0; i < ref.dists.size(); ++i)
    if (ref.dists[i].size() != expect[i])
      throw ShapeError("reference distribution " + std::to_string(i) + " has " +
                       std::to_string(ref.dists[i].size()) + " channels, expected " +
                       std::to_string(expect[i]));
}

// Batch loss of one auto-encoder forward pass plus, when a reference is
// given, the alignment gradient injections for the following backward.
struct AeBatchLoss {
  double mse = 0.0;
  double kld_sum = 0.0;
  std::vector<GradInjection> encoder_inj;
  std::vector<GradInjection> decoder_inj;
};

AeBatchLoss ae_batch_loss(AutoEncoderModel& model, const Tensor& batch, const Tensor& recon,
                          const ReferenceStats* ref, const TrainConfig& cfg, bool want_grad) {
  AeBatchLoss out;
  out.mse = mse_loss(recon, batch);
  if (!ref || cfg.alpha == 0.0) return out;

  const auto taps = kld_taps(cfg.kld_include_decoder);
  for (std::size_t t = 0; t < taps.size(); ++t) {
    const Tensor& act = taps[t].decoder ? model.decoder.activation(taps[t].layer_idx)
                                        : model.encoder.activation(taps[t].layer_idx);
    const auto means = channel_means(act);
    const auto probs = softmax_vec(means);
    Tensor q = to_tensor(probs);
    const Tensor p = to_tensor(ref->dists[t]);
    out.kld_sum += kld(p, q);
    if (!want_grad) continue;

    kld_backward(p, q, cfg.alpha);
    const auto mean_grad = softmax_vjp(probs, q.grad_vec());
    const std::size_t n = act.dim(0), c = act.dim(1), plane = act.dim(2) * act.dim(3);
    const double scale = 1.0 / static_cast<double>(n * plane);
    Tensor inj(act.shape());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double g = mean_grad[ch] * scale;
        double* base = inj.data() + (i * c + ch) * plane;
        for (std::size_t k = 0; k < plane; ++k) base[k] = g;
      }
    auto& sink = taps[t].decoder ? out.decoder_inj : out.encoder_inj;
    sink.push_back({taps[t].layer_idx, std::move(inj)});
  }
  return out;
}

double holdout_ae_loss(AutoEncoderModel& model, const WindowedDataset& ds,
                       const std::vector<std::size_t>& hold, const ReferenceStats* ref,
                       const TrainConfig& cfg) {
  const Tensor batch = gather_windows(ds, hold);
  const Tensor z = model.encoder.forward(batch);
  const Tensor recon = model.decoder.forward(z);
  const auto loss = ae_batch_loss(model, batch, recon, ref, cfg, false);
  return loss.mse + cfg.alpha * loss.kld_sum;
}

AutoEncoderModel train_ae_impl(const WindowedDataset& ds, const ReferenceStats* ref,
                               const TrainConfig& cfg, const std::string& stage,
                               StageInfo* info) {
  validate_config(cfg);
  if (ds.size() == 0) throw DataError(stage + ": dataset is empty");

  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ref && !cfg.use_unlabeled_recon && !ds.labeled_mask[i]) continue;
    usable.push_back(i);
  }
  if (usable.empty()) throw DataError(stage + ": no usable windows");

  Rng init_rng = Rng::substream(cfg.seed, stage + "/init");
  AutoEncoderModel model = make_autoencoder(ds.spec.n_f(), ds.n_w, cfg.b, init_rng);
  if (ref) check_reference_shapes(*ref, cfg);

  Rng hold_rng = Rng::substream(cfg.seed, stage + "/holdout");
  const auto split = split_holdout(usable, hold_rng);

  Adam opt(AdamConfig{cfg.learning_rate, 0.9, 0.999, 1e-8});
  opt.add_params(model_params(model));

  EarlyStopper stopper;
  ParamSnapshot best = snapshot_params(model_params(model));
  if (!split.hold.empty()) stopper.improved(holdout_ae_loss(model, ds, split.hold, ref, cfg));

  Rng shuffle_rng = Rng::substream(cfg.seed, stage + "/shuffle");
  std::vector<std::size_t> order = split.train;
  std::size_t epochs_run = 0;
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    const auto batches = make_batches(order, cfg.batch_size);
    double epoch_loss = 0.0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const Tensor batch = gather_windows(ds, batches[bi]);
      const Tensor z = model.encoder.forward(batch);
      Tensor recon = model.decoder.forward(z);
      const auto loss = ae_batch_loss(model, batch, recon, ref, cfg, true);
      const double total = loss.mse + cfg.alpha * loss.kld_sum;
      if (!std::isfinite(total))
        throw DivergenceError(stage + ": training loss is not finite", epoch, bi);
      epoch_loss += total * static_cast<double>(batches[bi].size());

      mse_backward(recon, batch);
      const Tensor dz = model.decoder.backward(
          grad_from(recon), loss.decoder_inj.empty() ? nullptr : &loss.decoder_inj);
      model.encoder.backward(dz, loss.encoder_inj.empty() ? nullptr : &loss.encoder_inj);
      opt.step();
    }
    epochs_run = epoch + 1;

    const double monitored =
        split.hold.empty() ? epoch_loss / static_cast<double>(order.size())
                           : holdout_ae_loss(model, ds, split.hold, ref, cfg);
    if (!std::isfinite(monitored))
      throw DivergenceError(stage + ": held-out loss is not finite", epoch, batches.size());
    if (stopper.improved(monitored))
      best = snapshot_params(model_params(model));
    else if (stopper.bad >= cfg.patience)
      break;
  }
  restore_snapshot(model_params(model), best);
  if (info) {
    info->epochs = epochs_run;
    info->best_loss = std::isfinite(stopper.best) ? stopper.best : 0.0;
  }
  return model;
}

double holdout_ce_loss(ClassifierHead& head, const Tensor& features,
                       const std::vector<int>& labels, const std::vector<std::size_t>& hold,
                       const std::vector<int>* active) {
  const Tensor x = gather_rows(features, hold);
  std::vector<int> y(hold.size());
  for (std::size_t i = 0; i < hold.size(); ++i) y[i] = labels[hold[i]];
  const Tensor logits = head.stack.forward(x);
  return cross_entropy_batch(logits, y, active);
}

// Shared by stages 2 and 4: head training on frozen-encoder bottlenecks.
void train_head_impl(ClassifierHead& head, const Tensor& features, const std::vector<int>& labels,
                     const std::vector<int>* active, const TrainConfig& cfg,
                     const std::string& stage, StageInfo* info) {
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] >= 0) usable.push_back(i);
  if (usable.empty()) throw DataError(stage + ": no labeled rows");

  Rng hold_rng = Rng::substream(cfg.seed, stage + "/holdout");
  const auto split = split_holdout(usable, hold_rng);

  Adam opt(AdamConfig{cfg.learning_rate, 0.9, 0.999, 1e-8});
  opt.add_params(head.stack.params());

  EarlyStopper stopper;
  ParamSnapshot best = snapshot_params(head.stack.params());
  if (!split.hold.empty())
    stopper.improved(holdout_ce_loss(head, features, labels, split.hold, active));

  Rng shuffle_rng = Rng::substream(cfg.seed, stage + "/shuffle");
  std::vector<std::size_t> order = split.train;
  std::size_t epochs_run = 0;
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    const auto batches = make_batches(order, cfg.batch_size);
    double epoch_loss = 0.0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const Tensor x = gather_rows(features, batches[bi]);
      std::vector<int> y(batches[bi].size());
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = labels[batches[bi][i]];
      Tensor logits = head.stack.forward(x);
      const double loss = cross_entropy_batch(logits, y, active);
      if (!std::isfinite(loss))
        throw DivergenceError(stage + ": training loss is not finite", epoch, bi);
      epoch_loss += loss * static_cast<double>(y.size());
      cross_entropy_batch_backward(logits, y, 1.0, active);
      head.stack.backward(grad_from(logits));
      opt.step();
    }
    epochs_run = epoch + 1;

    const double monitored =
        split.hold.empty()
            ? epoch_loss / static_cast<double>(order.size())
            : holdout_ce_loss(head, features, labels, split.hold, active);
    if (!std::isfinite(monitored))
      throw DivergenceError(stage + ": held-out loss is not finite", epoch, batches.size());
    if (stopper.improved(monitored))
      best = snapshot_params(head.stack.params());
    else if (stopper.bad >= cfg.patience)
      break;
  }
  restore_snapshot(head.stack.params(), best);
  if (info) {
    info->epochs = epochs_run;
    info->best_loss = std::isfinite(stopper.best) ? stopper.best : 0.0;
  }
}

}  // namespace

void validate_config(const TrainConfig& cfg) {
  if (cfg.alpha < 0.0) throw DataError("alpha must be non-negative");
  if (cfg.batch_size == 0) throw DataError("batch_size must be positive");
  if (cfg.patience == 0) throw DataError("patience must be positive");
  if (cfg.learning_rate <= 0.0) throw DataError("learning_rate must be positive");
  if (cfg.b == 0) throw DataError("bottleneck size must be positive");
  if (cfg.c_l == 0) throw DataError("classifier depth must be positive");
}

AutoEncoderModel make_autoencoder(std::size_t n_f, std::size_t n_w, std::size_t b, Rng& rng) {
  if (n_f == 0 || n_w == 0) throw ShapeError("window dimensions must be positive");
  if (b == 0) throw ShapeError("bottleneck size must be positive");
  if (b >= n_f * n_w)
    throw ShapeError("bottleneck " + std::to_string(b) + " must be below the input dimension " +
                     std::to_string(n_f * n_w));

  const std::size_t h1 = ceil_div(n_f, 2), w1 = ceil_div(n_w, 2);
  const std::size_t h2 = ceil_div(h1, 2), w2 = w1;
  const std::size_t flat = AutoEncoderModel::kChannels2 * h2 * w2;

  AutoEncoderModel m;
  m.n_f = n_f;
  m.n_w = n_w;
  m.bottleneck = b;

  m.encoder.add(std::make_unique<Conv2dLayer>(AutoEncoderModel::kChannels1, 1, 3, 3, rng));
  m.encoder.add(std::make_unique<ReluLayer>());
  m.encoder.add(std::make_unique<MaxPoolLayer>(2, 2));
  m.encoder.add(std::make_unique<Conv2dLayer>(AutoEncoderModel::kChannels2,
                                              AutoEncoderModel::kChannels1, 2, 2, rng));
  m.encoder.add(std::make_unique<ReluLayer>());
  m.encoder.add(std::make_unique<MaxPoolLayer>(2, 1));
  m.encoder.add(std::make_unique<FlattenLayer>());
  m.encoder.add(std::make_unique<DenseLayer>(b, flat, rng));

  m.decoder.add(std::make_unique<DenseLayer>(flat, b, rng));
  m.decoder.add(std::make_unique<ReluLayer>());
  m.decoder.add(std::make_unique<ReshapeLayer>(AutoEncoderModel::kChannels2, h2, w2));
  m.decoder.add(std::make_unique<Conv2dLayer>(AutoEncoderModel::kChannels2,
                                              AutoEncoderModel::kChannels2, 2, 2, rng));
  m.decoder.add(std::make_unique<ReluLayer>());
  m.decoder.add(std::make_unique<UpsampleLayer>(2, 1));
  m.decoder.add(std::make_unique<CropToLayer>(h1, w1));
  m.decoder.add(std::make_unique<UpsampleLayer>(2, 2));
  m.decoder.add(std::make_unique<CropToLayer>(n_f, n_w));
  m.decoder.add(std::make_unique<Conv2dLayer>(1, AutoEncoderModel::kChannels2, 3, 3, rng));
  return m;
}

ClassifierHead make_classifier_head(std::size_t b, std::size_t n_out, std::size_t c_l, Rng& rng) {
  if (b == 0 || n_out == 0 || c_l == 0) throw ShapeError("classifier head dimensions must be positive");
  ClassifierHead head;
  head.in_width = b;
  head.n_out = n_out;
  for (std::size_t i = 0; i + 1 < c_l; ++i) {
    head.stack.add(std::make_unique<DenseLayer>(b, b, rng));
    head.stack.add(std::make_unique<ReluLayer>());
  }
  head.stack.add(std::make_unique<DenseLayer>(n_out, b, rng));
  return head;
}

ClassifierHead clone_head(const ClassifierHead& head) {
  auto& src = const_cast<ClassifierHead&>(head);
  const std::size_t c_l = (src.stack.size() + 1) / 2;
  Rng rng(0);
  ClassifierHead out = make_classifier_head(head.in_width, head.n_out, c_l, rng);
  const auto from = src.stack.params();
  const auto to = out.stack.params();
  for (std::size_t i = 0; i < from.size(); ++i) {
    to[i]->weights = from[i]->weights;
    to[i]->bias = from[i]->bias;
    to[i]->frozen = from[i]->frozen;
  }
  return out;
}

std::vector<std::string> union_vocabulary(const DomainSpec& source, const DomainSpec& target) {
  std::vector<std::string> out = source.label_vocabulary;
  for (const auto& name : target.label_vocabulary)
    if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
  return out;
}

std::vector<int> vocabulary_map(const std::vector<std::string>& vocab,
                                const std::vector<std::string>& union_vocab) {
  std::vector<int> map(vocab.size());
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    const auto it = std::find(union_vocab.begin(), union_vocab.end(), vocab[i]);
    if (it == union_vocab.end())
      throw DataError("label " + vocab[i] + " is outside the union vocabulary");
    map[i] = static_cast<int>(it - union_vocab.begin());
  }
  return map;
}

Tensor gather_windows(const WindowedDataset& ds, const std::vector<std::size_t>& indices) {
  const std::size_t n_f = ds.spec.n_f();
  Tensor batch({indices.size(), 1, n_f, ds.n_w});
  const std::size_t per = n_f * ds.n_w;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Tensor& w = ds.windows[indices[i]];
    if (w.shape() != Shape{n_f, ds.n_w})
      throw ShapeError("window does not match the dataset spec");
    for (std::size_t k = 0; k < per; ++k) batch[i * per + k] = w[k];
  }
  return batch;
}

void freeze_stack(LayerStack& stack) {
  for (LayerParams* p : stack.params()) p->frozen = true;
}

bool stack_frozen(const LayerStack& stack) {
  auto& mutable_stack = const_cast<LayerStack&>(stack);
  for (LayerParams* p : mutable_stack.params())
    if (!p->frozen) return false;
  return true;
}

AutoEncoderModel train_source_ae(const WindowedDataset& source, const TrainConfig& cfg,
                                 StageInfo* info) {
  return train_ae_impl(source, nullptr, cfg, "src_ae", info);
}

ClassifierHead train_source_classifier(AutoEncoderModel& model, const WindowedDataset& source,
                                       const std::vector<std::string>& union_vocab,
                                       const TrainConfig& cfg, StageInfo* info) {
  validate_config(cfg);
  if (source.size() == 0) throw DataError("src_clf: dataset is empty");
  if (union_vocab.empty()) throw DataError("src_clf: union vocabulary is empty");

  freeze_stack(model.encoder);
  const Tensor features = encode_windows(model, source.windows, cfg.batch_size);

  const auto vmap = vocabulary_map(source.spec.label_vocabulary, union_vocab);
  std::vector<int> labels(source.size());
  for (std::size_t i = 0; i < source.size(); ++i) {
    const int raw = source.labels[i];
    if (raw < 0 || static_cast<std::size_t>(raw) >= vmap.size())
      throw DataError("src_clf: label index outside the source vocabulary");
    labels[i] = vmap[static_cast<std::size_t>(raw)];
  }

  Rng init_rng = Rng::substream(cfg.seed, "src_clf/init");
  ClassifierHead head = make_classifier_head(model.bottleneck, union_vocab.size(), cfg.c_l, init_rng);

  std::vector<int> active = vmap;
  std::sort(active.begin(), active.end());
  train_head_impl(head, features, labels, &active, cfg, "src_clf", info);
  return head;
}

ReferenceStats compute_reference_stats(AutoEncoderModel& model, const WindowedDataset& source,
                                       const TrainConfig& cfg) {
  if (!stack_frozen(model.encoder))
    throw DataError("reference stats require a frozen source encoder");
  if (source.size() == 0) throw DataError("reference stats require a non-empty dataset");

  const auto taps = kld_taps(cfg.kld_include_decoder);
  std::vector<std::vector<double>> sums(taps.size());
  std::vector<std::size_t> counts(taps.size(), 0);

  std::vector<std::size_t> all(source.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  for (const auto& chunk : make_batches(all, cfg.batch_size)) {
    const Tensor batch = gather_windows(source, chunk);
    const Tensor z = model.encoder.forward(batch);
    if (cfg.kld_include_decoder) model.decoder.forward(z);
    for (std::size_t t = 0; t < taps.size(); ++t) {
      const Tensor& act = taps[t].decoder ? model.decoder.activation(taps[t].layer_idx)
                                          : model.encoder.activation(taps[t].layer_idx);
      const std::size_t n = act.dim(0), c = act.dim(1), plane = act.dim(2) * act.dim(3);
      if (sums[t].empty()) sums[t].assign(c, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double* base = act.data() + (i * c + ch) * plane;
          double s = 0.0;
          for (std::size_t k = 0; k < plane; ++k) s += base[k];
          sums[t][ch] += s;
        }
      counts[t] += n * plane;
    }
  }

  ReferenceStats ref;
  for (std::size_t t = 0; t < taps.size(); ++t) {
    std::vector<double> mean(sums[t].size());
    for (std::size_t ch = 0; ch < mean.size(); ++ch)
      mean[ch] = sums[t][ch] / static_cast<double>(counts[t]);
    ref.dists.push_back(softmax_vec(mean));
  }
  return ref;
}

AutoEncoderModel train_target_ae(const WindowedDataset& target, const ReferenceStats& ref,
                                 const TrainConfig& cfg, StageInfo* info) {
  return train_ae_impl(target, &ref, cfg, "tgt_ae", info);
}

void finetune_target(AutoEncoderModel& target_model, ClassifierHead& head,
                     const WindowedDataset& target, const std::vector<std::string>& union_vocab,
                     const TrainConfig& cfg, StageInfo* info) {
  validate_config(cfg);
  freeze_stack(target_model.encoder);

  std::vector<Tensor> labeled_windows;
  std::vector<int> labels;
  const auto vmap = vocabulary_map(target.spec.label_vocabulary, union_vocab);
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (!target.labeled_mask[i]) continue;
    const int raw = target.labels[i];
    if (raw < 0) continue;
    if (static_cast<std::size_t>(raw) >= vmap.size())
      throw DataError("finetune: label index outside the target vocabulary");
    labeled_windows.push_back(target.windows[i]);
    labels.push_back(vmap[static_cast<std::size_t>(raw)]);
  }
  if (labeled_windows.empty())
    throw DataError("finetune: no labeled target windows; increase the labeled fraction");

  const Tensor features = encode_windows(target_model, labeled_windows, cfg.batch_size);
  train_head_impl(head, features, labels, nullptr, cfg, "finetune", info);
}

Tensor encode_windows(AutoEncoderModel& model, const std::vector<Tensor>& windows,
                      std::size_t batch_size) {
  if (windows.empty()) throw DataError("encode: no windows");
  Tensor out({windows.size(), model.bottleneck});
  std::vector<std::size_t> all(windows.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const std::size_t per = model.n_f * model.n_w;
  for (const auto& chunk : make_batches(all, batch_size)) {
    Tensor batch({chunk.size(), 1, model.n_f, model.n_w});
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const Tensor& w = windows[chunk[i]];
      if (w.shape() != Shape{model.n_f, model.n_w})
        throw ShapeError("window shape does not match the model input shape");
      for (std::size_t k = 0; k < per; ++k) batch[i * per + k] = w[k];
    }
    const Tensor z = model.encoder.forward(batch);
    for (std::size_t i = 0; i < chunk.size(); ++i)
      for (std::size_t c = 0; c < model.bottleneck; ++c)
        out[chunk[i] * model.bottleneck + c] = z[i * model.bottleneck + c];
  }
  return out;
}

double reconstruction_mse(AutoEncoderModel& model, const Tensor& batch) {
  const Tensor z = model.encoder.forward(batch);
  const Tensor recon = model.decoder.forward(z);
  return mse_loss(recon, batch);
}

double alignment_backward(AutoEncoderModel& model, const Tensor& batch, const ReferenceStats& ref,
                          double alpha) {
  if (ref.dists.size() != 2)
    throw ShapeError("alignment_backward expects encoder-only reference stats");
  const Tensor z = model.encoder.forward(batch);
  TrainConfig cfg;
  cfg.alpha = alpha;
  cfg.kld_include_decoder = false;
  const auto loss = ae_batch_loss(model, batch, batch, &ref, cfg, true);
  const Tensor zero_dz(z.shape());
  model.encoder.backward(zero_dz, loss.encoder_inj.empty() ? nullptr : &loss.encoder_inj);
  return alpha * loss.kld_sum;
}

std::vector<double> batch_layer_klds(AutoEncoderModel& model, const ReferenceStats& ref) {
  std::vector<double> out;
  const bool with_decoder = ref.dists.size() > 2;
  const auto taps = kld_taps(with_decoder);
  for (std::size_t t = 0; t < taps.size(); ++t) {
    const Tensor& act = taps[t].decoder ? model.decoder.activation(taps[t].layer_idx)
                                        : model.encoder.activation(taps[t].layer_idx);
    const auto probs = softmax_vec(channel_means(act));
    out.push_back(kld(to_tensor(ref.dists[t]), to_tensor(probs)));
  }
  return out;
}

Prediction predict(AutoEncoderModel& model, ClassifierHead& head,
                   const std::vector<Tensor>& windows, std::size_t batch_size) {
  const Tensor features = encode_windows(model, windows, batch_size);
  Prediction pred;
  pred.scores = Tensor({windows.size(), head.n_out});
  pred.labels.resize(windows.size());

  std::vector<std::size_t> all(windows.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  for (const auto& chunk : make_batches(all, batch_size)) {
    const Tensor logits = head.stack.forward(gather_rows(features, chunk));
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      Tensor row({head.n_out});
      for (std::size_t c = 0; c < head.n_out; ++c) row[c] = logits[i * head.n_out + c];
      const Tensor probs = softmax(row);
      std::size_t best = 0;
      for (std::size_t c = 1; c < head.n_out; ++c)
        if (probs[c] > probs[best]) best = c;
      pred.labels[chunk[i]] = static_cast<int>(best);
      for (std::size_t c = 0; c < head.n_out; ++c)
        pred.scores[chunk[i] * head.n_out + c] = probs[c];
    }
  }
  return pred;
}

void save_model(const std::string& path, const AutoEncoderModel& model) {
  auto& m = const_cast<AutoEncoderModel&>(model);
  std::vector<const LayerParams*> params;
  for (LayerParams* p : model_params(m)) params.push_back(p);
  save_checkpoint(path, params);
}

void load_model(const std::string& path, AutoEncoderModel& model) {
  const auto loaded = load_checkpoint(path);
  const auto params = model_params(model);
  if (loaded.size() != params.size())
    throw DataError("checkpoint layer count does not match the model: " + path);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (loaded[i].kind != params[i]->kind || loaded[i].weights.shape() != params[i]->weights.shape())
      throw DataError("checkpoint layer " + std::to_string(i) + " does not match the model: " + path);
    params[i]->weights = loaded[i].weights;
    params[i]->bias = loaded[i].bias;
    params[i]->frozen = loaded[i].frozen;
  }
}

void save_head(const std::string& path, const ClassifierHead& head) {
  auto& h = const_cast<ClassifierHead&>(head);
  std::vector<const LayerParams*> params;
  for (LayerParams* p : h.stack.params()) params.push_back(p);
  save_checkpoint(path, params);
}

void load_head(const std::string& path, ClassifierHead& head) {
  const auto loaded = load_checkpoint(path);
  restore_params(head.stack, loaded);
}

}  // namespace aeda
