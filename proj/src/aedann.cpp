#include "aeda/aedann.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <utility>

#include "aeda/checkpoint.hpp"
#include "aeda/errors.hpp"
#include "aeda/ops.hpp"
#include "aeda/optimizer.hpp"
#include "train_util.hpp"

namespace aeda {

namespace {

std::vector<LayerParams*> dann_params(DannNetwork& net) {
  auto out = net.feature_extractor.params();
  for (LayerParams* p : net.label_predictor.params()) out.push_back(p);
  for (LayerParams* p : net.domain_classifier.params()) out.push_back(p);
  return out;
}

// Feature rows and per-row union labels for one domain.
struct DomainRows {
  Tensor features;
  std::vector<int> labels;
};

double holdout_label_loss(DannNetwork& net, const DomainRows& src, const DomainRows& tgt,
                          const std::vector<std::size_t>& src_hold,
                          const std::vector<std::size_t>& tgt_hold) {
  const std::size_t n = src_hold.size() + tgt_hold.size();
  Tensor x({n, net.in_width});
  std::vector<int> y(n);
  std::size_t r = 0;
  for (std::size_t i : src_hold) {
    for (std::size_t c = 0; c < net.in_width; ++c)
      x[r * net.in_width + c] = src.features[i * net.in_width + c];
    y[r++] = src.labels[i];
  }
  for (std::size_t i : tgt_hold) {
    for (std::size_t c = 0; c < net.in_width; ++c)
      x[r * net.in_width + c] = tgt.features[i * net.in_width + c];
    y[r++] = tgt.labels[i];
  }
  const Tensor feats = net.feature_extractor.forward(x);
  const Tensor logits = net.label_predictor.forward(feats);
  return cross_entropy_batch(logits, y);
}

}  // namespace

void validate_dann_config(const DannConfig& cfg) {
  validate_config(cfg.base);
  if (cfg.lambda < 0.0) throw DataError("lambda must be non-negative");
  if (cfg.f_dim == 0) throw DataError("feature dimension must be positive");
}

DannNetwork make_dann_network(std::size_t b, std::size_t n_labels, const DannConfig& cfg,
                              Rng& rng) {
  if (b == 0 || n_labels == 0) throw ShapeError("network dimensions must be positive");
  validate_dann_config(cfg);

  DannNetwork net;
  net.in_width = b;
  net.f_dim = cfg.f_dim;
  net.n_labels = n_labels;
  net.lambda = cfg.lambda;
  net.feature_extractor.add(std::make_unique<DenseLayer>(cfg.f_dim, b, rng));
  net.feature_extractor.add(std::make_unique<ReluLayer>());
  net.label_predictor.add(std::make_unique<DenseLayer>(n_labels, cfg.f_dim, rng));
  net.domain_classifier.add(std::make_unique<GradReversalLayer>(cfg.lambda));
  net.domain_classifier.add(std::make_unique<DenseLayer>(2, cfg.f_dim, rng));
  return net;
}

DannNetwork train_aedann(AutoEncoderModel& src_model, AutoEncoderModel& tgt_model,
                         const WindowedDataset& source, const WindowedDataset& target,
                         const std::vector<std::string>& union_vocab, const DannConfig& cfg,
                         DannInfo* info) {
  validate_dann_config(cfg);
  if (src_model.bottleneck != tgt_model.bottleneck)
    throw ShapeError("bottleneck sizes differ: source " + std::to_string(src_model.bottleneck) +
                     ", target " + std::to_string(tgt_model.bottleneck));
  if (!stack_frozen(src_model.encoder) || !stack_frozen(tgt_model.encoder))
    throw DataError("aedann: both encoders must be frozen");
  if (source.size() == 0) throw DataError("aedann: source dataset is empty");

  const TrainConfig& base = cfg.base;
  const auto src_map = vocabulary_map(source.spec.label_vocabulary, union_vocab);
  const auto tgt_map = vocabulary_map(target.spec.label_vocabulary, union_vocab);

  DomainRows src;
  src.features = encode_windows(src_model, source.windows, base.batch_size);
  src.labels.resize(source.size());
  for (std::size_t i = 0; i < source.size(); ++i) {
    const int raw = source.labels[i];
    if (raw < 0 || static_cast<std::size_t>(raw) >= src_map.size())
      throw DataError("aedann: label index outside the source vocabulary");
    src.labels[i] = src_map[static_cast<std::size_t>(raw)];
  }

  std::vector<Tensor> tgt_windows;
  DomainRows tgt;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (!target.labeled_mask[i]) continue;
    const int raw = target.labels[i];
    if (raw < 0) continue;
    if (static_cast<std::size_t>(raw) >= tgt_map.size())
      throw DataError("aedann: label index outside the target vocabulary");
    tgt_windows.push_back(target.windows[i]);
    tgt.labels.push_back(tgt_map[static_cast<std::size_t>(raw)]);
  }
  if (tgt_windows.empty())
    throw DataError("aedann: no labeled target windows; increase the labeled fraction");
  tgt.features = encode_windows(tgt_model, tgt_windows, base.batch_size);

  Rng init_rng = Rng::substream(base.seed, "aedann/init");
  DannNetwork net = make_dann_network(src_model.bottleneck, union_vocab.size(), cfg, init_rng);

  std::vector<std::size_t> src_idx(src.labels.size()), tgt_idx(tgt.labels.size());
  for (std::size_t i = 0; i < src_idx.size(); ++i) src_idx[i] = i;
  for (std::size_t i = 0; i < tgt_idx.size(); ++i) tgt_idx[i] = i;
  Rng hold_rng = Rng::substream(base.seed, "aedann/holdout");
  const auto src_split = split_holdout(src_idx, hold_rng);
  const auto tgt_split = split_holdout(tgt_idx, hold_rng);
  const bool have_hold = !src_split.hold.empty() || !tgt_split.hold.empty();

  Adam opt(AdamConfig{base.learning_rate, 0.9, 0.999, 1e-8});
  opt.add_params(dann_params(net));

  EarlyStopper stopper;
  ParamSnapshot best = snapshot_params(dann_params(net));
  if (have_hold)
    stopper.improved(holdout_label_loss(net, src, tgt, src_split.hold, tgt_split.hold));

  const std::size_t half = std::max<std::size_t>(1, base.batch_size / 2);
  const std::size_t n_src = src_split.train.size(), n_tgt = tgt_split.train.size();
  const std::size_t n_batches = ceil_div(std::max(n_src, n_tgt), half);

  Rng shuffle_rng = Rng::substream(base.seed, "aedann/shuffle");
  std::vector<std::size_t> src_order = src_split.train;
  std::vector<std::size_t> tgt_order = tgt_split.train;
  std::size_t epochs_run = 0;
  for (std::size_t epoch = 0; epoch < base.max_epochs; ++epoch) {
    shuffle_rng.shuffle(src_order);
    shuffle_rng.shuffle(tgt_order);
    double epoch_loss = 0.0;
    for (std::size_t bi = 0; bi < n_batches; ++bi) {
      const std::size_t rows = 2 * half;
      Tensor x({rows, net.in_width});
      std::vector<int> y_label(rows);
      std::vector<int> y_domain(rows);
      for (std::size_t j = 0; j < half; ++j) {
        const std::size_t si = src_order[(bi * half + j) % n_src];
        const std::size_t ti = tgt_order[(bi * half + j) % n_tgt];
        for (std::size_t c = 0; c < net.in_width; ++c) {
          x[j * net.in_width + c] = src.features[si * net.in_width + c];
          x[(half + j) * net.in_width + c] = tgt.features[ti * net.in_width + c];
        }
        y_label[j] = src.labels[si];
        y_label[half + j] = tgt.labels[ti];
        y_domain[j] = 0;
        y_domain[half + j] = 1;
      }

      const Tensor feats = net.feature_extractor.forward(x);
      Tensor label_logits = net.label_predictor.forward(feats);
      Tensor domain_logits = net.domain_classifier.forward(feats);
      const double loss =
          cross_entropy_batch(label_logits, y_label) + cross_entropy_batch(domain_logits, y_domain);
      if (!std::isfinite(loss))
        throw DivergenceError("aedann: training loss is not finite", epoch, bi);
      epoch_loss += loss * static_cast<double>(rows);

      cross_entropy_batch_backward(label_logits, y_label);
      Tensor dfeat = net.label_predictor.backward(grad_from(label_logits));
      cross_entropy_batch_backward(domain_logits, y_domain);
      const Tensor dfeat_domain = net.domain_classifier.backward(grad_from(domain_logits));
      for (std::size_t k = 0; k < dfeat.size(); ++k) dfeat[k] += dfeat_domain[k];
      net.feature_extractor.backward(dfeat);
      opt.step();
    }
    epochs_run = epoch + 1;

    const double monitored =
        have_hold ? holdout_label_loss(net, src, tgt, src_split.hold, tgt_split.hold)
                  : epoch_loss / static_cast<double>(n_batches * 2 * half);
    if (!std::isfinite(monitored))
      throw DivergenceError("aedann: held-out loss is not finite", epoch, n_batches);
    if (stopper.improved(monitored))
      best = snapshot_params(dann_params(net));
    else if (stopper.bad >= base.patience)
      break;
  }
  restore_snapshot(dann_params(net), best);

  if (info) {
    info->epochs = epochs_run;
    info->best_loss = std::isfinite(stopper.best) ? stopper.best : 0.0;
    const auto& src_rows = src_split.hold.empty() ? src_idx : src_split.hold;
    const auto& tgt_rows = tgt_split.hold.empty() ? tgt_idx : tgt_split.hold;
    info->holdout_domain_accuracy = domain_accuracy(net, gather_rows(src.features, src_rows),
                                                    gather_rows(tgt.features, tgt_rows));
  }
  return net;
}

Prediction predict_aedann(DannNetwork& net, AutoEncoderModel& tgt_model,
                          const std::vector<Tensor>& windows, std::size_t batch_size) {
  const Tensor features = encode_windows(tgt_model, windows, batch_size);
  Prediction pred;
  pred.scores = Tensor({windows.size(), net.n_labels});
  pred.labels.resize(windows.size());

  std::vector<std::size_t> all(windows.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  for (const auto& chunk : make_batches(all, batch_size)) {
    const Tensor feats = net.feature_extractor.forward(gather_rows(features, chunk));
    const Tensor logits = net.label_predictor.forward(feats);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      Tensor row({net.n_labels});
      for (std::size_t c = 0; c < net.n_labels; ++c) row[c] = logits[i * net.n_labels + c];
      const Tensor probs = softmax(row);
      std::size_t best = 0;
      for (std::size_t c = 1; c < net.n_labels; ++c)
        if (probs[c] > probs[best]) best = c;
      pred.labels[chunk[i]] = static_cast<int>(best);
      for (std::size_t c = 0; c < net.n_labels; ++c)
        pred.scores[chunk[i] * net.n_labels + c] = probs[c];
    }
  }
  return pred;
}

double domain_accuracy(DannNetwork& net, const Tensor& src_features, const Tensor& tgt_features) {
  const auto side = [&](const Tensor& rows, int want) {
    if (rows.dim(0) == 0) throw DataError("domain_accuracy: empty feature rows");
    const Tensor feats = net.feature_extractor.forward(rows);
    const Tensor logits = net.domain_classifier.forward(feats);
    std::size_t hit = 0;
    const std::size_t n = logits.dim(0);
    for (std::size_t i = 0; i < n; ++i) {
      const int got = logits[i * 2 + 1] > logits[i * 2] ? 1 : 0;
      if (got == want) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(n);
  };
  return 0.5 * (side(src_features, 0) + side(tgt_features, 1));
}

void save_dann(const std::string& path, const DannNetwork& net) {
  auto& n = const_cast<DannNetwork&>(net);
  std::vector<const LayerParams*> params;
  for (LayerParams* p : dann_params(n)) params.push_back(p);
  save_checkpoint(path, params);
}

void load_dann(const std::string& path, DannNetwork& net) {
  const auto loaded = load_checkpoint(path);
  const auto params = dann_params(net);
  if (loaded.size() != params.size())
    throw DataError("checkpoint layer count does not match the network: " + path);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (loaded[i].kind != params[i]->kind ||
        loaded[i].weights.shape() != params[i]->weights.shape())
      throw DataError("checkpoint layer " + std::to_string(i) +
                      " does not match the network: " + path);
    params[i]->weights = loaded[i].weights;
    params[i]->bias = loaded[i].bias;
    params[i]->frozen = loaded[i].frozen;
  }
}

}  // namespace aeda
