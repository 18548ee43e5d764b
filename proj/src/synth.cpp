#include "aeda/synth.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_set>

#include "aeda/errors.hpp"
#include "aeda/rng.hpp"

namespace aeda {

namespace {

constexpr double kTwoPi = 6.283185307179586;

void validate(const SynthConfig& cfg) {
  if (cfg.n_classes == 0 || cfg.shared_classes == 0 || cfg.latent_dim == 0 ||
      cfg.n_f_source == 0 || cfg.n_f_target == 0 || cfg.samples_per_class == 0 || cfg.n_w == 0)
    throw DataError("synthetic config requires positive counts");
  if (cfg.shared_classes > cfg.n_classes)
    throw DataError("shared_classes cannot exceed n_classes");
  if (cfg.noise_sigma < 0.0) throw DataError("noise_sigma must be non-negative");
  if (cfg.latent_dim > std::min(cfg.n_f_source, cfg.n_f_target))
    throw DataError("latent_dim exceeds the smaller feature dimension");
}

// Smooth class-distinct curve: each latent row sums three sinusoids with
// random amplitude, frequency, and phase.
Tensor make_prototype(std::size_t latent_dim, std::size_t n_w, Rng& rng) {
  Tensor z({latent_dim, n_w});
  for (std::size_t r = 0; r < latent_dim; ++r) {
    double amp[3], freq[3], phase[3];
    for (int k = 0; k < 3; ++k) {
      amp[k] = rng.uniform(0.5, 1.5);
      freq[k] = rng.uniform(0.5, 3.0);
      phase[k] = rng.uniform(0.0, kTwoPi);
    }
    for (std::size_t j = 0; j < n_w; ++j) {
      const double t = static_cast<double>(j) / static_cast<double>(n_w);
      double v = 0.0;
      for (int k = 0; k < 3; ++k) v += amp[k] * std::sin(kTwoPi * freq[k] * t + phase[k]);
      z[r * n_w + j] = v;
    }
  }
  return z;
}

Tensor make_map(std::size_t n_f, std::size_t latent_dim, Rng& rng) {
  Tensor m({n_f, latent_dim});
  const double scale = 1.0 / std::sqrt(static_cast<double>(latent_dim));
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = scale * rng.normal();
  return m;
}

Tensor observe(const Tensor& map, const Tensor& proto, double sigma, Rng& noise) {
  const std::size_t n_f = map.dim(0);
  const std::size_t latent_dim = map.dim(1);
  const std::size_t n_w = proto.dim(1);
  Tensor x({n_f, n_w});
  for (std::size_t f = 0; f < n_f; ++f)
    for (std::size_t j = 0; j < n_w; ++j) {
      double v = 0.0;
      for (std::size_t r = 0; r < latent_dim; ++r) v += map[f * latent_dim + r] * proto[r * n_w + j];
      x[f * n_w + j] = std::tanh(v) + (sigma > 0.0 ? sigma * noise.normal() : 0.0);
    }
  return x;
}

WindowedDataset make_domain(const SynthConfig& cfg, const std::string& name,
                            const std::string& feature_prefix, std::size_t n_f,
                            std::size_t n_domain_classes, const std::vector<Tensor>& prototypes,
                            const Tensor& map, Rng& noise) {
  WindowedDataset ds;
  ds.spec.name = name;
  ds.n_w = cfg.n_w;
  for (std::size_t f = 0; f < n_f; ++f)
    ds.spec.feature_names.push_back(feature_prefix + std::to_string(f));
  for (std::size_t c = 0; c < n_domain_classes; ++c)
    ds.spec.label_vocabulary.push_back("class" + std::to_string(c));
  for (std::size_t c = 0; c < n_domain_classes; ++c)
    for (std::size_t s = 0; s < cfg.samples_per_class; ++s) {
      ds.windows.push_back(observe(map, prototypes[c], cfg.noise_sigma, noise));
      ds.labels.push_back(static_cast<int>(c));
      ds.labeled_mask.push_back(1);
    }
  return ds;
}

}  // namespace

SynthPair generate_synthetic(const SynthConfig& cfg) {
  validate(cfg);
  SynthPair out;

  Rng proto_rng = Rng::substream(cfg.seed, "synth/prototypes");
  for (std::size_t c = 0; c < cfg.n_classes; ++c)
    out.prototypes.push_back(make_prototype(cfg.latent_dim, cfg.n_w, proto_rng));

  Rng map_src_rng = Rng::substream(cfg.seed, "synth/map/source");
  Rng map_tgt_rng = Rng::substream(cfg.seed, "synth/map/target");
  out.map_source = make_map(cfg.n_f_source, cfg.latent_dim, map_src_rng);
  out.map_target = make_map(cfg.n_f_target, cfg.latent_dim, map_tgt_rng);

  Rng noise_src = Rng::substream(cfg.seed, "synth/noise/source");
  Rng noise_tgt = Rng::substream(cfg.seed, "synth/noise/target");
  out.source = make_domain(cfg, "synth-source", "src", cfg.n_f_source, cfg.shared_classes,
                           out.prototypes, out.map_source, noise_src);
  out.target = make_domain(cfg, "synth-target", "tgt", cfg.n_f_target, cfg.n_classes,
                           out.prototypes, out.map_target, noise_tgt);
  return out;
}

std::pair<WindowedDataset, WindowedDataset> generate_domain_pair(const SynthConfig& cfg) {
  auto pair = generate_synthetic(cfg);
  return {std::move(pair.source), std::move(pair.target)};
}

DiversityProfile diversity_profile(const WindowedDataset& source, const WindowedDataset& target) {
  DiversityProfile out;
  const std::unordered_set<std::string> src_features(source.spec.feature_names.begin(),
                                                     source.spec.feature_names.end());
  for (const auto& f : target.spec.feature_names)
    if (!src_features.count(f)) ++out.unseen_features;
  const std::unordered_set<std::string> src_labels(source.spec.label_vocabulary.begin(),
                                                   source.spec.label_vocabulary.end());
  for (const auto& c : target.spec.label_vocabulary)
    if (!src_labels.count(c)) ++out.unseen_classes;
  out.high_sensor_diversity = out.unseen_features > 15;
  out.high_class_diversity = out.unseen_classes > 3;
  return out;
}

}  // namespace aeda
