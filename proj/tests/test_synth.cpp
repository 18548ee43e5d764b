#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstddef>
#include <vector>

#include "aeda/data.hpp"
#include "aeda/errors.hpp"
#include "aeda/synth.hpp"
#include "aeda/tensor.hpp"

using namespace aeda;

namespace {

// Least-squares inversion of the generative map: given x = tanh(M z) + noise,
// recover z column-by-column from atanh(x) via the normal equations.
struct LatentRecovery {
  std::vector<double> mtm;  // latent_dim x latent_dim
  const Tensor* map = nullptr;
  std::size_t latent_dim = 0;

  explicit LatentRecovery(const Tensor& m) : map(&m), latent_dim(m.dim(1)) {
    const std::size_t n_f = m.dim(0);
    mtm.assign(latent_dim * latent_dim, 0.0);
    for (std::size_t i = 0; i < latent_dim; ++i)
      for (std::size_t j = 0; j < latent_dim; ++j) {
        double s = 0.0;
        for (std::size_t f = 0; f < n_f; ++f) s += m[f * latent_dim + i] * m[f * latent_dim + j];
        mtm[i * latent_dim + j] = s;
      }
  }

  std::vector<double> solve(std::vector<double> rhs) const {
    const std::size_t n = latent_dim;
    std::vector<double> a = mtm;
    for (std::size_t col = 0; col < n; ++col) {
      std::size_t pivot = col;
      for (std::size_t r = col + 1; r < n; ++r)
        if (std::fabs(a[r * n + col]) > std::fabs(a[pivot * n + col])) pivot = r;
      for (std::size_t c = 0; c < n; ++c) std::swap(a[col * n + c], a[pivot * n + c]);
      std::swap(rhs[col], rhs[pivot]);
      for (std::size_t r = col + 1; r < n; ++r) {
        const double factor = a[r * n + col] / a[col * n + col];
        for (std::size_t c = col; c < n; ++c) a[r * n + c] -= factor * a[col * n + c];
        rhs[r] -= factor * rhs[col];
      }
    }
    std::vector<double> z(n);
    for (std::size_t r = n; r-- > 0;) {
      double s = rhs[r];
      for (std::size_t c = r + 1; c < n; ++c) s -= a[r * n + c] * z[c];
      z[r] = s / a[r * n + r];
    }
    return z;
  }

  Tensor recover(const Tensor& window) const {
    const std::size_t n_f = window.dim(0);
    const std::size_t n_w = window.dim(1);
    Tensor z({latent_dim, n_w});
    for (std::size_t j = 0; j < n_w; ++j) {
      std::vector<double> rhs(latent_dim, 0.0);
      for (std::size_t r = 0; r < latent_dim; ++r) {
        double s = 0.0;
        for (std::size_t f = 0; f < n_f; ++f) {
          const double clamped = std::clamp(window[f * n_w + j], -1.0 + 1e-9, 1.0 - 1e-9);
          s += (*map)[f * latent_dim + r] * std::atanh(clamped);
        }
        rhs[r] = s;
      }
      const auto col = solve(std::move(rhs));
      for (std::size_t r = 0; r < latent_dim; ++r) z[r * n_w + j] = col[r];
    }
    return z;
  }
};

double distance2(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

double pearson(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.size();
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double num = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    num += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  return num / std::sqrt(va * vb);
}

std::vector<Tensor> class_centroids(const std::vector<Tensor>& latents,
                                    const std::vector<int>& labels, std::size_t n_classes) {
  std::vector<Tensor> centroids;
  std::vector<std::size_t> counts(n_classes, 0);
  for (std::size_t c = 0; c < n_classes; ++c) centroids.emplace_back(latents[0].shape());
  for (std::size_t i = 0; i < latents.size(); ++i) {
    auto& cen = centroids[static_cast<std::size_t>(labels[i])];
    for (std::size_t k = 0; k < cen.size(); ++k) cen[k] += latents[i][k];
    ++counts[static_cast<std::size_t>(labels[i])];
  }
  for (std::size_t c = 0; c < n_classes; ++c)
    for (std::size_t k = 0; k < centroids[c].size(); ++k)
      centroids[c][k] /= static_cast<double>(counts[c]);
  return centroids;
}

}  // namespace

TEST_CASE("latent probe transfers from source to target at sigma 0.1") {
  SynthConfig cfg;
  cfg.seed = 42;
  const auto pair = generate_synthetic(cfg);

  LatentRecovery src_inv(pair.map_source);
  std::vector<Tensor> src_latents;
  for (const auto& w : pair.source.windows) src_latents.push_back(src_inv.recover(w));
  const auto centroids = class_centroids(src_latents, pair.source.labels, cfg.shared_classes);

  LatentRecovery tgt_inv(pair.map_target);
  std::size_t correct = 0, total = 0;
  for (std::size_t i = 0; i < pair.target.size(); ++i) {
    if (static_cast<std::size_t>(pair.target.labels[i]) >= cfg.shared_classes) continue;
    const Tensor z = tgt_inv.recover(pair.target.windows[i]);
    std::size_t best = 0;
    double best_d = distance2(z, centroids[0]);
    for (std::size_t c = 1; c < centroids.size(); ++c) {
      const double d = distance2(z, centroids[c]);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    correct += best == static_cast<std::size_t>(pair.target.labels[i]) ? 1 : 0;
    ++total;
  }
  REQUIRE(total == cfg.shared_classes * cfg.samples_per_class);
  const double accuracy = static_cast<double>(correct) / static_cast<double>(total);
  INFO("cross-domain probe accuracy ", accuracy);
  CHECK(accuracy > 0.9);
}

TEST_CASE("recovered shared-class centroids correlate across domains at sigma 0") {
  SynthConfig cfg;
  cfg.noise_sigma = 0.0;
  cfg.samples_per_class = 3;
  cfg.seed = 5;
  const auto pair = generate_synthetic(cfg);

  LatentRecovery src_inv(pair.map_source);
  LatentRecovery tgt_inv(pair.map_target);
  std::vector<Tensor> src_latents, tgt_latents;
  std::vector<int> tgt_shared_labels;
  for (const auto& w : pair.source.windows) src_latents.push_back(src_inv.recover(w));
  for (std::size_t i = 0; i < pair.target.size(); ++i) {
    if (static_cast<std::size_t>(pair.target.labels[i]) >= cfg.shared_classes) continue;
    tgt_latents.push_back(tgt_inv.recover(pair.target.windows[i]));
    tgt_shared_labels.push_back(pair.target.labels[i]);
  }
  const auto src_cen = class_centroids(src_latents, pair.source.labels, cfg.shared_classes);
  const auto tgt_cen = class_centroids(tgt_latents, tgt_shared_labels, cfg.shared_classes);
  for (std::size_t c = 0; c < cfg.shared_classes; ++c) {
    CHECK(pearson(src_cen[c], tgt_cen[c]) > 0.99);
    CHECK(pearson(src_cen[c], pair.prototypes[c]) > 0.99);
  }
}

TEST_CASE("noiseless windows of one class are identical and classes separate") {
  SynthConfig cfg;
  cfg.noise_sigma = 0.0;
  cfg.samples_per_class = 2;
  cfg.seed = 9;
  const auto pair = generate_synthetic(cfg);

  for (const auto* ds : {&pair.source, &pair.target}) {
    for (std::size_t i = 0; i < ds->size(); ++i)
      for (std::size_t j = i + 1; j < ds->size(); ++j) {
        if (ds->labels[i] == ds->labels[j]) {
          CHECK(distance2(ds->windows[i], ds->windows[j]) == 0.0);
        } else {
          CHECK(distance2(ds->windows[i], ds->windows[j]) > 0.0);
        }
      }
  }
}

TEST_CASE("generation is deterministic per seed") {
  SynthConfig cfg;
  cfg.samples_per_class = 5;
  cfg.seed = 31;
  const auto a = generate_domain_pair(cfg);
  const auto b = generate_domain_pair(cfg);
  CHECK(dataset_fingerprint(a.first) == dataset_fingerprint(b.first));
  CHECK(dataset_fingerprint(a.second) == dataset_fingerprint(b.second));
  for (std::size_t k = 0; k < a.first.windows[0].size(); ++k)
    CHECK(a.first.windows[0][k] == b.first.windows[0][k]);

  cfg.seed = 32;
  const auto c = generate_domain_pair(cfg);
  CHECK(dataset_fingerprint(a.first) != dataset_fingerprint(c.first));
}

TEST_CASE("domain sizes and vocabularies follow the config") {
  SynthConfig cfg;
  cfg.samples_per_class = 4;
  const auto pair = generate_domain_pair(cfg);
  CHECK(pair.first.size() == cfg.shared_classes * cfg.samples_per_class);
  CHECK(pair.second.size() == cfg.n_classes * cfg.samples_per_class);
  CHECK(pair.first.spec.label_vocabulary.size() == cfg.shared_classes);
  CHECK(pair.second.spec.label_vocabulary.size() == cfg.n_classes);
  CHECK(pair.first.spec.n_f() == cfg.n_f_source);
  CHECK(pair.second.spec.n_f() == cfg.n_f_target);
  CHECK(pair.first.windows[0].shape() == Shape{cfg.n_f_source, cfg.n_w});

  SynthConfig all_shared = cfg;
  all_shared.shared_classes = all_shared.n_classes;
  const auto same = generate_domain_pair(all_shared);
  CHECK(same.first.spec.label_vocabulary == same.second.spec.label_vocabulary);
}

TEST_CASE("rank-deficient latent maps are rejected") {
  SynthConfig cfg;
  cfg.latent_dim = 40;
  CHECK_THROWS_AS(generate_synthetic(cfg), DataError);
  SynthConfig zero;
  zero.samples_per_class = 0;
  CHECK_THROWS_AS(generate_synthetic(zero), DataError);
  SynthConfig bad_shared;
  bad_shared.shared_classes = 9;
  CHECK_THROWS_AS(generate_synthetic(bad_shared), DataError);
}

TEST_CASE("diversity profile counts target-only features and classes") {
  SynthConfig cfg;
  cfg.samples_per_class = 2;
  const auto pair = generate_domain_pair(cfg);
  const auto prof = diversity_profile(pair.first, pair.second);
  CHECK(prof.unseen_features == cfg.n_f_target);
  CHECK(prof.unseen_classes == cfg.n_classes - cfg.shared_classes);
  CHECK(prof.high_sensor_diversity);
  CHECK_FALSE(prof.high_class_diversity);  // 2 unseen classes is not > 3

  SynthConfig wide = cfg;
  wide.shared_classes = 2;
  const auto wide_pair = generate_domain_pair(wide);
  CHECK(diversity_profile(wide_pair.first, wide_pair.second).high_class_diversity);

  const auto self = diversity_profile(pair.first, pair.first);
  CHECK(self.unseen_features == 0);
  CHECK(self.unseen_classes == 0);
  CHECK_FALSE(self.high_sensor_diversity);
  CHECK_FALSE(self.high_class_diversity);
}

TEST_CASE("diversity profile applies the sensor and class thresholds") {
  WindowedDataset src, tgt;
  for (int i = 0; i < 10; ++i) src.spec.feature_names.push_back("A" + std::to_string(i));
  tgt.spec.feature_names = src.spec.feature_names;
  for (int i = 0; i < 21; ++i) tgt.spec.feature_names.push_back("B" + std::to_string(i));
  for (int i = 0; i < 6; ++i) src.spec.label_vocabulary.push_back("a" + std::to_string(i));
  tgt.spec.label_vocabulary = {"a0", "a1"};
  for (int i = 0; i < 4; ++i) tgt.spec.label_vocabulary.push_back("n" + std::to_string(i));

  const auto prof = diversity_profile(src, tgt);
  CHECK(prof.unseen_features == 21);
  CHECK(prof.unseen_classes == 4);
  CHECK(prof.high_sensor_diversity);
  CHECK(prof.high_class_diversity);

  WindowedDataset border_src = src, border_tgt = src;
  for (int i = 0; i < 15; ++i) border_tgt.spec.feature_names.push_back("C" + std::to_string(i));
  for (int i = 0; i < 3; ++i) border_tgt.spec.label_vocabulary.push_back("m" + std::to_string(i));
  const auto border = diversity_profile(border_src, border_tgt);
  CHECK(border.unseen_features == 15);
  CHECK_FALSE(border.high_sensor_diversity);  // threshold is strictly more than 15
  CHECK(border.unseen_classes == 3);
  CHECK_FALSE(border.high_class_diversity);
}
