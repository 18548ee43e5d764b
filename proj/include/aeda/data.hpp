#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "aeda/tensor.hpp"

namespace aeda {

struct EventRecord {
  std::int64_t timestamp_us = 0;
  std::string sensor_id;
  double value = 0.0;
  std::string activity;  // empty when the event lies outside any activity span
};

struct DomainSpec {
  std::string name;
  std::vector<std::string> feature_names;
  std::vector<std::string> label_vocabulary;
  std::size_t n_f() const { return feature_names.size(); }
  // Index into label_vocabulary, -1 when absent.
  int label_index(const std::string& label) const;
  int feature_index(const std::string& feature) const;
};

struct WindowedDataset {
  DomainSpec spec;
  std::size_t n_w = 0;
  std::vector<Tensor> windows;  // each n_f x n_w
  std::vector<int> labels;
  std::vector<char> labeled_mask;
  std::size_t size() const { return windows.size(); }
};

struct CasasParse {
  std::vector<EventRecord> events;
  DomainSpec spec;
  std::size_t total_lines = 0;
  std::size_t malformed_lines = 0;
};

// Event-log lines: <YYYY-MM-DD> <HH:MM:SS[.ffffff]> <sensor_id> <value>
// [<activity> <begin|end>], single-space or tab separated. Binary readings
// map ON->1, OFF->0. Activity spans between begin/end markers label the
// enclosed events. Lines that fail the grammar are counted and skipped; more
// than 5% of them fails the whole parse.
CasasParse parse_casas_log(std::istream& in, const std::string& domain_name);

struct ImuParse {
  std::vector<std::vector<double>> rows;  // z-normalized selected columns
  std::vector<int> labels;                // -1 for unlabeled rows
  DomainSpec spec;
  std::vector<double> mean;
  std::vector<double> stddev;
};

// Space- or comma-separated numeric rows. Columns [col_start, col_end) form
// the feature block; label_col holds a numeric activity id (0 = unlabeled).
// Rows containing non-numeric or NaN entries in the selected columns are
// dropped; surviving columns are z-normalized (constant columns become 0).
ImuParse parse_imu_csv(std::istream& in, std::size_t col_start, std::size_t col_end,
                       std::size_t label_col, const std::string& domain_name);

// One-hot-by-sensor vectors carrying the reading as magnitude, with the
// event's label index alongside (-1 when unlabeled).
struct FeaturizedEvents {
  std::vector<std::vector<double>> features;
  std::vector<int> labels;
};
FeaturizedEvents featurize_events(const std::vector<EventRecord>& events, const DomainSpec& spec);

// Sliding windows over one contiguous sequence. Window label = most frequent
// per-sample label, ties resolved toward the tied label appearing earliest in
// the window; unlabeled samples do not vote; windows with no labeled sample
// are dropped. A sequence shorter than n_w yields an empty dataset (warning).
WindowedDataset make_windows(const std::vector<std::vector<double>>& features,
                             const std::vector<int>& labels, const DomainSpec& spec,
                             std::size_t n_w, std::size_t stride);

// Marks exactly ceil(fraction * N) windows as labeled via a seeded shuffle.
// Number of labeled windows a fraction yields on an n-window dataset:
// ceil(fraction * n), at least one, at most all.
std::size_t labeled_count(std::size_t n, double fraction);

WindowedDataset split_labeled(const WindowedDataset& ds, double fraction, std::uint64_t seed);

// Cache format: header `AEDA-WDS v1 n_f=<int> n_w=<int> classes=<comma list>`
// then per window: u32 label index, u8 labeled flag, n_f*n_w little-endian
// 64-bit reals. Feature names are positional after a reload.
void save_dataset(const std::string& path, const WindowedDataset& ds);
WindowedDataset load_dataset(const std::string& path);

// FNV-1a over the serialized content, for run manifests.
std::uint64_t dataset_fingerprint(const WindowedDataset& ds);

}  // namespace aeda
