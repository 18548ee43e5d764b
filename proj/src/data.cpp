#include "aeda/data.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <limits>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <istream>
#include <sstream>
#include <unordered_map>

#include "aeda/errors.hpp"
#include "aeda/rng.hpp"
#include "wire.hpp"

namespace aeda {

namespace {

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

// Days since 1970-01-01 for a proleptic Gregorian civil date.
std::int64_t days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const int era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = static_cast<unsigned>((153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1);
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return static_cast<std::int64_t>(era) * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

bool parse_timestamp(const std::string& date, const std::string& time, std::int64_t& out_us) {
  int y = 0, mo = 0, d = 0;
  char trail = 0;
  if (date.size() != 10 || std::sscanf(date.c_str(), "%4d-%2d-%2d%c", &y, &mo, &d, &trail) != 3)
    return false;
  if (mo < 1 || mo > 12 || d < 1 || d > 31) return false;

  std::string hms = time;
  std::int64_t frac_us = 0;
  if (const auto dot = time.find('.'); dot != std::string::npos) {
    hms = time.substr(0, dot);
    const std::string frac = time.substr(dot + 1);
    if (frac.empty() || frac.size() > 6) return false;
    for (char c : frac)
      if (!std::isdigit(static_cast<unsigned char>(c))) return false;
    frac_us = std::stoll(frac);
    for (std::size_t k = frac.size(); k < 6; ++k) frac_us *= 10;
  }
  int h = 0, mi = 0, s = 0;
  if (hms.size() != 8 || std::sscanf(hms.c_str(), "%2d:%2d:%2d%c", &h, &mi, &s, &trail) != 3)
    return false;
  if (h < 0 || h > 23 || mi < 0 || mi > 59 || s < 0 || s > 60) return false;

  const std::int64_t secs =
      days_from_civil(y, mo, d) * 86400 + h * 3600LL + mi * 60LL + s;
  out_us = secs * 1000000 + frac_us;
  return true;
}

bool parse_value(const std::string& tok, double& out) {
  if (tok == "ON") {
    out = 1.0;
    return true;
  }
  if (tok == "OFF") {
    out = 0.0;
    return true;
  }
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end != tok.c_str() + tok.size() || tok.empty()) return false;
  if (!std::isfinite(v)) return false;
  out = v;
  return true;
}

bool parse_number(const std::string& tok, double& out) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (tok.empty() || end != tok.c_str() + tok.size()) return false;
  out = v;
  return true;
}

struct FnvAcc {
  std::uint64_t h = 1469598103934665603ULL;
  void byte(unsigned char b) {
    h ^= b;
    h *= 1099511628211ULL;
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) byte(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f64(double d) { u64(std::bit_cast<std::uint64_t>(d)); }
  void str(const std::string& s) {
    for (char c : s) byte(static_cast<unsigned char>(c));
    byte(0);
  }
};

}  // namespace

int DomainSpec::label_index(const std::string& label) const {
  for (std::size_t i = 0; i < label_vocabulary.size(); ++i)
    if (label_vocabulary[i] == label) return static_cast<int>(i);
  return -1;
}

int DomainSpec::feature_index(const std::string& feature) const {
  for (std::size_t i = 0; i < feature_names.size(); ++i)
    if (feature_names[i] == feature) return static_cast<int>(i);
  return -1;
}

CasasParse parse_casas_log(std::istream& in, const std::string& domain_name) {
  CasasParse out;
  out.spec.name = domain_name;

  std::vector<std::string> active;  // activity span stack, back = last begun
  std::vector<std::pair<std::size_t, std::string>> offenders;
  std::unordered_map<std::string, int> sensor_seen;
  std::unordered_map<std::string, int> label_seen;
  std::int64_t prev_ts = std::numeric_limits<std::int64_t>::min();

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto toks = split_ws(line);
    if (toks.empty()) continue;
    ++out.total_lines;

    auto reject = [&]() {
      ++out.malformed_lines;
      if (offenders.size() < 10) offenders.emplace_back(line_no, line);
    };

    if (toks.size() != 4 && toks.size() != 6) {
      reject();
      continue;
    }
    std::int64_t ts = 0;
    double value = 0.0;
    if (!parse_timestamp(toks[0], toks[1], ts) || !parse_value(toks[3], value)) {
      reject();
      continue;
    }
    if (ts < prev_ts) {
      reject();
      continue;
    }
    std::string marker;
    if (toks.size() == 6) {
      if (toks[5] != "begin" && toks[5] != "end") {
        reject();
        continue;
      }
      marker = toks[5];
    }
    prev_ts = ts;

    if (marker == "begin") active.push_back(toks[4]);

    EventRecord ev;
    ev.timestamp_us = ts;
    ev.sensor_id = toks[2];
    ev.value = value;
    if (!active.empty()) ev.activity = active.back();

    if (marker == "end") {
      const auto it = std::find(active.rbegin(), active.rend(), toks[4]);
      if (it != active.rend()) active.erase(std::next(it).base());
    }

    if (sensor_seen.emplace(ev.sensor_id, 1).second)
      out.spec.feature_names.push_back(ev.sensor_id);
    if (!ev.activity.empty() && label_seen.emplace(ev.activity, 1).second)
      out.spec.label_vocabulary.push_back(ev.activity);
    out.events.push_back(std::move(ev));
  }

  if (out.total_lines > 0 &&
      static_cast<double>(out.malformed_lines) > 0.05 * static_cast<double>(out.total_lines)) {
    std::ostringstream msg;
    msg << "event log " << domain_name << ": " << out.malformed_lines << " of " << out.total_lines
        << " lines malformed (>5%); first offenders:";
    for (const auto& [no, text] : offenders) msg << "\n  line " << no << ": " << text;
    throw DataError(msg.str());
  }
  return out;
}

ImuParse parse_imu_csv(std::istream& in, std::size_t col_start, std::size_t col_end,
                       std::size_t label_col, const std::string& domain_name) {
  if (col_end <= col_start) throw DataError("empty feature column selection");
  ImuParse out;
  out.spec.name = domain_name;
  const std::size_t n_cols = col_end - col_start;
  for (std::size_t c = col_start; c < col_end; ++c)
    out.spec.feature_names.push_back("c" + std::to_string(c));

  std::unordered_map<std::string, int> label_seen;
  std::string line;
  while (std::getline(in, line)) {
    for (char& c : line)
      if (c == ',') c = ' ';
    const auto toks = split_ws(line);
    if (toks.empty()) continue;
    const std::size_t needed = std::max(col_end, label_col + 1);
    if (toks.size() < needed) continue;

    std::vector<double> row(n_cols);
    bool ok = true;
    for (std::size_t c = 0; c < n_cols && ok; ++c) {
      double v = 0.0;
      ok = parse_number(toks[col_start + c], v) && std::isfinite(v);
      row[c] = v;
    }
    double label_val = 0.0;
    ok = ok && parse_number(toks[label_col], label_val) && std::isfinite(label_val);
    if (!ok) continue;

    const long id = std::lround(label_val);
    int label = -1;
    if (id != 0) {
      const std::string name = std::to_string(id);
      const auto [it, fresh] = label_seen.emplace(name, static_cast<int>(out.spec.label_vocabulary.size()));
      if (fresh) out.spec.label_vocabulary.push_back(name);
      label = it->second;
    }
    out.rows.push_back(std::move(row));
    out.labels.push_back(label);
  }
  if (out.rows.empty()) throw DataError("no valid rows in " + domain_name);

  out.mean.assign(n_cols, 0.0);
  out.stddev.assign(n_cols, 0.0);
  const double n = static_cast<double>(out.rows.size());
  for (const auto& row : out.rows)
    for (std::size_t c = 0; c < n_cols; ++c) out.mean[c] += row[c];
  for (std::size_t c = 0; c < n_cols; ++c) out.mean[c] /= n;
  for (const auto& row : out.rows)
    for (std::size_t c = 0; c < n_cols; ++c) {
      const double d = row[c] - out.mean[c];
      out.stddev[c] += d * d;
    }
  for (std::size_t c = 0; c < n_cols; ++c) out.stddev[c] = std::sqrt(out.stddev[c] / n);
  for (auto& row : out.rows)
    for (std::size_t c = 0; c < n_cols; ++c)
      row[c] = out.stddev[c] > 0.0 ? (row[c] - out.mean[c]) / out.stddev[c] : 0.0;
  return out;
}

FeaturizedEvents featurize_events(const std::vector<EventRecord>& events, const DomainSpec& spec) {
  std::unordered_map<std::string, int> sensor_idx;
  for (std::size_t i = 0; i < spec.feature_names.size(); ++i)
    sensor_idx.emplace(spec.feature_names[i], static_cast<int>(i));
  std::unordered_map<std::string, int> label_idx;
  for (std::size_t i = 0; i < spec.label_vocabulary.size(); ++i)
    label_idx.emplace(spec.label_vocabulary[i], static_cast<int>(i));

  FeaturizedEvents out;
  out.features.reserve(events.size());
  out.labels.reserve(events.size());
  for (const auto& ev : events) {
    const auto it = sensor_idx.find(ev.sensor_id);
    if (it == sensor_idx.end()) throw DataError("unknown sensor: " + ev.sensor_id);
    std::vector<double> vec(spec.n_f(), 0.0);
    vec[static_cast<std::size_t>(it->second)] = ev.value;
    out.features.push_back(std::move(vec));
    int label = -1;
    if (!ev.activity.empty()) {
      const auto lt = label_idx.find(ev.activity);
      if (lt != label_idx.end()) label = lt->second;
    }
    out.labels.push_back(label);
  }
  return out;
}

WindowedDataset make_windows(const std::vector<std::vector<double>>& features,
                             const std::vector<int>& labels, const DomainSpec& spec,
                             std::size_t n_w, std::size_t stride) {
  if (n_w == 0) throw DataError("window width must be positive");
  if (stride == 0) throw DataError("stride must be positive");
  if (features.size() != labels.size())
    throw DataError("feature/label length mismatch in windowing");
  for (const auto& row : features)
    if (row.size() != spec.n_f()) throw DataError("feature width does not match domain spec");

  WindowedDataset ds;
  ds.spec = spec;
  ds.n_w = n_w;
  const std::size_t L = features.size();
  if (L < n_w) {
    std::cerr << "warning: sequence of length " << L << " shorter than window width " << n_w
              << ", no windows produced\n";
    return ds;
  }

  const std::size_t n_f = spec.n_f();
  const std::size_t n_classes = spec.label_vocabulary.size();
  std::vector<std::size_t> votes(n_classes);
  std::vector<std::size_t> first_pos(n_classes);
  for (std::size_t start = 0; start + n_w <= L; start += stride) {
    std::fill(votes.begin(), votes.end(), 0);
    bool any = false;
    for (std::size_t j = 0; j < n_w; ++j) {
      const int lab = labels[start + j];
      if (lab < 0) continue;
      if (static_cast<std::size_t>(lab) >= n_classes)
        throw DataError("label index out of range in windowing");
      if (votes[static_cast<std::size_t>(lab)] == 0) first_pos[static_cast<std::size_t>(lab)] = j;
      ++votes[static_cast<std::size_t>(lab)];
      any = true;
    }
    if (!any) continue;
    std::size_t best = 0;
    bool have = false;
    for (std::size_t c = 0; c < n_classes; ++c) {
      if (votes[c] == 0) continue;
      if (!have || votes[c] > votes[best] ||
          (votes[c] == votes[best] && first_pos[c] < first_pos[best])) {
        best = c;
        have = true;
      }
    }
    Tensor window({n_f, n_w});
    for (std::size_t f = 0; f < n_f; ++f)
      for (std::size_t j = 0; j < n_w; ++j) window[f * n_w + j] = features[start + j][f];
    ds.windows.push_back(std::move(window));
    ds.labels.push_back(static_cast<int>(best));
    ds.labeled_mask.push_back(1);
  }
  return ds;
}

std::size_t labeled_count(std::size_t n, double fraction) {
  if (!(fraction > 0.0) || fraction > 1.0)
    throw DataError("labeled fraction must lie in (0, 1]");
  if (n == 0) return 0;
  const std::size_t raw =
      static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
  return std::clamp<std::size_t>(raw, 1, n);
}

WindowedDataset split_labeled(const WindowedDataset& ds, double fraction, std::uint64_t seed) {
  WindowedDataset out = ds;
  const std::size_t n = ds.size();
  const std::size_t n_labeled = labeled_count(n, fraction);
  if (n == 0) return out;

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = Rng::substream(seed, "split");
  rng.shuffle(order);
  std::fill(out.labeled_mask.begin(), out.labeled_mask.end(), 0);
  for (std::size_t i = 0; i < n_labeled; ++i) out.labeled_mask[order[i]] = 1;
  return out;
}

void save_dataset(const std::string& path, const WindowedDataset& ds) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open dataset for writing: " + path);
  os << "AEDA-WDS v1 n_f=" << ds.spec.n_f() << " n_w=" << ds.n_w << " classes=";
  for (std::size_t i = 0; i < ds.spec.label_vocabulary.size(); ++i) {
    if (i) os << ',';
    os << ds.spec.label_vocabulary[i];
  }
  os << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.labels[i] < 0) throw DataError("cannot save window without a label");
    wire::put_u32(os, static_cast<std::uint32_t>(ds.labels[i]));
    wire::put_u8(os, ds.labeled_mask[i] ? 1 : 0);
    const Tensor& w = ds.windows[i];
    for (std::size_t k = 0; k < w.size(); ++k) wire::put_f64(os, w[k]);
  }
  if (!os) throw DataError("failed writing dataset: " + path);
}

WindowedDataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open dataset: " + path);
  std::string header;
  if (!std::getline(is, header)) throw DataError("missing dataset header: " + path);

  auto field = [&](const std::string& key) -> std::string {
    const auto pos = header.find(key);
    if (pos == std::string::npos) throw DataError("bad dataset header: " + path);
    const auto start = pos + key.size();
    auto end = header.find(' ', start);
    if (end == std::string::npos) end = header.size();
    return header.substr(start, end - start);
  };
  if (header.rfind("AEDA-WDS v1 ", 0) != 0) throw DataError("bad dataset header: " + path);

  WindowedDataset ds;
  ds.spec.name = path;
  std::size_t n_f = 0;
  try {
    n_f = static_cast<std::size_t>(std::stoull(field("n_f=")));
    ds.n_w = static_cast<std::size_t>(std::stoull(field("n_w=")));
  } catch (const std::exception&) {
    throw DataError("bad dataset header: " + path);
  }
  if (n_f == 0 || ds.n_w == 0) throw DataError("bad dataset header: " + path);

  const auto classes_pos = header.find("classes=");
  if (classes_pos == std::string::npos) throw DataError("bad dataset header: " + path);
  std::string classes = header.substr(classes_pos + 8);
  if (!classes.empty() && classes.back() == '\r') classes.pop_back();
  for (std::size_t i = 0, j = 0; i <= classes.size(); ++i) {
    if (i == classes.size() || classes[i] == ',') {
      if (i > j) ds.spec.label_vocabulary.push_back(classes.substr(j, i - j));
      j = i + 1;
    }
  }
  for (std::size_t f = 0; f < n_f; ++f) ds.spec.feature_names.push_back("f" + std::to_string(f));

  while (true) {
    const int probe = is.peek();
    if (probe == std::char_traits<char>::eof()) break;
    const std::uint32_t label = wire::get_u32(is, path);
    if (label >= ds.spec.label_vocabulary.size())
      throw DataError("label index out of range in " + path);
    const std::uint8_t flag = wire::get_u8(is, path);
    if (flag > 1) throw DataError("bad labeled flag in " + path);
    Tensor window({n_f, ds.n_w});
    for (std::size_t k = 0; k < window.size(); ++k) window[k] = wire::get_f64(is, path);
    ds.windows.push_back(std::move(window));
    ds.labels.push_back(static_cast<int>(label));
    ds.labeled_mask.push_back(static_cast<char>(flag));
  }
  return ds;
}

std::uint64_t dataset_fingerprint(const WindowedDataset& ds) {
  FnvAcc acc;
  acc.u64(ds.spec.n_f());
  acc.u64(ds.n_w);
  acc.u64(ds.spec.label_vocabulary.size());
  for (const auto& name : ds.spec.label_vocabulary) acc.str(name);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    acc.u64(static_cast<std::uint64_t>(static_cast<std::int64_t>(ds.labels[i])));
    acc.byte(ds.labeled_mask[i] ? 1 : 0);
    const Tensor& w = ds.windows[i];
    for (std::size_t k = 0; k < w.size(); ++k) acc.f64(w[k]);
  }
  return acc.h;
}

}  // namespace aeda
