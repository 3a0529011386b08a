#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "physio/rng.hpp"
#include "physio/util.hpp"

namespace physio {

/// One labeled series: rows are time steps, columns are channels. Values are
/// in normalized (z-scored) units once inside a bundle.
struct SequenceSample {
  Eigen::MatrixXd values;  // T x Nd
  int label = 1;           // 1-based class index
};

/// Per-channel z-score statistics, computed from the train split only.
struct NormStats {
  Eigen::VectorXd mean;  // Nd
  Eigen::VectorXd std;   // Nd, entries > 0
};

struct DatasetBundle {
  std::string name;
  std::vector<std::string> classes;
  std::vector<SequenceSample> train;
  std::vector<SequenceSample> test;
  NormStats norm;
  double sample_rate = 0.0;

  int num_classes() const { return static_cast<int>(classes.size()); }
  int seq_len() const { return train.empty() ? 0 : static_cast<int>(train[0].values.rows()); }
  int channels() const { return train.empty() ? 0 : static_cast<int>(train[0].values.cols()); }
};

enum class MaskScenario { mcar, segment };

inline const char* to_string(MaskScenario s) {
  return s == MaskScenario::mcar ? "mcar" : "segment";
}

/// A corrupted series: missing time steps are zeroed across all channels and
/// recorded in a per-step binary mask (1 = observed).
struct MaskedSample {
  Eigen::MatrixXd observed;  // T x Nd, zero rows where mask is 0
  std::vector<int> mask;     // T entries in {0,1}
  int label = 1;
  MaskScenario scenario = MaskScenario::mcar;

  int missing_count() const {
    int n = 0;
    for (int m : mask) n += (m == 0);
    return n;
  }
};

// ---------------------------------------------------------------------------
// normalization

inline NormStats compute_norm_stats(const std::vector<SequenceSample>& raw_train) {
  if (raw_train.empty()) throw std::invalid_argument("compute_norm_stats: empty train split");
  const int nd = static_cast<int>(raw_train[0].values.cols());
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(nd);
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(nd);
  double count = 0.0;
  for (const auto& s : raw_train) {
    mean += s.values.colwise().sum().transpose();
    sq += s.values.array().square().colwise().sum().matrix().transpose();
    count += static_cast<double>(s.values.rows());
  }
  mean /= count;
  NormStats out;
  out.mean = mean;
  out.std = ((sq.array() / count) - mean.array().square()).max(0.0).sqrt();
  for (int c = 0; c < nd; ++c) {
    // degenerate constant channels keep their raw scale
    if (!(out.std(c) > 1e-12)) out.std(c) = 1.0;
  }
  return out;
}

inline Eigen::MatrixXd normalize_values(const Eigen::MatrixXd& raw, const NormStats& norm) {
  Eigen::MatrixXd out = raw;
  for (int c = 0; c < out.cols(); ++c)
    out.col(c) = (out.col(c).array() - norm.mean(c)) / norm.std(c);
  return out;
}

inline Eigen::MatrixXd denormalize_values(const Eigen::MatrixXd& normalized, const NormStats& norm) {
  Eigen::MatrixXd out = normalized;
  for (int c = 0; c < out.cols(); ++c)
    out.col(c) = out.col(c).array() * norm.std(c) + norm.mean(c);
  return out;
}

// ---------------------------------------------------------------------------
// on-disk format: metadata.json + train.csv/test.csv, one sample per row,
// 1-based integer label then T*Nd raw values in time-major order.

namespace detail {

inline double parse_double(std::string_view tok, const std::string& context) {
  double v = 0.0;
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  while (first < last && (*first == ' ' || *first == '\t')) ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last)
    throw std::runtime_error("bad numeric field '" + std::string(tok) + "' in " + context);
  return v;
}

inline std::vector<SequenceSample> read_sample_csv(const std::filesystem::path& file, int t,
                                                   int nd, int num_classes,
                                                   const NormStats& norm) {
  const std::string text = read_text_file(file);
  std::vector<SequenceSample> out;
  std::size_t pos = 0;
  int line_no = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string_view line(text.data() + pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;

    const std::string ctx = file.filename().string() + ":" + std::to_string(line_no);
    SequenceSample s;
    s.values.resize(t, nd);
    std::size_t field = 0;
    std::size_t start = 0;
    const std::size_t expected = 1 + static_cast<std::size_t>(t) * nd;
    while (start <= line.size()) {
      std::size_t comma = line.find(',', start);
      if (comma == std::string_view::npos) comma = line.size();
      std::string_view tok = line.substr(start, comma - start);
      if (field >= expected)
        throw std::runtime_error("row has more than " + std::to_string(expected) +
                                 " fields in " + ctx);
      if (field == 0) {
        const double lab = parse_double(tok, ctx);
        s.label = static_cast<int>(lab);
        if (s.label < 1 || s.label > num_classes || lab != s.label)
          throw std::runtime_error("unknown class index '" + std::string(tok) + "' in " + ctx);
      } else {
        const std::size_t k = field - 1;
        const double v = parse_double(tok, ctx);
        if (!std::isfinite(v)) throw std::runtime_error("non-finite value in " + ctx);
        s.values(static_cast<int>(k / nd), static_cast<int>(k % nd)) = v;
      }
      ++field;
      if (comma == line.size()) break;
      start = comma + 1;
    }
    if (field != expected)
      throw std::runtime_error("row has " + std::to_string(field) + " fields, expected " +
                               std::to_string(expected) + " in " + ctx);
    s.values = normalize_values(s.values, norm);
    out.push_back(std::move(s));
  }
  return out;
}

inline std::string write_sample_csv(const std::vector<SequenceSample>& samples,
                                    const NormStats& norm) {
  std::string out;
  for (const auto& s : samples) {
    const Eigen::MatrixXd raw = denormalize_values(s.values, norm);
    out += std::to_string(s.label);
    for (int t = 0; t < raw.rows(); ++t)
      for (int c = 0; c < raw.cols(); ++c) {
        out += ',';
        out += format_g9(raw(t, c));
      }
    out += '\n';
  }
  return out;
}

}  // namespace detail

inline DatasetBundle load_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const fs::path meta_path = dir / "metadata.json";
  if (!fs::exists(meta_path))
    throw std::runtime_error("missing metadata.json in " + dir.string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_text_file(meta_path));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("invalid metadata.json in " + dir.string() + ": " + e.what());
  }

  DatasetBundle b;
  try {
    b.name = meta.at("name").get<std::string>();
    b.classes = meta.at("classes").get<std::vector<std::string>>();
    b.sample_rate = meta.at("sample_rate").get<double>();
    const int t = meta.at("T").get<int>();
    const int nd = meta.at("Nd").get<int>();
    const auto mean = meta.at("norm").at("mean").get<std::vector<double>>();
    const auto stdv = meta.at("norm").at("std").get<std::vector<double>>();
    if (t < 1 || nd < 1) throw std::runtime_error("metadata T and Nd must be >= 1");
    if (b.classes.empty()) throw std::runtime_error("metadata declares no classes");
    if (static_cast<int>(mean.size()) != nd || static_cast<int>(stdv.size()) != nd)
      throw std::runtime_error("norm stats length does not match Nd");
    b.norm.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), nd);
    b.norm.std = Eigen::Map<const Eigen::VectorXd>(stdv.data(), nd);
    for (int c = 0; c < nd; ++c)
      if (!(b.norm.std(c) > 0)) throw std::runtime_error("norm std must be positive");

    for (const char* split : {"train", "test"}) {
      const fs::path csv = dir / (std::string(split) + ".csv");
      if (!fs::exists(csv)) throw std::runtime_error("missing " + csv.string());
      auto samples = detail::read_sample_csv(csv, t, nd, b.num_classes(), b.norm);
      (std::string(split) == "train" ? b.train : b.test) = std::move(samples);
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("invalid metadata.json in " + dir.string() + ": " + e.what());
  }
  return b;
}

inline void save_dataset(const DatasetBundle& b, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json meta;
  meta["name"] = b.name;
  meta["classes"] = b.classes;
  meta["T"] = b.seq_len() != 0
                  ? b.seq_len()
                  : (b.test.empty() ? 0 : static_cast<int>(b.test[0].values.rows()));
  meta["Nd"] = static_cast<int>(b.norm.mean.size());
  meta["sample_rate"] = b.sample_rate;
  meta["norm"]["mean"] = std::vector<double>(b.norm.mean.data(), b.norm.mean.data() + b.norm.mean.size());
  meta["norm"]["std"] = std::vector<double>(b.norm.std.data(), b.norm.std.data() + b.norm.std.size());
  atomic_write_file(dir / "metadata.json", meta.dump(2) + "\n");
  atomic_write_file(dir / "train.csv", detail::write_sample_csv(b.train, b.norm));
  atomic_write_file(dir / "test.csv", detail::write_sample_csv(b.test, b.norm));
}

/// Stable content hash over shapes, classes and normalization; recorded into
/// checkpoints so downstream commands can detect dataset swaps.
inline std::string dataset_fingerprint(const DatasetBundle& b) {
  std::string acc = b.name;
  for (const auto& c : b.classes) acc += "|" + c;
  acc += "|" + std::to_string(b.seq_len()) + "x" + std::to_string(b.channels());
  acc += "|" + std::to_string(b.train.size()) + "/" + std::to_string(b.test.size());
  acc += "|" + format_g17(b.sample_rate);
  for (int c = 0; c < b.norm.mean.size(); ++c)
    acc += "|" + format_g17(b.norm.mean(c)) + ":" + format_g17(b.norm.std(c));
  return hex64(fnv1a(acc));
}

// ---------------------------------------------------------------------------
// operations

/// Keep every factor-th time step starting at index 0.
inline SequenceSample subsample(const SequenceSample& s, int factor) {
  if (factor < 1) throw std::invalid_argument("subsample: factor must be >= 1");
  if (s.values.rows() < factor)
    throw std::invalid_argument("subsample: factor exceeds sequence length");
  const int t_in = static_cast<int>(s.values.rows());
  const int t_out = (t_in + factor - 1) / factor;
  SequenceSample out;
  out.label = s.label;
  out.values.resize(t_out, s.values.cols());
  for (int t = 0; t < t_out; ++t) out.values.row(t) = s.values.row(t * factor);
  return out;
}

/// Deterministic class-stratified split. Each class contributes
/// round(ratio * n_class) samples to the train side.
inline std::pair<std::vector<SequenceSample>, std::vector<SequenceSample>> split(
    const std::vector<SequenceSample>& samples, double ratio, std::uint64_t seed) {
  if (samples.empty()) throw std::invalid_argument("split: empty input");
  if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("split: ratio must be in (0,1)");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < samples.size(); ++i) by_class[samples[i].label].push_back(i);

  Rng rng(seed);
  std::vector<SequenceSample> train, test;
  for (auto& [label, idx] : by_class) {
    rng.shuffle(idx);
    const auto n_train = static_cast<std::size_t>(
        std::llround(ratio * static_cast<double>(idx.size())));
    for (std::size_t k = 0; k < idx.size(); ++k)
      (k < n_train ? train : test).push_back(samples[idx[k]]);
  }
  return {std::move(train), std::move(test)};
}

struct ToyClassSpec {
  double frequency = 1.0;  // cycles over the full window
  double amplitude = 1.0;
};

struct ToyDatasetSpec {
  std::vector<ToyClassSpec> classes;
  int seq_len = 32;
  int channels = 1;
  int n_per_class = 200;  // train samples per class; test gets one quarter
  double noise_std = 0.05;
  std::uint64_t seed = 0;
};

/// Class-conditional sinusoid fixture: class k is
/// amplitude_k * sin(2*pi*f_k*t/T) plus i.i.d. Gaussian noise per channel.
inline DatasetBundle make_toy_dataset(const ToyDatasetSpec& spec) {
  if (spec.classes.empty()) throw std::invalid_argument("make_toy_dataset: no classes");
  if (spec.noise_std < 0) throw std::invalid_argument("make_toy_dataset: negative noise_std");
  if (spec.seq_len < 1 || spec.channels < 1 || spec.n_per_class < 1)
    throw std::invalid_argument("make_toy_dataset: bad dimensions");
  for (std::size_t i = 0; i < spec.classes.size(); ++i)
    for (std::size_t j = i + 1; j < spec.classes.size(); ++j)
      if (spec.classes[i].frequency == spec.classes[j].frequency)
        throw std::invalid_argument("make_toy_dataset: duplicate class frequencies");

  constexpr double kTwoPi = 2.0 * 3.14159265358979323846;
  Rng rng(spec.seed);
  const int n_test = (spec.n_per_class + 3) / 4;

  auto emit = [&](int label, std::vector<SequenceSample>& out) {
    const ToyClassSpec& cls = spec.classes[label - 1];
    SequenceSample s;
    s.label = label;
    s.values.resize(spec.seq_len, spec.channels);
    for (int t = 0; t < spec.seq_len; ++t) {
      const double base = cls.amplitude * std::sin(kTwoPi * cls.frequency * t / spec.seq_len);
      for (int c = 0; c < spec.channels; ++c)
        s.values(t, c) = base + (spec.noise_std > 0 ? rng.gaussian(0.0, spec.noise_std) : 0.0);
    }
    out.push_back(std::move(s));
  };

  DatasetBundle b;
  b.name = "toy-sinusoid";
  b.sample_rate = static_cast<double>(spec.seq_len);
  for (std::size_t k = 0; k < spec.classes.size(); ++k)
    b.classes.push_back("class_" + std::to_string(k + 1));
  for (int label = 1; label <= static_cast<int>(spec.classes.size()); ++label) {
    for (int i = 0; i < spec.n_per_class; ++i) emit(label, b.train);
    for (int i = 0; i < n_test; ++i) emit(label, b.test);
  }
  b.norm = compute_norm_stats(b.train);
  for (auto& s : b.train) s.values = normalize_values(s.values, b.norm);
  for (auto& s : b.test) s.values = normalize_values(s.values, b.norm);
  return b;
}

namespace detail {
inline MaskedSample build_masked(const SequenceSample& s, std::vector<int> mask,
                                 MaskScenario scenario) {
  MaskedSample out;
  out.label = s.label;
  out.scenario = scenario;
  out.mask = std::move(mask);
  out.observed = s.values;
  for (int t = 0; t < s.values.rows(); ++t)
    if (out.mask[t] == 0) out.observed.row(t).setZero();
  return out;
}
}  // namespace detail

/// Drop each time step independently with the given probability.
inline MaskedSample apply_mcar_mask(const SequenceSample& s, double rate, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0))
    throw std::invalid_argument("apply_mcar_mask: rate must be in [0,1)");
  Rng rng(seed);
  std::vector<int> mask(s.values.rows(), 1);
  for (auto& m : mask)
    if (rng.uniform() < rate) m = 0;
  return detail::build_masked(s, std::move(mask), MaskScenario::mcar);
}

/// Zero one contiguous run of round(rate*T) steps; the start index is uniform
/// over [0, T - run].
inline MaskedSample apply_segment_mask(const SequenceSample& s, double rate, std::uint64_t seed) {
  if (!(rate > 0.0 && rate < 1.0))
    throw std::invalid_argument("apply_segment_mask: rate must be in (0,1)");
  const int t = static_cast<int>(s.values.rows());
  const int run = static_cast<int>(std::llround(rate * t));
  if (run < 1) throw std::invalid_argument("apply_segment_mask: rate*T < 1");
  Rng rng(seed);
  const int start = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(t - run + 1)));
  std::vector<int> mask(t, 1);
  for (int i = start; i < start + run; ++i) mask[i] = 0;
  return detail::build_masked(s, std::move(mask), MaskScenario::segment);
}

}  // namespace physio
