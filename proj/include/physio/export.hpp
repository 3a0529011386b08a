#pragma once

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "physio/dataset.hpp"
#include "physio/imputation.hpp"
#include "physio/losses.hpp"
#include "physio/metrics.hpp"
#include "physio/training.hpp"
#include "physio/util.hpp"

namespace physio {

inline std::string training_log_csv(const TrainingLog& log) {
  std::string out = "epoch,eta,recon,posterior,feats,adv,diverse,disc,total\n";
  for (std::size_t i = 0; i < log.epochs.size(); ++i) {
    const LossBreakdown& e = log.epochs[i];
    out += std::to_string(i + 1);
    for (double v : {e.eta, e.recon, e.posterior, e.feats, e.adv, e.diverse, e.disc, e.total}) {
      out += ',';
      out += format_g17(v);
    }
    out += '\n';
  }
  return out;
}

inline nlohmann::json score_report_json(const ScoreReport& report) {
  nlohmann::json j;
  if (report.conditional_accuracy) j["conditional_accuracy"] = *report.conditional_accuracy;
  if (report.diversity) j["diversity"] = *report.diversity;
  if (report.novelty) j["novelty"] = *report.novelty;
  if (report.diversity || report.novelty) j["normalizer"] = report.normalizer;
  return j;
}

/// Fixed-width histogram over [0, max]; emitted as bin_lo,bin_hi,count rows.
inline std::string histogram_csv(const std::vector<double>& values, int bins = 20) {
  std::string out = "bin_lo,bin_hi,count\n";
  if (values.empty() || bins < 1) return out;
  const double hi = std::max(*std::max_element(values.begin(), values.end()), 1e-12);
  std::vector<int> counts(bins, 0);
  for (double v : values) {
    int b = static_cast<int>(std::floor(v / hi * bins));
    b = std::clamp(b, 0, bins - 1);
    counts[b] += 1;
  }
  for (int b = 0; b < bins; ++b) {
    out += format_g9(hi * b / bins);
    out += ',';
    out += format_g9(hi * (b + 1) / bins);
    out += ',';
    out += std::to_string(counts[b]);
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// sample grids: one column per class, a few rows of samples, SVG + CSV

namespace detail {

inline const char* series_color(int channel) {
  static const char* kPalette[] = {"#1f6fb2", "#d1495b", "#3a9e5f",
                                   "#8f5fb2", "#c98a2b", "#4d4d4d"};
  return kPalette[channel % 6];
}

inline void svg_panel(std::string& svg, const Eigen::MatrixXd& values, double x0, double y0,
                      double w, double h) {
  double lo = values.minCoeff();
  double hi = values.maxCoeff();
  if (hi - lo < 1e-9) {
    lo -= 1.0;
    hi += 1.0;
  }
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
  svg += "<rect x='" + format_g9(x0) + "' y='" + format_g9(y0) + "' width='" + format_g9(w) +
         "' height='" + format_g9(h) + "' fill='white' stroke='#cccccc'/>\n";
  const int t_len = static_cast<int>(values.rows());
  for (int c = 0; c < values.cols(); ++c) {
    svg += "<polyline fill='none' stroke='";
    svg += series_color(c);
    svg += "' stroke-width='1' points='";
    for (int t = 0; t < t_len; ++t) {
      const double px = x0 + (t_len == 1 ? 0.5 : static_cast<double>(t) / (t_len - 1)) * w;
      const double py = y0 + h - (values(t, c) - lo) / (hi - lo) * h;
      svg += format_g9(px);
      svg += ',';
      svg += format_g9(py);
      svg += ' ';
    }
    svg += "'/>\n";
  }
}

}  // namespace detail

struct SampleGrid {
  std::string svg;
  std::string csv;  // class_index,class_name,row,t,channel,value
};

/// Per-class sample grid: columns are classes (titled), rows are the first
/// `rows` samples of each class.
inline SampleGrid render_sample_grid(const std::vector<SequenceSample>& samples,
                                     const std::vector<std::string>& classes, int rows = 3) {
  if (samples.empty()) throw std::invalid_argument("render_sample_grid: no samples");
  if (rows < 1) throw std::invalid_argument("render_sample_grid: rows must be >= 1");
  std::map<int, std::vector<const SequenceSample*>> by_class;
  for (const auto& s : samples) {
    auto& v = by_class[s.label];
    if (static_cast<int>(v.size()) < rows) v.push_back(&s);
  }
  const int cols = static_cast<int>(classes.size());
  const double pw = 220, ph = 110, margin = 16, title_h = 24;
  const double width = margin + cols * (pw + margin);
  const double height = title_h + rows * (ph + margin) + margin;

  SampleGrid out;
  out.svg = "<svg xmlns='http://www.w3.org/2000/svg' width='" + format_g9(width) +
            "' height='" + format_g9(height) + "'>\n<rect width='100%' height='100%' fill='#fafafa'/>\n";
  out.csv = "class_index,class_name,row,t,channel,value\n";
  for (int c = 0; c < cols; ++c) {
    const double x0 = margin + c * (pw + margin);
    out.svg += "<text x='" + format_g9(x0 + pw / 2) + "' y='" + format_g9(title_h - 8) +
               "' text-anchor='middle' font-family='sans-serif' font-size='13'>" + classes[c] +
               "</text>\n";
    const auto it = by_class.find(c + 1);
    if (it == by_class.end()) continue;
    for (std::size_t r = 0; r < it->second.size(); ++r) {
      const Eigen::MatrixXd& v = it->second[r]->values;
      detail::svg_panel(out.svg, v, x0, title_h + r * (ph + margin), pw, ph);
      for (int t = 0; t < v.rows(); ++t)
        for (int ch = 0; ch < v.cols(); ++ch)
          out.csv += std::to_string(c + 1) + "," + classes[c] + "," + std::to_string(r + 1) +
                     "," + std::to_string(t) + "," + std::to_string(ch) + "," +
                     format_g9(v(t, ch)) + "\n";
    }
  }
  out.svg += "</svg>\n";
  return out;
}

/// Imputation triptych for one sample: complete / corrupted-with-mask /
/// repaired blocks in a single CSV.
inline std::string triptych_csv(const Eigen::MatrixXd& complete, const MaskedSample& corrupted,
                                const Eigen::MatrixXd& repaired) {
  const int nd = static_cast<int>(complete.cols());
  auto row = [&](const Eigen::MatrixXd& m, int t) {
    std::string s;
    for (int c = 0; c < nd; ++c) {
      s += ',';
      s += format_g9(m(t, c));
    }
    return s;
  };
  std::string header = "t";
  for (int c = 0; c < nd; ++c) header += ",ch" + std::to_string(c);
  std::string out = "# complete\n" + header + "\n";
  for (int t = 0; t < complete.rows(); ++t) out += std::to_string(t) + row(complete, t) + "\n";
  out += "# corrupted\nt,mask";
  for (int c = 0; c < nd; ++c) out += ",ch" + std::to_string(c);
  out += "\n";
  for (int t = 0; t < corrupted.observed.rows(); ++t)
    out += std::to_string(t) + "," + std::to_string(corrupted.mask[t]) +
           row(corrupted.observed, t) + "\n";
  out += "# repaired\n" + header + "\n";
  for (int t = 0; t < repaired.rows(); ++t) out += std::to_string(t) + row(repaired, t) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// run manifest

inline std::string iso8601_utc(std::chrono::system_clock::time_point tp) {
  const std::time_t t = std::chrono::system_clock::to_time_t(tp);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Written atomically when a command finishes; lists every artifact the run
/// produced with its size and content fingerprint.
class RunManifest {
 public:
  RunManifest(std::string command, nlohmann::json resolved_config, std::uint64_t seed)
      : command_(std::move(command)),
        config_(std::move(resolved_config)),
        seed_(seed),
        started_(std::chrono::system_clock::now()) {}

  void add_input(const std::string& role, const std::filesystem::path& path) {
    inputs_[role] = path.string();
  }

  void add_artifact(const std::filesystem::path& path) { artifacts_.push_back(path); }

  void write(const std::filesystem::path& out_dir) const {
    nlohmann::json j;
    j["command"] = command_;
    j["config"] = config_;
    j["seed"] = seed_;
    j["inputs"] = inputs_;
    j["started_at"] = iso8601_utc(started_);
    j["finished_at"] = iso8601_utc(std::chrono::system_clock::now());
    nlohmann::json arts = nlohmann::json::array();
    for (const auto& p : artifacts_) {
      const std::string content = read_text_file(p);
      arts.push_back({{"path", std::filesystem::relative(p, out_dir).generic_string()},
                      {"bytes", content.size()},
                      {"fingerprint", hex64(fnv1a(content))}});
    }
    j["artifacts"] = std::move(arts);
    atomic_write_file(out_dir / "manifest.json", j.dump(2) + "\n");
  }

 private:
  std::string command_;
  nlohmann::json config_;
  std::uint64_t seed_;
  std::chrono::system_clock::time_point started_;
  std::map<std::string, std::string> inputs_;
  std::vector<std::filesystem::path> artifacts_;
};

}  // namespace physio
