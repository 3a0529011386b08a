// physio: train, sample, evaluate and repair conditional generative models
// for labeled multichannel time series.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "physio/checkpoint.hpp"
#include "physio/dataset.hpp"
#include "physio/export.hpp"
#include "physio/imputation.hpp"
#include "physio/metrics.hpp"
#include "physio/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Argument-level problems detected after parsing; exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

physio::TrainingConfig resolve_config(const std::string& config_path,
                                      std::optional<std::uint64_t> seed) {
  physio::TrainingConfig cfg;
  if (!config_path.empty()) {
    json j;
    try {
      j = json::parse(physio::read_text_file(config_path));
    } catch (const json::exception& e) {
      throw UsageError("config file " + config_path + " is not valid JSON: " + e.what());
    }
    try {
      physio::apply_config_json(cfg, j);
    } catch (const std::exception& e) {
      throw UsageError("config file " + config_path + ": " + e.what());
    }
  }
  if (seed) cfg.seed = *seed;
  return cfg;
}

int run_train(const std::string& dataset_dir, const std::string& model,
              const std::string& config_path, const std::string& out_dir,
              std::optional<std::uint64_t> seed) {
  physio::ModelKind kind;
  try {
    kind = physio::model_kind_from_string(model);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  physio::TrainingConfig cfg = resolve_config(config_path, seed);
  const auto bundle = physio::load_dataset(dataset_dir);

  physio::Checkpoint ckpt;
  physio::TrainingLog log;
  json extra;
  if (kind == physio::ModelKind::oracle) {
    auto res = physio::train_oracle(bundle, cfg);
    ckpt = std::move(res.checkpoint);
    log = std::move(res.log);
    extra["test_accuracy"] = res.test_accuracy;
    extra["holdout_accuracy"] = res.holdout_accuracy;
    extra["converged"] = res.converged;
    if (!res.converged)
      std::cerr << "warning: oracle did not converge (test accuracy "
                << res.test_accuracy << ")\n";
  } else if (kind == physio::ModelKind::physiogan) {
    auto res = physio::train_physiogan(bundle, cfg);
    ckpt = std::move(res.checkpoint);
    log = std::move(res.log);
  } else {
    auto res = physio::train_baseline(kind, bundle, cfg);
    ckpt = std::move(res.checkpoint);
    log = std::move(res.log);
  }

  fs::create_directories(out_dir);
  cfg.net = ckpt.net;  // resolved shapes for the manifest
  json resolved = physio::training_config_json(cfg);
  resolved["model"] = model;
  physio::RunManifest manifest("train", resolved, cfg.seed);
  manifest.add_input("dataset", dataset_dir);
  if (!config_path.empty()) manifest.add_input("config", config_path);

  const fs::path ckpt_path = fs::path(out_dir) / "checkpoint.bin";
  physio::save_checkpoint(ckpt, ckpt_path);
  manifest.add_artifact(ckpt_path);
  const fs::path log_path = fs::path(out_dir) / "training_log.csv";
  physio::atomic_write_file(log_path, physio::training_log_csv(log));
  manifest.add_artifact(log_path);
  if (!extra.empty()) {
    const fs::path report_path = fs::path(out_dir) / "oracle_report.json";
    physio::atomic_write_file(report_path, extra.dump(2) + "\n");
    manifest.add_artifact(report_path);
  }
  manifest.write(out_dir);

  std::cout << "trained " << model << " on " << bundle.name << " for " << log.epochs.size()
            << " epochs in " << physio::format_g9(log.wall_seconds) << " s";
  if (!log.epochs.empty())
    std::cout << " (final total " << physio::format_g9(log.epochs.back().total) << ")";
  std::cout << "\ncheckpoint: " << ckpt_path.string() << "\n";
  return 0;
}

int run_generate(const std::string& checkpoint_path, int n, int length,
                 const std::string& labels_mode, std::uint64_t seed,
                 const std::string& out_dir) {
  physio::LabelSampling mode;
  try {
    mode = physio::label_sampling_from_string(labels_mode);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (n < 1) throw UsageError("--n must be >= 1");
  const auto ckpt = physio::load_checkpoint(checkpoint_path);
  if (!ckpt.has_decoder()) throw UsageError("checkpoint has no generator network");
  if (length < 1) length = ckpt.net.seq_len;
  if (ckpt.kind == physio::ModelKind::rcgan && length > ckpt.net.seq_len)
    throw UsageError("rcgan has no autoregressive feedback and cannot generate sequences "
                     "longer than its training length (" +
                     std::to_string(ckpt.net.seq_len) + "); requested " +
                     std::to_string(length));

  auto synth = physio::generate_synthetic(ckpt, n, length, mode, seed);

  physio::DatasetBundle out_bundle;
  out_bundle.name = ckpt.data.name + "-" + physio::to_string(ckpt.kind) + "-synthetic";
  out_bundle.classes = ckpt.data.classes;
  out_bundle.norm = ckpt.data.norm;
  out_bundle.sample_rate = ckpt.data.sample_rate;
  out_bundle.train = std::move(synth.samples);
  physio::save_dataset(out_bundle, out_dir);

  json resolved{{"checkpoint", checkpoint_path}, {"n", n},       {"length", length},
                {"labels", labels_mode},         {"seed", seed}, {"source", synth.source}};
  physio::RunManifest manifest("generate", resolved, seed);
  manifest.add_input("checkpoint", checkpoint_path);
  manifest.add_artifact(fs::path(out_dir) / "metadata.json");
  manifest.add_artifact(fs::path(out_dir) / "train.csv");
  manifest.add_artifact(fs::path(out_dir) / "test.csv");
  manifest.write(out_dir);
  std::cout << "generated " << n << " samples of length " << length << " from " << synth.source
            << " into " << out_dir << "\n";
  return 0;
}

int run_evaluate(const std::string& real_dir, const std::string& synth_dir,
                 const std::string& oracle_path, const std::string& metrics_list,
                 const std::string& out_file) {
  bool want_conditional = false, want_diversity = false, want_novelty = false,
       want_tstr = false;
  {
    std::string item;
    std::stringstream ss(metrics_list);
    while (std::getline(ss, item, ',')) {
      if (item == "all")
        want_conditional = want_diversity = want_novelty = want_tstr = true;
      else if (item == "conditional")
        want_conditional = true;
      else if (item == "diversity")
        want_diversity = true;
      else if (item == "novelty")
        want_novelty = true;
      else if (item == "tstr")
        want_tstr = true;
      else
        throw UsageError("unknown metric '" + item +
                         "' (expected conditional,diversity,novelty,tstr or all)");
    }
  }
  if (want_conditional && oracle_path.empty())
    throw UsageError("--oracle is required for the conditional metric");

  const auto real = physio::load_dataset(real_dir);
  const auto synth = physio::load_dataset(synth_dir);
  if (synth.train.empty()) throw std::runtime_error("synthetic set has no samples");
  if (synth.channels() != real.channels())
    throw std::runtime_error("synthetic/real channel count mismatch");
  if (synth.classes != real.classes)
    throw std::runtime_error("synthetic/real class list mismatch");

  json report;
  std::vector<double> novelty_samples;
  if (want_diversity || want_novelty) {
    physio::ScoringOptions opt;
    opt.normalizer = physio::dtw_nn_normalizer(real.train);
    report["normalizer"] = *opt.normalizer;
    if (want_diversity) {
      auto d = physio::diversity_score(synth.train, real.train, opt);
      report["diversity"] = d.score;
    }
    if (want_novelty) {
      auto nv = physio::novelty_score(synth.train, real.train, opt);
      report["novelty"] = nv.score;
      novelty_samples = std::move(nv.per_sample);
    }
  }
  if (want_conditional) {
    const auto oracle = physio::load_checkpoint(oracle_path);
    if (!oracle.has_oracle()) throw UsageError("--oracle must point to an oracle checkpoint");
    if (oracle.net.num_classes != real.num_classes())
      throw std::runtime_error("oracle class count does not match the dataset");
    physio::SyntheticSet synth_set;
    synth_set.samples = synth.train;
    report["conditional_accuracy"] =
        physio::conditional_accuracy(synth_set, oracle.oracle, oracle.net);
  }
  if (want_tstr) {
    if (real.test.empty()) throw std::runtime_error("tstr requires a real test split");
    physio::TrainingConfig tstr_cfg;
    tstr_cfg.epochs = 150;
    tstr_cfg.batch_size = 128;
    tstr_cfg.seed = 17;
    auto tstr = physio::train_tstr_classifiers(synth.train, real.test, real.num_classes(),
                                               tstr_cfg);
    report["tstr"]["rnn_accuracy"] = tstr.rnn_accuracy;
    report["tstr"]["feat_accuracy"] = tstr.feat_accuracy;
    if (tstr.rnn_auc) report["tstr"]["rnn_auc"] = *tstr.rnn_auc;
    if (tstr.feat_auc) report["tstr"]["feat_auc"] = *tstr.feat_auc;
  }

  physio::atomic_write_file(out_file, report.dump(2) + "\n");
  json resolved{{"real", real_dir},
                {"synthetic", synth_dir},
                {"oracle", oracle_path},
                {"metrics", metrics_list}};
  physio::RunManifest manifest("evaluate", resolved, 0);
  manifest.add_input("real", real_dir);
  manifest.add_input("synthetic", synth_dir);
  if (!oracle_path.empty()) manifest.add_input("oracle", oracle_path);
  manifest.add_artifact(out_file);
  if (want_novelty) {
    const fs::path hist_path = fs::path(out_file).parent_path() /
                               (fs::path(out_file).stem().string() + "_novelty_hist.csv");
    physio::atomic_write_file(hist_path, physio::histogram_csv(novelty_samples));
    manifest.add_artifact(hist_path);
  }
  const fs::path manifest_path = fs::path(out_file).string() + ".manifest.json";
  {
    // evaluate writes a single report file, so its manifest sits beside it
    json j = report;
    physio::atomic_write_file(manifest_path, json{{"command", "evaluate"},
                                                  {"config", resolved},
                                                  {"report", std::move(j)}}
                                                     .dump(2) +
                                                 "\n");
  }
  std::cout << report.dump(2) << "\n";
  return 0;
}

int run_impute(const std::string& checkpoint_path, const std::string& dataset_dir,
               const std::string& scenario, double rate, const std::string& method,
               std::uint64_t seed, const std::string& out_dir,
               const std::string& oracle_path) {
  if (method != "physiogan" && method != "knn")
    throw UsageError("--method must be physiogan or knn");
  physio::MaskScenario scen;
  if (scenario == "mcar")
    scen = physio::MaskScenario::mcar;
  else if (scenario == "segment")
    scen = physio::MaskScenario::segment;
  else
    throw UsageError("--scenario must be mcar or segment");
  if (scen == physio::MaskScenario::mcar ? !(rate >= 0.0 && rate < 1.0)
                                         : !(rate > 0.0 && rate < 1.0))
    throw UsageError("invalid --rate for scenario " + scenario);
  if (method == "physiogan" && checkpoint_path.empty())
    throw UsageError("--checkpoint is required for the physiogan method");

  const auto bundle = physio::load_dataset(dataset_dir);
  if (bundle.test.empty()) throw std::runtime_error("dataset has no test split to corrupt");
  std::optional<physio::Checkpoint> ckpt;
  if (method == "physiogan") {
    ckpt = physio::load_checkpoint(checkpoint_path);
    if (!ckpt->has_encoder() || !ckpt->has_decoder())
      throw UsageError("imputation needs a checkpoint with both encoder and decoder");
    if (ckpt->net.channels != bundle.channels() ||
        ckpt->net.num_classes != bundle.num_classes())
      throw std::runtime_error("checkpoint shapes do not match the dataset");
  }

  std::vector<physio::MaskedSample> corrupted;
  std::vector<physio::SequenceSample> repaired;
  double mae_sum = 0.0;
  fs::create_directories(fs::path(out_dir) / "triptych");
  std::vector<fs::path> triptych_paths;
  for (std::size_t i = 0; i < bundle.test.size(); ++i) {
    const auto& original = bundle.test[i];
    auto ms = scen == physio::MaskScenario::mcar
                  ? physio::apply_mcar_mask(original, rate, seed + i)
                  : physio::apply_segment_mask(original, rate, seed + i);
    auto result = method == "physiogan" ? physio::impute_physiogan(*ckpt, ms)
                                        : physio::impute_knn(bundle.train, ms);
    mae_sum += physio::mae(original.values, result.repaired);
    physio::SequenceSample rep;
    rep.values = result.repaired;
    rep.label = original.label;
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%04zu.csv", i);
    const fs::path tript = fs::path(out_dir) / "triptych" / name;
    physio::atomic_write_file(tript, physio::triptych_csv(original.values, ms, rep.values));
    triptych_paths.push_back(tript);
    corrupted.push_back(std::move(ms));
    repaired.push_back(std::move(rep));
  }

  physio::RepairReport report;
  report.method = method;
  report.scenario = scenario;
  report.rate = rate;
  report.sample_count = static_cast<int>(bundle.test.size());
  report.mae = mae_sum / static_cast<double>(bundle.test.size());

  json j{{"method", report.method},
         {"scenario", report.scenario},
         {"rate", report.rate},
         {"sample_count", report.sample_count},
         {"mae", report.mae},
         {"semantic_repair", nullptr}};
  if (!oracle_path.empty()) {
    const auto oracle = physio::load_checkpoint(oracle_path);
    if (!oracle.has_oracle()) throw UsageError("--oracle must point to an oracle checkpoint");
    auto sr = physio::semantic_repair(bundle.test, corrupted, repaired, oracle.oracle,
                                      oracle.net);
    if (sr.score) j["semantic_repair"] = *sr.score;
    j["acc_complete"] = sr.acc_complete;
    j["acc_corrupted"] = sr.acc_corrupted;
    j["acc_repaired"] = sr.acc_repaired;
  }

  const fs::path report_path = fs::path(out_dir) / "repair_report.json";
  physio::atomic_write_file(report_path, j.dump(2) + "\n");
  json resolved{{"checkpoint", checkpoint_path}, {"dataset", dataset_dir},
                {"scenario", scenario},          {"rate", rate},
                {"method", method},              {"seed", seed},
                {"oracle", oracle_path}};
  physio::RunManifest manifest("impute", resolved, seed);
  manifest.add_input("dataset", dataset_dir);
  if (!checkpoint_path.empty()) manifest.add_input("checkpoint", checkpoint_path);
  if (!oracle_path.empty()) manifest.add_input("oracle", oracle_path);
  manifest.add_artifact(report_path);
  for (const auto& p : triptych_paths) manifest.add_artifact(p);
  manifest.write(out_dir);
  std::cout << j.dump(2) << "\n";
  return 0;
}

int run_export_plots(const std::string& in_dir, const std::string& out_dir, int rows) {
  if (rows < 1) throw UsageError("--rows must be >= 1");
  const auto bundle = physio::load_dataset(in_dir);
  const auto& samples = bundle.train.empty() ? bundle.test : bundle.train;
  if (samples.empty()) throw std::runtime_error("dataset has no samples to plot");

  std::vector<physio::SequenceSample> raw(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    raw[i].label = samples[i].label;
    raw[i].values = physio::denormalize_values(samples[i].values, bundle.norm);
  }
  const auto grid = physio::render_sample_grid(raw, bundle.classes, rows);

  fs::create_directories(out_dir);
  json resolved{{"in", in_dir}, {"rows", rows}};
  physio::RunManifest manifest("export-plots", resolved, 0);
  manifest.add_input("dataset", in_dir);
  const fs::path csv_path = fs::path(out_dir) / "samples.csv";
  physio::atomic_write_file(csv_path, grid.csv);
  manifest.add_artifact(csv_path);
  try {
    const fs::path svg_path = fs::path(out_dir) / "samples.svg";
    physio::atomic_write_file(svg_path, grid.svg);
    manifest.add_artifact(svg_path);
  } catch (const std::exception& e) {
    std::cerr << "warning: plot rendering failed (" << e.what() << "); CSV was written\n";
  }
  manifest.write(out_dir);
  std::cout << "wrote sample grid for " << bundle.classes.size() << " classes to " << out_dir
            << "\n";
  return 0;
}

int run_make_toy(const std::string& out_dir, int t, int nd, int n_per_class, double noise,
                 std::uint64_t seed, const std::vector<double>& freqs) {
  physio::ToyDatasetSpec spec;
  spec.seq_len = t;
  spec.channels = nd;
  spec.n_per_class = n_per_class;
  spec.noise_std = noise;
  spec.seed = seed;
  for (double f : freqs) spec.classes.push_back({f, 1.0});
  physio::DatasetBundle bundle;
  try {
    bundle = physio::make_toy_dataset(spec);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  physio::save_dataset(bundle, out_dir);
  json resolved{{"T", t}, {"Nd", nd},     {"n_per_class", n_per_class},
                {"noise", noise}, {"seed", seed}, {"frequencies", freqs}};
  physio::RunManifest manifest("make-toy", resolved, seed);
  manifest.add_artifact(fs::path(out_dir) / "metadata.json");
  manifest.add_artifact(fs::path(out_dir) / "train.csv");
  manifest.add_artifact(fs::path(out_dir) / "test.csv");
  manifest.write(out_dir);
  std::cout << "wrote toy dataset (" << bundle.train.size() << " train / " << bundle.test.size()
            << " test) to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"physio: class-conditional generative models for physiological time series"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "Train a model on a dataset directory");
  std::string tr_dataset, tr_model, tr_config, tr_out;
  std::optional<std::uint64_t> tr_seed;
  train->add_option("--dataset", tr_dataset, "dataset directory")->required();
  train->add_option("--model", tr_model,
                    "one of physiogan|crnn|cvrae|rcgan|rcgan_ar|oracle")->required();
  train->add_option("--config", tr_config, "JSON config file");
  train->add_option("--out", tr_out, "output directory")->required();
  train->add_option("--seed", tr_seed, "seed override");

  // generate
  auto* gen = app.add_subcommand("generate", "Sample a synthetic set from a checkpoint");
  std::string g_ckpt, g_labels = "uniform", g_out;
  int g_n = 0, g_length = 0;
  std::uint64_t g_seed = 0;
  gen->add_option("--checkpoint", g_ckpt, "checkpoint file")->required();
  gen->add_option("--n", g_n, "number of samples")->required();
  gen->add_option("--length", g_length, "sequence length (default: training length)");
  gen->add_option("--labels", g_labels, "uniform|match|stratified");
  gen->add_option("--seed", g_seed, "random seed");
  gen->add_option("--out", g_out, "output dataset directory")->required();

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "Score a synthetic set against a real dataset");
  std::string e_real, e_synth, e_oracle, e_metrics = "all", e_out;
  eval->add_option("--real", e_real, "real dataset directory")->required();
  eval->add_option("--synthetic", e_synth, "synthetic dataset directory")->required();
  eval->add_option("--oracle", e_oracle, "oracle checkpoint (conditional metric)");
  eval->add_option("--metrics", e_metrics,
                   "comma list of conditional,diversity,novelty,tstr (default all)");
  eval->add_option("--out", e_out, "report JSON path")->required();

  // impute
  auto* imp = app.add_subcommand("impute", "Corrupt the test split and repair it");
  std::string i_ckpt, i_dataset, i_scenario, i_method = "physiogan", i_out, i_oracle;
  double i_rate = 0.25;
  std::uint64_t i_seed = 0;
  imp->add_option("--checkpoint", i_ckpt, "generator checkpoint (physiogan method)");
  imp->add_option("--dataset", i_dataset, "dataset directory")->required();
  imp->add_option("--scenario", i_scenario, "mcar|segment")->required();
  imp->add_option("--rate", i_rate, "missing fraction (default 0.25)");
  imp->add_option("--method", i_method, "physiogan|knn");
  imp->add_option("--seed", i_seed, "random seed");
  imp->add_option("--out", i_out, "output directory")->required();
  imp->add_option("--oracle", i_oracle, "oracle checkpoint for semantic repair");

  // export-plots
  auto* plots = app.add_subcommand("export-plots", "Render per-class sample grids");
  std::string p_in, p_out;
  int p_rows = 3;
  plots->add_option("--in", p_in, "dataset or synthetic-set directory")->required();
  plots->add_option("--out", p_out, "output directory")->required();
  plots->add_option("--rows", p_rows, "samples per class (default 3)");

  // make-toy
  auto* toy = app.add_subcommand("make-toy", "Write the sinusoid fixture dataset");
  std::string y_out;
  int y_t = 32, y_nd = 1, y_n = 200;
  double y_noise = 0.05;
  std::uint64_t y_seed = 0;
  std::vector<double> y_freqs{2.0, 5.0};
  toy->add_option("--out", y_out, "output dataset directory")->required();
  toy->add_option("--T", y_t, "time steps (default 32)");
  toy->add_option("--Nd", y_nd, "channels (default 1)");
  toy->add_option("--n-per-class", y_n, "train samples per class (default 200)");
  toy->add_option("--noise", y_noise, "noise std (default 0.05)");
  toy->add_option("--seed", y_seed, "random seed");
  toy->add_option("--freq", y_freqs, "class frequencies (default 2 5)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*train) return run_train(tr_dataset, tr_model, tr_config, tr_out, tr_seed);
    if (*gen) return run_generate(g_ckpt, g_n, g_length, g_labels, g_seed, g_out);
    if (*eval) return run_evaluate(e_real, e_synth, e_oracle, e_metrics, e_out);
    if (*imp)
      return run_impute(i_ckpt, i_dataset, i_scenario, i_rate, i_method, i_seed, i_out,
                        i_oracle);
    if (*plots) return run_export_plots(p_in, p_out, p_rows);
    if (*toy) return run_make_toy(y_out, y_t, y_nd, y_n, y_noise, y_seed, y_freqs);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
