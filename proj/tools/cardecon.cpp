// cardecon: batch pipeline turning bank-card transaction files into
// region-level indicators and trained index-prediction models.

#include <sys/resource.h>

#include <chrono>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "cardecon/csv.hpp"
#include "cardecon/indicators.hpp"
#include "cardecon/ingest.hpp"
#include "cardecon/pipeline.hpp"
#include "cardecon/synthgen.hpp"
#include "cardecon/version.hpp"

namespace {

using namespace cardecon;

constexpr int kExitOk = 0;
constexpr int kExitFatal = 1;       // unreadable or malformed input data
constexpr int kExitValidation = 2;  // bad arguments, missing paths, preconditions

void emit_error(const std::string& kind, const std::string& message) {
  nlohmann::json j;
  j["error"] = kind;
  j["message"] = message;
  std::cerr << j.dump() << "\n";
}

void require_file(const std::string& path, const std::string& what) {
  if (!std::filesystem::exists(path))
    throw CLI::ValidationError(what, "file not found: " + path);
}

std::uint64_t config_hash(const std::string& canonical) {
  return CounterRng::fnv1a64(canonical);
}

std::vector<std::string> provenance_header(const std::string& subcommand,
                                           std::uint64_t seed,
                                           const std::string& canonical_config,
                                           const std::vector<std::string>& input_paths) {
  std::vector<std::string> lines;
  lines.push_back(std::string("cardecon ") + kVersion + " " + subcommand);
  lines.push_back("seed " + std::to_string(seed));
  char hex[32];
  std::snprintf(hex, sizeof(hex), "%016llx",
                static_cast<unsigned long long>(config_hash(canonical_config)));
  lines.push_back(std::string("config fnv1a=") + hex);
  for (const auto& p : input_paths) {
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(content_hash_file(p)));
    lines.push_back("input " + std::filesystem::path(p).filename().string() +
                    " fnv1a=" + hex);
  }
  return lines;
}

std::uint64_t peak_rss_bytes() {
  std::ifstream status("/proc/self/status");
  std::string line;
  while (std::getline(status, line)) {
    if (line.rfind("VmHWM:", 0) == 0) {
      unsigned long long kb = 0;
      if (std::sscanf(line.c_str(), "VmHWM: %llu", &kb) == 1) return kb * 1024;
    }
  }
  // some sandboxes strip the Vm* lines; ru_maxrss is kilobytes on Linux
  struct rusage ru{};
  getrusage(RUSAGE_SELF, &ru);
  return static_cast<std::uint64_t>(ru.ru_maxrss) * 1024;
}

struct IngestArgs {
  std::string transactions, regions, out, bundles, stats_json;
  unsigned threads = 0;
  std::uint64_t seed = 0;
};

int run_ingest(const IngestArgs& a) {
  require_file(a.transactions, "--transactions");
  require_file(a.regions, "--regions");
  if (!a.bundles.empty()) require_file(a.bundles, "--bundles");

  const RegionTable table = load_region_table(a.regions);
  const BundleMap bundles = a.bundles.empty() ? BundleMap::default_map()
                                              : BundleMap::load(a.bundles);
  const unsigned threads =
      a.threads > 0 ? a.threads : std::max(1u, std::thread::hardware_concurrency());

  const auto start = std::chrono::steady_clock::now();
  const IngestResult result = ingest_file(a.transactions, table, threads);
  const IndicatorResult ind =
      compute_indicators(result.aggregates.regions, result.regions, bundles);
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  const std::string canonical = "ingest|" + a.transactions + "|" + a.regions + "|" +
                                a.bundles + "|threads-independent";
  write_indicator_matrix(ind.matrix, a.out,
                         provenance_header("ingest", a.seed, canonical,
                                           {a.transactions, a.regions}));

  nlohmann::json stats;
  stats["rows"] = result.report.total_rows;
  stats["emitted"] = result.report.emitted;
  nlohmann::json rejects;
  for (std::size_t i = 0; i < result.report.counts.size(); ++i)
    if (result.report.counts[i] > 0)
      rejects[kRejectReasonNames[i]] = result.report.counts[i];
  stats["rejected"] = rejects;
  stats["rejected_total"] = result.report.rejected_total();
  stats["elapsed_seconds"] = elapsed;
  stats["rows_per_second"] =
      elapsed > 0 ? static_cast<double>(result.report.total_rows) / elapsed : 0.0;
  stats["peak_rss_bytes"] = peak_rss_bytes();
  stats["threads"] = threads;
  stats["regions"] = table.size();
  stats["warnings"] = ind.warnings.size();

  if (!a.stats_json.empty()) {
    std::ofstream sj = open_output(a.stats_json);
    sj << stats.dump(1) << "\n";
  }
  std::cout << "ingest: " << result.report.total_rows << " rows, "
            << result.report.emitted << " accepted, " << result.report.rejected_total()
            << " rejected in " << elapsed << " s ("
            << static_cast<std::uint64_t>(stats["rows_per_second"].get<double>())
            << " rows/s)\n";
  for (std::size_t i = 0; i < result.report.counts.size(); ++i)
    if (result.report.counts[i] > 0)
      std::cout << "  reject " << kRejectReasonNames[i] << ": "
                << result.report.counts[i] << "\n";
  for (const auto& w : ind.warnings) std::cout << "  warning: " << w << "\n";
  std::cout << "wrote " << a.out << " (" << ind.matrix.region_ids.size() << " regions x "
            << kIndicatorCount << " indicators)\n";
  return kExitOk;
}

struct TrainArgs {
  std::string matrix, indices, out;
  std::size_t k = 6;
  double tau = 0.0;  // > 0 switches to variance-threshold mode
  std::uint64_t seed = 1;
};

KMode k_mode_from(std::size_t k, double tau) {
  return tau > 0.0 ? KMode::variance_threshold(tau) : KMode::fixed(k);
}

int run_train(const TrainArgs& a) {
  require_file(a.matrix, "--matrix");
  require_file(a.indices, "--indices");
  const IndicatorMatrix matrix = read_indicator_matrix(a.matrix);
  const OfficialIndices indices = read_official_indices(a.indices);
  const TrainedPipeline p =
      train(matrix, indices, matrix.region_ids, k_mode_from(a.k, a.tau), a.seed);
  const std::string canonical = "train|" + a.matrix + "|" + a.indices + "|" +
                                std::to_string(a.k) + "|" + format_f64(a.tau);
  save_pipeline(p, a.out,
                provenance_header("train", a.seed, canonical, {a.matrix, a.indices}));
  std::cout << "trained on " << p.training_regions.size() << " regions, k=" << p.k
            << "; wrote " << a.out << "\n";
  for (int j = 0; j < kIndexCount; ++j)
    if (!p.index_models[j].glm.converged)
      std::cout << "  warning: GLM for " << kIndexNames[j] << " did not converge\n";
  return kExitOk;
}

struct PredictArgs {
  std::string pipeline, matrix, out, regions_csv;
};

int run_predict(const PredictArgs& a) {
  require_file(a.pipeline, "--pipeline");
  require_file(a.matrix, "--matrix");
  const TrainedPipeline p = load_pipeline(a.pipeline);
  const IndicatorMatrix matrix = read_indicator_matrix(a.matrix);
  std::vector<std::string> subset;
  if (a.regions_csv.empty()) {
    subset = matrix.region_ids;
  } else {
    std::vector<std::string_view> parts;
    split_fields(a.regions_csv, parts);
    for (auto sv : parts) subset.emplace_back(sv);
  }
  const PredictResult pred = predict(p, matrix, subset);
  const std::string canonical = "predict|" + a.pipeline + "|" + a.matrix;
  write_predictions(pred, a.out,
                    provenance_header("predict", p.seed, canonical,
                                      {a.pipeline, a.matrix}));
  std::size_t failures = 0;
  for (std::size_t i = 0; i < pred.region_ids.size(); ++i)
    if (!pred.ok(i)) {
      ++failures;
      std::cout << "  error: " << pred.errors[i] << "\n";
    }
  std::cout << "predicted " << (pred.region_ids.size() - failures) << "/"
            << pred.region_ids.size() << " regions; wrote " << a.out << "\n";
  return kExitOk;
}

struct CrossvalArgs {
  std::string matrix, indices, out, splits_out;
  std::size_t sessions = 4;
  std::size_t train_size = 34;
  std::size_t k = 6;
  double tau = 0.0;
  std::uint64_t seed = 1;
};

int run_crossval(const CrossvalArgs& a) {
  require_file(a.matrix, "--matrix");
  require_file(a.indices, "--indices");
  const IndicatorMatrix matrix = read_indicator_matrix(a.matrix);
  const OfficialIndices indices = read_official_indices(a.indices);
  const CrossValReport rep = cross_validate(matrix, indices, a.sessions, a.train_size,
                                            k_mode_from(a.k, a.tau), a.seed);
  const std::string canonical = "crossval|" + a.matrix + "|" + a.indices + "|" +
                                std::to_string(a.sessions) + "|" +
                                std::to_string(a.train_size) + "|" + std::to_string(a.k) +
                                "|" + format_f64(a.tau);
  const auto header =
      provenance_header("crossval", a.seed, canonical, {a.matrix, a.indices});
  write_crossval_report(rep, a.out, header);
  if (!a.splits_out.empty()) write_crossval_splits(rep, a.splits_out, header);

  std::cout << "cross-validation: " << rep.successful_sessions() << "/"
            << rep.sessions.size() << " sessions succeeded\n";
  for (int j = 0; j < kIndexCount; ++j) {
    std::cout << "  " << kIndexNames[j] << ":";
    if (rep.averages.r2_train_orig[j])
      std::cout << " train R2=" << format_f64(*rep.averages.r2_train_orig[j]);
    if (rep.averages.r2_val_orig[j])
      std::cout << " val R2=" << format_f64(*rep.averages.r2_val_orig[j]);
    std::cout << "\n";
  }
  std::cout << "wrote " << a.out << "\n";
  return kExitOk;
}

struct SweepArgs {
  std::string matrix, indices, out;
  std::size_t k_min = 1, k_max = 16;
  std::size_t sessions = 4;
  std::size_t train_size = 34;
  std::uint64_t seed = 1;
};

int run_sweep(const SweepArgs& a) {
  require_file(a.matrix, "--matrix");
  require_file(a.indices, "--indices");
  const IndicatorMatrix matrix = read_indicator_matrix(a.matrix);
  const OfficialIndices indices = read_official_indices(a.indices);
  const auto sweep = component_sweep(matrix, indices, a.k_min, a.k_max, a.sessions,
                                     a.train_size, a.seed);
  const std::string canonical = "sweep|" + a.matrix + "|" + a.indices + "|" +
                                std::to_string(a.k_min) + ".." + std::to_string(a.k_max);
  write_sweep(sweep, a.out,
              provenance_header("sweep", a.seed, canonical, {a.matrix, a.indices}));
  std::cout << "wrote " << a.out << " (" << sweep.size() << " k values)\n";
  return kExitOk;
}

struct SynthArgs {
  std::string out_dir;
  std::uint64_t seed = 1;
  std::size_t regions = 52;
  std::uint64_t transactions = 1'000'000;
  int factors = 3;
  double target_r2 = -1.0;
  double noise_sd = -1.0;
};

int run_synth(const SynthArgs& a) {
  SynthConfig cfg;
  cfg.seed = a.seed;
  cfg.region_count = a.regions;
  cfg.transactions_total = a.transactions;
  cfg.latent_factor_count = a.factors;
  if (a.target_r2 >= 0.0) cfg.target_r2 = a.target_r2;
  if (a.noise_sd >= 0.0) cfg.noise_sd.fill(a.noise_sd);
  std::filesystem::create_directories(a.out_dir);
  const SynthOutput out = generate(cfg, a.out_dir);
  std::cout << "wrote " << out.regions_path << "\n"
            << "wrote " << out.transactions_path << "\n"
            << "wrote " << out.indices_path << "\n"
            << "wrote " << out.ground_truth_path << "\n";
  return kExitOk;
}

struct ReportArgs {
  std::string pipeline, matrix, indices, out_dir;
  double flag_threshold = 0.40;
};

int run_report(const ReportArgs& a) {
  require_file(a.pipeline, "--pipeline");
  require_file(a.matrix, "--matrix");
  require_file(a.indices, "--indices");
  const TrainedPipeline p = load_pipeline(a.pipeline);
  const IndicatorMatrix matrix = read_indicator_matrix(a.matrix);
  const OfficialIndices indices = read_official_indices(a.indices);
  std::filesystem::create_directories(a.out_dir);

  const std::string canonical = "report|" + a.pipeline + "|" + a.matrix + "|" + a.indices;
  const auto header = provenance_header("report", p.seed, canonical,
                                        {a.pipeline, a.matrix, a.indices});

  const CorrelationTable table =
      pc_index_correlations(p, matrix, indices, a.flag_threshold);
  write_correlation_table(table, a.out_dir + "/pc_index_correlations.csv", header);
  write_explained_variance(p.pca, a.out_dir + "/explained_variance.csv", header);
  write_loadings(p.pca, a.out_dir + "/loadings.csv", header);
  std::cout << "wrote " << a.out_dir << "/pc_index_correlations.csv (" << table.k
            << " x " << kIndexCount << ")\n"
            << "wrote " << a.out_dir << "/explained_variance.csv\n"
            << "wrote " << a.out_dir << "/loadings.csv\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cardecon: regional economic indicators and index prediction from "
               "bank-card transactions"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("cardecon ") + kVersion);

  IngestArgs ingest_args;
  auto* ingest_cmd = app.add_subcommand(
      "ingest", "Parse, de-bias and aggregate transactions into the indicator matrix");
  ingest_cmd->add_option("--transactions", ingest_args.transactions, "transactions CSV")
      ->required();
  ingest_cmd->add_option("--regions", ingest_args.regions, "region table CSV")->required();
  ingest_cmd->add_option("--out", ingest_args.out, "output indicator matrix CSV")
      ->required();
  ingest_cmd->add_option("--bundles", ingest_args.bundles,
                         "category-bundle mapping CSV (default: built-in)");
  ingest_cmd->add_option("--threads", ingest_args.threads,
                         "shard count (default: hardware concurrency)");
  ingest_cmd->add_option("--seed", ingest_args.seed, "seed recorded in output header");
  ingest_cmd->add_option("--stats-json", ingest_args.stats_json,
                         "write run statistics (rows, throughput, peak RSS) as JSON");

  TrainArgs train_args;
  auto* train_cmd =
      app.add_subcommand("train", "Fit distributions, PCA and per-index GLMs");
  train_cmd->add_option("--matrix", train_args.matrix, "indicator matrix CSV")->required();
  train_cmd->add_option("--indices", train_args.indices, "official indices CSV")
      ->required();
  train_cmd->add_option("--out", train_args.out, "output pipeline file")->required();
  train_cmd->add_option("--k", train_args.k, "fixed component count (default 6)");
  train_cmd->add_option("--tau", train_args.tau,
                        "variance threshold in (0,1]; overrides --k when set");
  train_cmd->add_option("--seed", train_args.seed, "seed recorded in the pipeline");

  PredictArgs predict_args;
  auto* predict_cmd =
      app.add_subcommand("predict", "Predict indices with a trained pipeline");
  predict_cmd->add_option("--pipeline", predict_args.pipeline, "trained pipeline file")
      ->required();
  predict_cmd->add_option("--matrix", predict_args.matrix, "indicator matrix CSV")
      ->required();
  predict_cmd->add_option("--out", predict_args.out, "output predictions CSV")->required();
  predict_cmd->add_option("--regions", predict_args.regions_csv,
                          "comma-separated region ids (default: all in matrix)");

  CrossvalArgs crossval_args;
  auto* crossval_cmd = app.add_subcommand(
      "crossval", "Repeated shuffle-and-split evaluation of the full chain");
  crossval_cmd->add_option("--matrix", crossval_args.matrix, "indicator matrix CSV")
      ->required();
  crossval_cmd->add_option("--indices", crossval_args.indices, "official indices CSV")
      ->required();
  crossval_cmd->add_option("--out", crossval_args.out, "output report CSV")->required();
  crossval_cmd->add_option("--splits-out", crossval_args.splits_out,
                           "also write per-session split membership CSV");
  crossval_cmd->add_option("--sessions", crossval_args.sessions, "sessions (default 4)");
  crossval_cmd->add_option("--train-size", crossval_args.train_size,
                           "training regions per session (default 34)");
  crossval_cmd->add_option("--k", crossval_args.k, "fixed component count (default 6)");
  crossval_cmd->add_option("--tau", crossval_args.tau,
                           "variance threshold in (0,1]; overrides --k when set");
  crossval_cmd->add_option("--seed", crossval_args.seed, "split seed (default 1)");

  SweepArgs sweep_args;
  auto* sweep_cmd = app.add_subcommand(
      "sweep", "Cross-validate across a range of component counts");
  sweep_cmd->add_option("--matrix", sweep_args.matrix, "indicator matrix CSV")->required();
  sweep_cmd->add_option("--indices", sweep_args.indices, "official indices CSV")
      ->required();
  sweep_cmd->add_option("--out", sweep_args.out, "output curve CSV")->required();
  sweep_cmd->add_option("--k-min", sweep_args.k_min, "lowest k (default 1)");
  sweep_cmd->add_option("--k-max", sweep_args.k_max, "highest k (default 16)");
  sweep_cmd->add_option("--sessions", sweep_args.sessions, "sessions per k (default 4)");
  sweep_cmd->add_option("--train-size", sweep_args.train_size,
                        "training regions per session (default 34)");
  sweep_cmd->add_option("--seed", sweep_args.seed, "split seed (default 1)");

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand(
      "synth", "Generate a synthetic corpus with planted index relationships");
  synth_cmd->add_option("--out", synth_args.out_dir, "output directory")->required();
  synth_cmd->add_option("--seed", synth_args.seed, "generator seed (default 1)");
  synth_cmd->add_option("--regions", synth_args.regions, "region count (default 52)");
  synth_cmd->add_option("--transactions", synth_args.transactions,
                        "total transactions (default 1e6)");
  synth_cmd->add_option("--factors", synth_args.factors, "latent factors (default 3)");
  synth_cmd->add_option("--target-r2", synth_args.target_r2,
                        "derive per-index noise from a target R^2 in (0,1]");
  synth_cmd->add_option("--noise-sd", synth_args.noise_sd,
                        "absolute per-index noise standard deviation");

  ReportArgs report_args;
  auto* report_cmd = app.add_subcommand(
      "report", "Component/index correlation and explained-variance reports");
  report_cmd->add_option("--pipeline", report_args.pipeline, "trained pipeline file")
      ->required();
  report_cmd->add_option("--matrix", report_args.matrix, "indicator matrix CSV")
      ->required();
  report_cmd->add_option("--indices", report_args.indices, "official indices CSV")
      ->required();
  report_cmd->add_option("--outdir", report_args.out_dir, "output directory")->required();
  report_cmd->add_option("--flag-threshold", report_args.flag_threshold,
                         "|r| above which entries are flagged (default 0.40)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
    emit_error("usage", e.what());
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (*ingest_cmd) return run_ingest(ingest_args);
    if (*train_cmd) return run_train(train_args);
    if (*predict_cmd) return run_predict(predict_args);
    if (*crossval_cmd) return run_crossval(crossval_args);
    if (*sweep_cmd) return run_sweep(sweep_args);
    if (*synth_cmd) return run_synth(synth_args);
    if (*report_cmd) return run_report(report_args);
  } catch (const CLI::ValidationError& e) {
    emit_error("validation", e.what());
    return kExitValidation;
  } catch (const std::invalid_argument& e) {
    emit_error("validation", e.what());
    return kExitValidation;
  } catch (const std::exception& e) {
    emit_error("fatal", e.what());
    return kExitFatal;
  }
  return kExitValidation;
}
