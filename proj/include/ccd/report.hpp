#pragma once

// Running the staged protocol over a stream and recording what happened:
// one StageReport per stage, test-set predictions, and run summaries in JSON
// and as a text table.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ccd/evaluation.hpp"
#include "ccd/pipeline.hpp"
#include "ccd/stream.hpp"

namespace ccd {

inline constexpr int kReportSchemaVersion = 1;

struct StageReport {
  int stage = 0;
  std::size_t estimated_novel = 0;  // n
  std::size_t true_novel = 0;       // novel classes present in training so far
  double known_accuracy = 0.0;      // M_o^t
  std::optional<double> novel_accuracy;  // M_d^t
  std::size_t discovered_classes = 0;
  std::size_t split_known = 0;
  std::size_t split_novel = 0;
  bool parametric_split = false;
  std::size_t ap_count = 0;
  bool ap_warning = false;
  std::size_t training_samples = 0;
  StorageReport storage;
  double wall_seconds = 0.0;  // not part of determinism comparisons
};

// Test-set predictions of one stage over known classes and the novel classes
// trained on so far.
struct StagePredictions {
  int stage = 0;
  std::vector<Label> truth;
  std::vector<Label> predicted;
  std::vector<bool> known;  // true class belongs to D^l
};

struct RunResult {
  EngineConfig config;
  InitialOutcome initial;
  std::vector<StageReport> stages;
  std::vector<StagePredictions> predictions;
  std::vector<Label> known_classes;
  Aggregate summary;
};

RunResult run_stream(const Stream& stream, const EngineConfig& config);

// Stage metrics from predictions; known_classes fixes the identity-matched set.
StageMetrics metrics_from_predictions(const StagePredictions& p);
Aggregate aggregate_predictions(const std::vector<StagePredictions>& stages);

// JSON documents. The report excludes wall time so identical runs give
// identical bytes; timings are written separately.
std::string report_json(const RunResult& run);
std::string timing_json(const RunResult& run);
std::string report_table(const RunResult& run);

// Writes report.json, timing.json, predictions.csv and config.txt.
void write_run(const RunResult& run, const std::filesystem::path& dir);
std::vector<StagePredictions> read_predictions(const std::filesystem::path& path);
// Table from a saved report.json.
std::string render_report_file(const std::filesystem::path& path);

}  // namespace ccd
