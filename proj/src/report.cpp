#include "ccd/report.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "ccd/config.hpp"
#include "json.hpp"

namespace ccd {
namespace {

using nlohmann::ordered_json;

StagePredictions evaluate_stage(const Engine& engine, const Stream& stream, int stage) {
  const std::set<Label> known(stream.known_classes.begin(), stream.known_classes.end());
  const auto novel = stream.novel_classes_through(static_cast<std::size_t>(stage));
  const std::set<Label> seen(novel.begin(), novel.end());
  StagePredictions p;
  p.stage = stage;
  const auto& labels = *stream.test.labels;
  for (std::size_t i = 0; i < stream.test.size(); ++i) {
    const bool is_known = known.contains(labels[i]);
    if (!is_known && !seen.contains(labels[i])) continue;
    p.truth.push_back(labels[i]);
    p.predicted.push_back(engine.predict(stream.test.rows[i]));
    p.known.push_back(is_known);
  }
  return p;
}

ordered_json storage_json(const StorageReport& s) {
  return {{"static_pool_bytes", s.static_pool_bytes},
          {"dynamic_pool_bytes", s.dynamic_pool_bytes},
          {"additional_bytes", s.additional_bytes()},
          {"model_parameter_bytes", s.model_parameter_bytes},
          {"additional_ratio", s.ratio()}};
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

}  // namespace

StageMetrics metrics_from_predictions(const StagePredictions& p) {
  std::vector<Label> kt, kp, nt, np;
  std::set<Label> known_labels;
  for (std::size_t i = 0; i < p.truth.size(); ++i) {
    if (p.known[i]) {
      kt.push_back(p.truth[i]);
      kp.push_back(p.predicted[i]);
      known_labels.insert(p.truth[i]);
    } else {
      nt.push_back(p.truth[i]);
      np.push_back(p.predicted[i]);
    }
  }
  StageMetrics m;
  m.stage = p.stage;
  m.known_accuracy = identity_accuracy(kp, kt);
  if (!nt.empty()) {
    const std::vector<Label> kl(known_labels.begin(), known_labels.end());
    m.novel_accuracy = novel_accuracy(np, nt, kl);
  }
  return m;
}

Aggregate aggregate_predictions(const std::vector<StagePredictions>& stages) {
  MetricsLedger ledger;
  for (const auto& p : stages) ledger.record(metrics_from_predictions(p));
  return ledger.aggregate();
}

RunResult run_stream(const Stream& stream, const EngineConfig& config) {
  using Clock = std::chrono::steady_clock;
  RunResult run;
  run.config = config;
  run.known_classes = stream.known_classes;
  Engine engine(config);

  auto seconds_since = [](Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
  };
  auto finish_stage = [&](StageReport& r) {
    run.predictions.push_back(evaluate_stage(engine, stream, r.stage));
    const StageMetrics m = metrics_from_predictions(run.predictions.back());
    r.known_accuracy = m.known_accuracy;
    r.novel_accuracy = m.novel_accuracy;
    r.true_novel = stream.novel_classes_through(static_cast<std::size_t>(r.stage)).size();
    r.storage = engine.storage();
  };

  {
    const auto t0 = Clock::now();
    run.initial = engine.run_initial_stage(stream.stages[0].rows, *stream.stages[0].labels);
    StageReport r;
    r.stage = 0;
    finish_stage(r);
    r.wall_seconds = seconds_since(t0);
    run.stages.push_back(r);
  }
  for (std::size_t t = 1; t < kStageCount; ++t) {
    const auto t0 = Clock::now();
    const auto out = engine.run_incremental_stage(stream.stages[t].rows, static_cast<int>(t));
    StageReport r;
    r.stage = static_cast<int>(t);
    r.estimated_novel = out.cluster_count;
    r.discovered_classes = out.discovered_total;
    r.split_known = out.split_known;
    r.split_novel = out.split_novel;
    r.parametric_split = out.parametric_split;
    r.ap_count = out.ap_count;
    r.ap_warning = out.ap_warning;
    r.training_samples = out.training_samples;
    finish_stage(r);
    r.wall_seconds = seconds_since(t0);
    run.stages.push_back(r);
  }
  run.summary = aggregate_predictions(run.predictions);
  return run;
}

std::string report_json(const RunResult& run) {
  ordered_json j;
  j["schema_version"] = kReportSchemaVersion;
  j["method"] = {{"ied", run.config.ablation.ied},
                 {"jdn", run.config.ablation.jdn},
                 {"cio", run.config.ablation.cio}};
  ordered_json cfg = ordered_json::object();
  for (const auto& [k, v] : config_echo(run.config)) cfg[k] = v;
  j["config"] = cfg;
  j["known_classes"] = run.known_classes;
  j["initial"] = {{"known_classes", run.initial.known_classes},
                  {"final_contrastive_loss", run.initial.final_contrastive_loss},
                  {"final_projector_loss", run.initial.final_projector_loss},
                  {"lambda", run.initial.lambda},
                  {"calibration_clusters", run.initial.calibration_clusters},
                  {"orthogonality", run.initial.orthogonality}};
  ordered_json stages = ordered_json::array();
  for (const auto& r : run.stages) {
    stages.push_back({{"stage", r.stage},
                      {"estimated_novel", r.estimated_novel},
                      {"true_novel", r.true_novel},
                      {"m_o", r.known_accuracy},
                      {"m_d", r.novel_accuracy ? ordered_json(*r.novel_accuracy) : ordered_json()},
                      {"discovered_classes", r.discovered_classes},
                      {"split_known", r.split_known},
                      {"split_novel", r.split_novel},
                      {"parametric_split", r.parametric_split},
                      {"ap_count", r.ap_count},
                      {"ap_warning", r.ap_warning},
                      {"training_samples", r.training_samples},
                      {"storage", storage_json(r.storage)}});
  }
  j["stages"] = stages;
  j["summary"] = {{"m_o", run.summary.m_o},
                  {"m_d", run.summary.m_d},
                  {"m_f", run.summary.m_f},
                  {"m_f_raw", run.summary.m_f_raw}};
  return j.dump(2) + "\n";
}

std::string timing_json(const RunResult& run) {
  ordered_json j = ordered_json::array();
  double total = 0.0;
  for (const auto& r : run.stages) {
    j.push_back({{"stage", r.stage}, {"wall_seconds", r.wall_seconds}});
    total += r.wall_seconds;
  }
  return ordered_json{{"stages", j}, {"total_seconds", total}}.dump(2) + "\n";
}

namespace {

std::string table_from_json(const ordered_json& j) {
  std::ostringstream out;
  const auto& m = j["method"];
  out << "method: ied=" << m["ied"] << " jdn=" << m["jdn"] << " cio=" << m["cio"]
      << "  lambda=" << fixed(j["initial"]["lambda"].get<double>()) << "\n";
  char line[200];
  std::snprintf(line, sizeof line, "%-6s %5s %6s %8s %8s %12s %12s %8s\n", "stage", "n", "true",
                "M_o^t", "M_d^t", "static_B", "dynamic_B", "ratio");
  out << line;
  for (const auto& s : j["stages"]) {
    const std::string md = s["m_d"].is_null() ? "-" : fixed(s["m_d"].get<double>());
    std::snprintf(line, sizeof line, "%-6d %5zu %6zu %8s %8s %12zu %12zu %8s\n",
                  s["stage"].get<int>(), s["estimated_novel"].get<std::size_t>(),
                  s["true_novel"].get<std::size_t>(), fixed(s["m_o"].get<double>()).c_str(),
                  md.c_str(), s["storage"]["static_pool_bytes"].get<std::size_t>(),
                  s["storage"]["dynamic_pool_bytes"].get<std::size_t>(),
                  fixed(s["storage"]["additional_ratio"].get<double>()).c_str());
    out << line;
  }
  const auto& sum = j["summary"];
  out << "M_o=" << fixed(sum["m_o"].get<double>()) << "  M_d=" << fixed(sum["m_d"].get<double>())
      << "  M_f=" << fixed(sum["m_f"].get<double>())
      << " (raw " << fixed(sum["m_f_raw"].get<double>()) << ")\n";
  return out.str();
}

}  // namespace

std::string report_table(const RunResult& run) {
  return table_from_json(ordered_json::parse(report_json(run)));
}

std::string render_report_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return table_from_json(ordered_json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_run(const RunResult& run, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream out(dir / name, std::ios::binary);
    out << text;
    if (!out) throw Error("cannot write " + (dir / name).string());
  };
  write("report.json", report_json(run));
  write("timing.json", timing_json(run));
  write("config.txt", to_config_text(run.config));
  std::ostringstream csv;
  csv << "stage,truth,predicted,known\n";
  for (const auto& p : run.predictions) {
    for (std::size_t i = 0; i < p.truth.size(); ++i) {
      csv << p.stage << ',' << p.truth[i] << ',' << p.predicted[i] << ',' << (p.known[i] ? 1 : 0)
          << '\n';
    }
  }
  write("predictions.csv", csv.str());
}

std::vector<StagePredictions> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "stage,truth,predicted,known") {
    throw FormatError(path.string() + ": missing predictions header");
  }
  std::map<int, StagePredictions> by_stage;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    int stage = 0, truth = 0, predicted = 0, known = 0;
    char tail = 0;
    if (std::sscanf(line.c_str(), "%d,%d,%d,%d%c", &stage, &truth, &predicted, &known, &tail) != 4 ||
        known < 0 || known > 1) {
      throw FormatError(path.string() + ": bad row " + std::to_string(row));
    }
    auto& p = by_stage[stage];
    p.stage = stage;
    p.truth.push_back(truth);
    p.predicted.push_back(predicted);
    p.known.push_back(known == 1);
  }
  std::vector<StagePredictions> out;
  for (auto& [s, p] : by_stage) out.push_back(std::move(p));
  return out;
}

}  // namespace ccd
