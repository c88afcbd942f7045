// ccd: generate streams, run the staged discovery protocol, recompute
// metrics from saved predictions and render reports.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "ccd/config.hpp"
#include "ccd/report.hpp"
#include "ccd/stream.hpp"

namespace fs = std::filesystem;

namespace {

fs::path default_output_dir() {
  if (const char* env = std::getenv("CCD_OUTPUT_DIR"); env && *env) return env;
  return "ccd_out";
}

void add_stream_options(CLI::App* cmd, ccd::StreamSpec& spec) {
  cmd->add_option("--classes", spec.total_classes, "total number of classes |C|");
  cmd->add_option("--known-fraction", spec.known_fraction, "fraction of classes known at stage 0");
  cmd->add_option("--samples-per-class", spec.samples_per_class, "samples per class (train + test)");
  cmd->add_option("--feature-dim", spec.feature_dim, "input feature dimension");
  cmd->add_option("--spread", spec.cluster_spread, "per-dimension class spread");
  cmd->add_option("--center-scale", spec.center_scale, "scale of the class centers");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual category discovery engine"};
  app.require_subcommand(1);

  // generate
  ccd::StreamSpec gen_spec;
  fs::path gen_out;
  std::string gen_format = "binary";
  auto* gen = app.add_subcommand("generate", "write a synthetic staged stream");
  add_stream_options(gen, gen_spec);
  gen->add_option("--seed", gen_spec.seed, "stream seed");
  gen->add_option("-o,--out", gen_out, "output directory (default $CCD_OUTPUT_DIR/stream)");
  gen->add_option("--format", gen_format, "binary or text")
      ->check(CLI::IsMember({"binary", "text"}));

  // run
  fs::path run_stream_dir;
  fs::path run_out;
  fs::path run_config_file;
  bool no_ied = false, no_jdn = false, no_cio = false;
  std::optional<std::uint64_t> run_seed;
  ccd::StreamSpec run_spec;
  std::optional<std::uint64_t> run_stream_seed;
  std::map<std::string, std::string> overrides;
  auto* run = app.add_subcommand("run", "run the staged protocol and write reports");
  run->add_option("--stream", run_stream_dir, "stream directory (default: generate in memory)");
  run->add_option("-o,--out", run_out, "output directory (default $CCD_OUTPUT_DIR/run)");
  run->add_option("--config", run_config_file, "key=value config file; flags override it");
  run->add_flag("--no-ied", no_ied, "disable independent enrichment of diversity");
  run->add_flag("--no-jdn", no_jdn, "disable joint discovery of novelty");
  run->add_flag("--no-cio", no_cio, "disable orthogonal prototypes and replay");
  run->add_option("--seed", run_seed, "engine seed");
  run->add_option("--stream-seed", run_stream_seed, "seed of the in-memory stream (default: --seed)");
  add_stream_options(run, run_spec);
  for (const auto& key : ccd::config_keys()) {
    if (key.name == "seed") continue;
    std::string flag = "--" + key.name;
    for (char& c : flag) c = c == '_' ? '-' : c;
    run->add_option_function<std::string>(
           flag, [&overrides, name = key.name](const std::string& v) { overrides[name] = v; },
           key.help)
        ->default_str(key.get(ccd::EngineConfig{}));
  }

  // evaluate
  fs::path eval_path;
  auto* eval = app.add_subcommand("evaluate", "recompute metrics from saved predictions");
  eval->add_option("predictions", eval_path, "predictions.csv or a run directory")->required();

  // report
  std::vector<fs::path> report_paths;
  auto* report = app.add_subcommand("report", "render saved reports as tables");
  report->add_option("reports", report_paths, "report.json files or run directories")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      if (gen_out.empty()) gen_out = default_output_dir() / "stream";
      const auto stream = ccd::generate_stream(gen_spec);
      ccd::save_stream(stream, gen_out,
                       gen_format == "text" ? ccd::EmbeddingFormat::kText : ccd::EmbeddingFormat::kBinary);
      std::cout << "wrote stream to " << gen_out.string() << "\n";
    } else if (*run) {
      ccd::EngineConfig config;
      if (!run_config_file.empty()) ccd::apply_config_file(config, run_config_file);
      for (const auto& [k, v] : overrides) ccd::set_config_value(config, k, v);
      if (no_ied) config.ablation.ied = false;
      if (no_jdn) config.ablation.jdn = false;
      if (no_cio) config.ablation.cio = false;
      if (run_seed) config.seed = *run_seed;
      config.validate();

      ccd::Stream stream;
      if (run_stream_dir.empty()) {
        run_spec.seed = run_stream_seed.value_or(config.seed);
        stream = ccd::generate_stream(run_spec);
      } else {
        stream = ccd::load_stream(run_stream_dir);
      }
      if (run_out.empty()) run_out = default_output_dir() / "run";
      const auto result = ccd::run_stream(stream, config);
      ccd::write_run(result, run_out);
      std::cout << ccd::report_table(result);
      std::cout << "wrote run to " << run_out.string() << "\n";
    } else if (*eval) {
      fs::path p = eval_path;
      if (fs::is_directory(p)) p /= "predictions.csv";
      const auto stages = ccd::read_predictions(p);
      for (const auto& s : stages) {
        const auto m = ccd::metrics_from_predictions(s);
        std::cout << "stage " << m.stage << ": M_o^t=" << m.known_accuracy;
        if (m.novel_accuracy) std::cout << " M_d^t=" << *m.novel_accuracy;
        std::cout << "\n";
      }
      const auto agg = ccd::aggregate_predictions(stages);
      std::cout << "M_o=" << agg.m_o << " M_d=" << agg.m_d << " M_f=" << agg.m_f
                << " (raw " << agg.m_f_raw << ")\n";
    } else if (*report) {
      for (auto p : report_paths) {
        if (fs::is_directory(p)) p /= "report.json";
        std::cout << "== " << p.string() << "\n" << ccd::render_report_file(p);
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
