#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "ccd/config.hpp"
#include "ccd/embeddings.hpp"
#include "ccd/errors.hpp"
#include "ccd/report.hpp"
#include "ccd/stream.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace ccd;
namespace fs = std::filesystem;

namespace {

std::size_t count_label(const EmbeddingBatch& b, Label l) {
  return static_cast<std::size_t>(std::count(b.labels->begin(), b.labels->end(), l));
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ccd_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Same keys and value kinds at every level; array lengths may differ.
bool same_shape(const nlohmann::json& a, const nlohmann::json& b) {
  if (a.is_number() && b.is_number()) return true;
  if (a.type() != b.type()) return a.is_null() || b.is_null();
  if (a.is_object()) {
    if (a.size() != b.size()) return false;
    for (auto it = a.begin(); it != a.end(); ++it) {
      if (!b.contains(it.key()) || !same_shape(it.value(), b.at(it.key()))) return false;
    }
  }
  if (a.is_array() && !a.empty() && !b.empty()) return same_shape(a.front(), b.front());
  return true;
}

StreamSpec small_spec() {
  StreamSpec s;
  s.total_classes = 10;
  s.samples_per_class = 40;
  s.seed = 2;
  return s;
}

}  // namespace

TEST_CASE("largest remainder apportionment") {
  const std::vector<int> known{87, 7, 3, 3};
  CHECK(apportion(30, known) == std::vector<std::size_t>{26, 2, 1, 1});
  CHECK(apportion(30, std::vector<int>{0, 70, 20, 10}) == std::vector<std::size_t>{0, 21, 6, 3});
  CHECK(apportion(30, std::vector<int>{0, 0, 90, 10}) == std::vector<std::size_t>{0, 0, 27, 3});
  CHECK(apportion(30, std::vector<int>{0, 0, 0, 100}) == std::vector<std::size_t>{0, 0, 0, 30});
  CHECK(apportion(2, std::vector<int>{50, 50, 0, 0}) == std::vector<std::size_t>{1, 1, 0, 0});
  // Ties go to the earlier stage.
  CHECK(apportion(1, std::vector<int>{50, 50, 0, 0}) == std::vector<std::size_t>{1, 0, 0, 0});
}

TEST_CASE("class blocks follow the split table bounds") {
  const StageSplitTable table;
  for (std::size_t c = 0; c < 14; ++c) CHECK(class_block(c, 20, table) == 0);
  CHECK(class_block(14, 20, table) == 1);
  CHECK(class_block(15, 20, table) == 1);
  CHECK(class_block(16, 20, table) == 2);
  CHECK(class_block(19, 20, table) == 3);
  for (std::size_t c = 0; c < 7; ++c) CHECK(class_block(c, 10, table) == 0);
  CHECK(class_block(7, 10, table) == 1);
  CHECK(class_block(8, 10, table) == 2);
  CHECK(class_block(9, 10, table) == 3);
}

TEST_CASE("default stream has the tabulated per-stage counts") {
  const Stream s = generate_stream(StreamSpec{});
  CHECK(s.known_classes.size() == 14);
  CHECK(s.stages[0].size() == 14 * 26);
  CHECK(s.stages[1].size() == 14 * 2 + 2 * 21);
  CHECK(s.stages[2].size() == 14 + 2 * 6 + 2 * 27);
  CHECK(s.stages[3].size() == 14 + 2 * 3 + 2 * 3 + 2 * 30);
  CHECK(s.test.size() == 20 * 30);
  CHECK(count_label(s.stages[0], 0) == 26);
  CHECK(count_label(s.stages[1], 14) == 21);
  CHECK(count_label(s.stages[2], 16) == 27);
  CHECK(count_label(s.stages[3], 18) == 30);
  CHECK(count_label(s.stages[1], 16) == 0);
  CHECK(s.novel_classes_through(1).size() == 2);
  CHECK(s.novel_classes_through(2).size() == 4);
  CHECK(s.novel_classes_through(3).size() == 6);
  for (const auto& stage : s.stages) {
    for (const auto& row : stage.rows) {
      CHECK(row.size() == 16);
      for (double v : row) CHECK(static_cast<double>(static_cast<float>(v)) == v);
    }
  }
}

TEST_CASE("stream generation is deterministic in the seed") {
  const Stream a = generate_stream(small_spec());
  const Stream b = generate_stream(small_spec());
  for (std::size_t t = 0; t < kStageCount; ++t) CHECK(a.stages[t] == b.stages[t]);
  CHECK(a.test == b.test);
  auto other = small_spec();
  other.seed = 3;
  CHECK_FALSE(generate_stream(other).stages[1] == a.stages[1]);
}

TEST_CASE("stream generation rejects stages left without samples") {
  auto spec = small_spec();
  spec.samples_per_class = 4;
  CHECK_THROWS_AS(generate_stream(spec), ConfigError);
  spec = small_spec();
  spec.known_fraction = 1.5;
  CHECK_THROWS_AS(generate_stream(spec), ConfigError);
}

TEST_CASE("embedding files round-trip in both formats") {
  Rng rng(1);
  EmbeddingBatch b;
  b.dim = 5;
  for (int i = 0; i < 12; ++i) {
    Vector v(5);
    // The binary format stores f32, so draw f32-representable values.
    for (double& x : v) x = static_cast<float>(rng.normal() * 1e3);
    b.rows.push_back(v);
  }
  b.labels = std::vector<Label>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, -1};
  for (auto fmt : {EmbeddingFormat::kText, EmbeddingFormat::kBinary}) {
    const fs::path p = scratch_dir("emb") / (fmt == EmbeddingFormat::kText ? "x.csv" : "x.ccde");
    save_embeddings(p, b, fmt);
    CHECK(load_embeddings(p) == b);
  }
  EmbeddingBatch unlabeled = b;
  unlabeled.labels.reset();
  std::stringstream ss;
  write_embeddings_binary(ss, unlabeled);
  CHECK(read_embeddings_binary(ss) == unlabeled);
}

TEST_CASE("embedding readers report bad rows") {
  std::istringstream nan_row("dim=2,labeled=0\n0.5,1.0\nnan,1.0\n");
  try {
    read_embeddings_text(nan_row);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find('1') != std::string::npos);
  }
  std::istringstream short_row("dim=3,labeled=0\n0.5,1.0\n");
  CHECK_THROWS_AS(read_embeddings_text(short_row), DimensionMismatch);
}

TEST_CASE("config text sets keys and rejects unknown ones") {
  EngineConfig c;
  apply_config_text(c, "# comment\ntau = 0.2\nk=7\nap_preference=-3.5\ncio=false\nbackbone_hidden=16,8\n");
  CHECK(c.tau == 0.2);
  CHECK(c.discovery.k == 7);
  CHECK(c.discovery.ap.preference == -3.5);
  CHECK_FALSE(c.ablation.cio);
  CHECK(c.backbone_hidden == std::vector<std::size_t>{16, 8});
  set_config_value(c, "ap_preference", "median");
  CHECK_FALSE(c.discovery.ap.preference.has_value());

  CHECK_THROWS_AS(set_config_value(c, "no_such_key", "1"), ConfigError);
  CHECK_THROWS_AS(set_config_value(c, "k", "-2"), ConfigError);
  CHECK_THROWS_AS(set_config_value(c, "tau", "fast"), ConfigError);
  CHECK_THROWS_AS(apply_config_text(c, "tau 0.2\n"), ConfigError);

  EngineConfig back;
  apply_config_text(back, to_config_text(c));
  CHECK(config_echo(back) == config_echo(c));
  std::set<std::string> names;
  for (const auto& key : config_keys()) CHECK(names.insert(key.name).second);
}

TEST_CASE("reports share one schema across ablations and predictions round-trip") {
  const Stream stream = generate_stream(small_spec());
  nlohmann::json reference;
  for (int variant = 0; variant < 4; ++variant) {
    EngineConfig cfg;
    cfg.seed = 1;
    if (variant == 1) cfg.ablation.ied = false;
    if (variant == 2) cfg.ablation.jdn = false;
    if (variant == 3) cfg.ablation.cio = false;
    const RunResult run = run_stream(stream, cfg);
    const auto doc = nlohmann::json::parse(report_json(run));
    CHECK(doc.at("schema_version") == kReportSchemaVersion);
    CHECK(doc.at("stages").size() == kStageCount);
    if (variant == 0) {
      reference = doc;
      const fs::path dir = scratch_dir("run");
      write_run(run, dir);
      const auto preds = read_predictions(dir / "predictions.csv");
      REQUIRE(preds.size() == run.predictions.size());
      for (std::size_t t = 0; t < preds.size(); ++t) {
        CHECK(preds[t].stage == run.predictions[t].stage);
        CHECK(preds[t].truth == run.predictions[t].truth);
        CHECK(preds[t].predicted == run.predictions[t].predicted);
        CHECK(preds[t].known == run.predictions[t].known);
      }
      const auto agg = aggregate_predictions(preds);
      CHECK(agg.m_o == run.summary.m_o);
      CHECK(agg.m_d == run.summary.m_d);
      CHECK_FALSE(render_report_file(dir / "report.json").empty());
    } else {
      CHECK(same_shape(reference, doc));
    }
  }
}
