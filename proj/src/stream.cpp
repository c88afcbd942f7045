#include "ccd/stream.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <string>

namespace ccd {

void StreamSpec::validate() const {
  if (total_classes < 2) throw ConfigError("stream: need at least 2 classes");
  if (!(known_fraction > 0.0 && known_fraction < 1.0)) {
    throw ConfigError("stream: known_fraction must lie in (0, 1)");
  }
  if (!(cluster_spread > 0.0)) throw ConfigError("stream: cluster_spread must be positive");
  if (!(center_scale > 0.0)) throw ConfigError("stream: center_scale must be positive");
  if (feature_dim == 0) throw ConfigError("stream: feature_dim must be positive");
  if (samples_per_class < 2) throw ConfigError("stream: samples_per_class must be at least 2");
}

void StageSplitTable::validate() const {
  for (const auto& row : percent) {
    if (std::accumulate(row.begin(), row.end(), 0) != 100) {
      throw ConfigError("stage split table: a row does not sum to 100");
    }
    for (int p : row) {
      if (p < 0) throw ConfigError("stage split table: negative percentage");
    }
  }
}

std::size_t class_block(std::size_t c, std::size_t n, const StageSplitTable& table) {
  // Position (c + 1) / n, compared in integers against bounds rounded the
  // same way the block boundaries 0.7|C|, 0.8|C|, 0.9|C| are.
  for (std::size_t b = 0; b < table.upper_bounds.size(); ++b) {
    const auto edge = static_cast<std::size_t>(std::llround(table.upper_bounds[b] * static_cast<double>(n)));
    if (c + 1 <= edge) return b;
  }
  return table.upper_bounds.size();
}

std::vector<std::size_t> apportion(std::size_t total, std::span<const int> percent) {
  std::vector<std::size_t> out(percent.size());
  std::vector<std::pair<std::size_t, std::size_t>> remainders;  // (remainder*100, index)
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < percent.size(); ++i) {
    const std::size_t exact = total * static_cast<std::size_t>(percent[i]);
    out[i] = exact / 100;
    assigned += out[i];
    remainders.emplace_back(exact % 100, i);
  }
  // Largest remainder first; earlier stage wins ties.
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < total; ++r, ++assigned) ++out[remainders[r].second];
  return out;
}

std::vector<Label> Stream::novel_classes_through(std::size_t t) const {
  const std::set<Label> known(known_classes.begin(), known_classes.end());
  std::set<Label> seen;
  for (std::size_t s = 1; s <= t && s < kStageCount; ++s) {
    for (Label l : *stages[s].labels) {
      if (!known.contains(l)) seen.insert(l);
    }
  }
  return {seen.begin(), seen.end()};
}

Stream generate_stream(const StreamSpec& spec, const StageSplitTable& table) {
  spec.validate();
  table.validate();
  StageSplitTable effective = table;
  effective.upper_bounds[0] = spec.known_fraction;

  Rng rng(spec.seed);
  Stream stream;
  stream.spec = spec;
  for (auto& s : stream.stages) {
    s.dim = spec.feature_dim;
    s.labels.emplace();
  }
  stream.test.dim = spec.feature_dim;
  stream.test.labels.emplace();

  auto add = [](EmbeddingBatch& b, Vector v, Label l) {
    b.rows.push_back(std::move(v));
    b.labels->push_back(l);
  };

  const std::size_t n_test = spec.samples_per_class / 2;
  const std::size_t n_train = spec.samples_per_class - n_test;
  for (std::size_t c = 0; c < spec.total_classes; ++c) {
    const Label label = static_cast<Label>(c);
    const std::size_t block = class_block(c, spec.total_classes, effective);
    if (block == 0) stream.known_classes.push_back(label);

    Vector center(spec.feature_dim);
    for (double& x : center) x = spec.center_scale * rng.normal();
    std::vector<Vector> samples(spec.samples_per_class);
    for (auto& s : samples) {
      s.resize(spec.feature_dim);
      // Stored as float32 so the binary stream files round-trip exactly.
      for (std::size_t d = 0; d < spec.feature_dim; ++d) {
        s[d] = static_cast<float>(center[d] + spec.cluster_spread * rng.normal());
      }
    }

    const auto counts = apportion(n_train, effective.percent[block]);
    for (std::size_t t = 0; t < kStageCount; ++t) {
      if (effective.percent[block][t] > 0 && counts[t] == 0) {
        throw ConfigError("stream: samples_per_class " + std::to_string(spec.samples_per_class) +
                          " leaves stage " + std::to_string(t) + " of class " + std::to_string(c) +
                          " without a sample");
      }
    }
    std::size_t next = 0;
    for (std::size_t t = 0; t < kStageCount; ++t) {
      for (std::size_t i = 0; i < counts[t]; ++i) add(stream.stages[t], samples[next++], label);
    }
    for (; next < samples.size(); ++next) add(stream.test, samples[next], label);
  }

  // Unlabeled stages arrive in arbitrary order.
  for (std::size_t t = 1; t < kStageCount; ++t) {
    auto& b = stream.stages[t];
    const auto perm = rng.permutation(b.size());
    EmbeddingBatch shuffled{b.dim, {}, std::vector<Label>{}};
    for (std::size_t i : perm) add(shuffled, b.rows[i], (*b.labels)[i]);
    b = std::move(shuffled);
  }
  return stream;
}

namespace {

std::string stage_file(std::size_t t, EmbeddingFormat f) {
  return "stage" + std::to_string(t) + (f == EmbeddingFormat::kBinary ? ".ccde" : ".csv");
}

std::string test_file(EmbeddingFormat f) {
  return f == EmbeddingFormat::kBinary ? "test.ccde" : "test.csv";
}

}  // namespace

void save_stream(const Stream& stream, const std::filesystem::path& dir, EmbeddingFormat format) {
  std::filesystem::create_directories(dir);
  for (std::size_t t = 0; t < kStageCount; ++t) {
    save_embeddings(dir / stage_file(t, format), stream.stages[t], format);
  }
  save_embeddings(dir / test_file(format), stream.test, format);
  std::ofstream m(dir / "stream.txt");
  const auto& s = stream.spec;
  m << "format=" << (format == EmbeddingFormat::kBinary ? "binary" : "text") << '\n'
    << "total_classes=" << s.total_classes << '\n'
    << "known_fraction=" << s.known_fraction << '\n'
    << "samples_per_class=" << s.samples_per_class << '\n'
    << "feature_dim=" << s.feature_dim << '\n'
    << "cluster_spread=" << s.cluster_spread << '\n'
    << "center_scale=" << s.center_scale << '\n'
    << "seed=" << s.seed << '\n'
    << "known_classes=";
  for (std::size_t i = 0; i < stream.known_classes.size(); ++i) {
    m << (i ? "," : "") << stream.known_classes[i];
  }
  m << '\n';
  if (!m) throw Error("cannot write stream manifest in " + dir.string());
}

Stream load_stream(const std::filesystem::path& dir) {
  std::ifstream m(dir / "stream.txt");
  if (!m) throw Error("missing stream manifest in " + dir.string());
  Stream stream;
  EmbeddingFormat format = EmbeddingFormat::kBinary;
  std::string line;
  while (std::getline(m, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    auto& s = stream.spec;
    try {
      if (key == "format") format = value == "text" ? EmbeddingFormat::kText : EmbeddingFormat::kBinary;
      else if (key == "total_classes") s.total_classes = std::stoul(value);
      else if (key == "known_fraction") s.known_fraction = std::stod(value);
      else if (key == "samples_per_class") s.samples_per_class = std::stoul(value);
      else if (key == "feature_dim") s.feature_dim = std::stoul(value);
      else if (key == "cluster_spread") s.cluster_spread = std::stod(value);
      else if (key == "center_scale") s.center_scale = std::stod(value);
      else if (key == "seed") s.seed = std::stoull(value);
      else if (key == "known_classes") {
        std::size_t pos = 0;
        while (pos < value.size()) {
          const auto comma = value.find(',', pos);
          stream.known_classes.push_back(std::stoi(value.substr(pos, comma - pos)));
          if (comma == std::string::npos) break;
          pos = comma + 1;
        }
      }
    } catch (const std::exception&) {
      throw FormatError("stream manifest: bad value for " + key);
    }
  }
  for (std::size_t t = 0; t < kStageCount; ++t) {
    stream.stages[t] = load_embeddings(dir / stage_file(t, format));
    if (!stream.stages[t].labels) {
      throw FormatError("stream: stage files must carry labels for evaluation");
    }
  }
  stream.test = load_embeddings(dir / test_file(format));
  if (!stream.test.labels) throw FormatError("stream: test file must carry labels");
  return stream;
}

}  // namespace ccd
