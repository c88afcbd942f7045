#include "ccd/embeddings.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "ccd/binary_io.hpp"

namespace ccd {
namespace {

constexpr char kMagic[4] = {'C', 'C', 'D', 'E'};
constexpr std::uint8_t kVersion = 1;

std::string row_error(std::size_t row, const std::string& what) {
  return "embeddings: row " + std::to_string(row) + ": " + what;
}

void check_row(const Vector& v, std::size_t row) {
  for (double x : v) {
    if (!std::isfinite(x)) throw FormatError(row_error(row, "non-finite value"));
  }
}

void check_batch(const EmbeddingBatch& batch) {
  if (batch.labels && batch.labels->size() != batch.rows.size()) {
    throw DimensionMismatch("embeddings: label count differs from row count");
  }
  for (std::size_t i = 0; i < batch.rows.size(); ++i) {
    if (batch.rows[i].size() != batch.dim) throw DimensionMismatch(row_error(i, "wrong dimension"));
    check_row(batch.rows[i], i);
  }
}

std::size_t parse_header_field(const std::string& field, const std::string& key) {
  if (field.rfind(key + "=", 0) != 0) throw FormatError("embeddings: bad header, expected " + key);
  const std::string value = field.substr(key.size() + 1);
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw FormatError("embeddings: bad header value for " + key);
  }
  return out;
}

}  // namespace

EmbeddingBatch read_embeddings_text(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("embeddings: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto comma = line.find(',');
  if (comma == std::string::npos) throw FormatError("embeddings: bad header");
  EmbeddingBatch batch;
  batch.dim = parse_header_field(line.substr(0, comma), "dim");
  const std::size_t labeled = parse_header_field(line.substr(comma + 1), "labeled");
  if (batch.dim == 0) throw FormatError("embeddings: dim must be positive");
  if (labeled > 1) throw FormatError("embeddings: labeled must be 0 or 1");
  if (labeled) batch.labels.emplace();

  const std::size_t columns = batch.dim + labeled;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != columns) {
      throw DimensionMismatch(row_error(row, "expected " + std::to_string(columns) +
                                                 " columns, got " + std::to_string(cells.size())));
    }
    Vector v(batch.dim);
    for (std::size_t d = 0; d < batch.dim; ++d) {
      try {
        std::size_t used = 0;
        v[d] = std::stod(cells[d], &used);
        if (used != cells[d].size()) throw std::invalid_argument(cells[d]);
      } catch (const std::exception&) {
        throw FormatError(row_error(row, "cannot parse '" + cells[d] + "'"));
      }
    }
    check_row(v, row);
    if (labeled) {
      int label = 0;
      const auto& s = cells.back();
      const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), label);
      if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw FormatError(row_error(row, "bad label '" + s + "'"));
      }
      batch.labels->push_back(label);
    }
    batch.rows.push_back(std::move(v));
    ++row;
  }
  return batch;
}

EmbeddingBatch read_embeddings_binary(std::istream& in) {
  BinaryReader r(in);
  r.expect_magic(kMagic);
  const std::uint8_t version = r.u8();
  if (version != kVersion) {
    throw FormatError("embeddings: unsupported version " + std::to_string(version));
  }
  const std::size_t count = r.u32();
  EmbeddingBatch batch;
  batch.dim = r.u32();
  const std::uint8_t labeled = r.u8();
  if (labeled > 1) throw FormatError("embeddings: bad labeled flag");
  batch.rows.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Vector v(batch.dim);
    for (double& x : v) x = r.f32();
    check_row(v, i);
    batch.rows.push_back(std::move(v));
  }
  if (labeled) {
    batch.labels.emplace(count);
    for (auto& l : *batch.labels) l = r.i32();
  }
  return batch;
}

void write_embeddings_text(std::ostream& out, const EmbeddingBatch& batch) {
  check_batch(batch);
  out << "dim=" << batch.dim << ",labeled=" << (batch.labels ? 1 : 0) << '\n';
  std::ostringstream line;
  line.precision(17);
  for (std::size_t i = 0; i < batch.rows.size(); ++i) {
    line.str("");
    for (std::size_t d = 0; d < batch.dim; ++d) line << (d ? "," : "") << batch.rows[i][d];
    if (batch.labels) line << ',' << (*batch.labels)[i];
    out << line.str() << '\n';
  }
}

void write_embeddings_binary(std::ostream& out, const EmbeddingBatch& batch) {
  check_batch(batch);
  BinaryWriter w(out);
  w.bytes(kMagic, 4);
  w.u8(kVersion);
  w.u32(static_cast<std::uint32_t>(batch.rows.size()));
  w.u32(static_cast<std::uint32_t>(batch.dim));
  w.u8(batch.labels ? 1 : 0);
  for (const auto& row : batch.rows) {
    for (double x : row) w.f32(static_cast<float>(x));
  }
  if (batch.labels) {
    for (Label l : *batch.labels) w.i32(l);
  }
}

EmbeddingBatch load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  char head[4] = {};
  in.read(head, 4);
  const bool binary = in.gcount() == 4 && std::equal(head, head + 4, kMagic);
  in.clear();
  in.seekg(0);
  return binary ? read_embeddings_binary(in) : read_embeddings_text(in);
}

void save_embeddings(const std::filesystem::path& path, const EmbeddingBatch& batch,
                     EmbeddingFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  if (format == EmbeddingFormat::kBinary) {
    write_embeddings_binary(out, batch);
  } else {
    write_embeddings_text(out, batch);
  }
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace ccd
