#include "othin/data_io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "othin/errors.hpp"

namespace othin {
namespace {

constexpr char kMagic[4] = {'O', 'T', 'H', 'N'};
constexpr std::uint32_t kBinaryVersion = 1;

static_assert(std::endian::native == std::endian::little, "binary stream I/O assumes a little-endian host");

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<double> parse_csv_line(std::string_view line, std::size_t line_no) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= line.size()) {
    const std::size_t comma = line.find(',', start);
    const std::string_view field = trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (field.empty()) throw ParseError(line_no, "empty field");
    double v = 0.0;
    const char* first = field.data();
    if (*first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, field.data() + field.size(), v);
    if (ec != std::errc() || ptr != field.data() + field.size()) {
      throw ParseError(line_no, "not a number: '" + std::string(field) + "'");
    }
    out.push_back(v);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw ParseError(0, "truncated binary header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
                              static_cast<unsigned char>((v >> 16) & 0xff), static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

StreamFormat parse_stream_format(const std::string& name) {
  if (name == "csv") return StreamFormat::Csv;
  if (name == "bin" || name == "binary") return StreamFormat::Binary;
  throw std::invalid_argument("unknown stream format: " + name);
}

StreamFormat infer_stream_format(const std::string& path) {
  auto ends_with = [&](const char* ext) {
    const std::size_t n = std::strlen(ext);
    return path.size() >= n && path.compare(path.size() - n, n, ext) == 0;
  };
  return ends_with(".bin") || ends_with(".othn") ? StreamFormat::Binary : StreamFormat::Csv;
}

StreamReader::StreamReader(const std::string& path, ReaderOptions options)
    : options_(options) {
  auto file = std::make_unique<std::ifstream>(path, std::ios::binary);
  if (!*file) throw std::runtime_error("cannot open input: " + path);
  in_ = std::move(file);
  if (options_.batch_size < 1 && !options_.time_column) throw std::invalid_argument("batch size must be >= 1");
}

StreamReader::StreamReader(std::unique_ptr<std::istream> in, ReaderOptions options)
    : in_(std::move(in)), options_(options) {
  if (options_.batch_size < 1 && !options_.time_column) throw std::invalid_argument("batch size must be >= 1");
}

StreamReader::~StreamReader() = default;
StreamReader::StreamReader(StreamReader&&) noexcept = default;
StreamReader& StreamReader::operator=(StreamReader&&) noexcept = default;

std::optional<StreamReader::Row> StreamReader::next_row() {
  if (pending_) {
    auto r = std::move(pending_);
    pending_.reset();
    return r;
  }
  if (options_.format == StreamFormat::Binary) {
    if (!header_done_) {
      header_done_ = true;
      char magic[4];
      in_->read(magic, 4);
      if (in_->gcount() == 0) return std::nullopt;  // empty file
      if (in_->gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0) throw ParseError(0, "bad binary magic");
      const std::uint32_t version = read_u32(*in_);
      if (version != kBinaryVersion) throw ParseError(0, "unsupported binary version " + std::to_string(version));
      const std::uint32_t p = read_u32(*in_);
      if (p == 0) throw ParseError(0, "binary stream declares p = 0");
      dim_ = static_cast<Eigen::Index>(p);
    }
    Row row;
    row.values.resize(*dim_);
    in_->read(reinterpret_cast<char*>(row.values.data()), static_cast<std::streamsize>(sizeof(double) * *dim_));
    const auto got = in_->gcount();
    if (got == 0) return std::nullopt;
    ++line_;
    if (got != static_cast<std::streamsize>(sizeof(double) * *dim_)) throw ParseError(line_, "truncated binary record");
    row.time = row_counter_++;
    return row;
  }

  std::string line;
  while (std::getline(*in_, line)) {
    ++line_;
    if (options_.header && !header_done_) {
      header_done_ = true;
      continue;
    }
    header_done_ = true;
    if (trim(line).empty()) continue;
    std::vector<double> fields = parse_csv_line(line, line_);
    Row row;
    std::size_t offset = 0;
    if (options_.time_column) {
      if (fields.size() < 2) throw ParseError(line_, "row has no values after the time column");
      const double t = fields[0];
      if (t != std::floor(t) || !std::isfinite(t)) throw ParseError(line_, "time index is not an integer");
      row.time = static_cast<std::int64_t>(t);
      offset = 1;
    } else {
      row.time = row_counter_;
    }
    ++row_counter_;
    const auto p = static_cast<Eigen::Index>(fields.size() - offset);
    if (dim_ && *dim_ != p) {
      throw ParseError(line_, "row has " + std::to_string(p) + " values, expected " + std::to_string(*dim_));
    }
    dim_ = p;
    row.values = Eigen::Map<const Vector>(fields.data() + offset, p);
    return row;
  }
  return std::nullopt;
}

std::optional<ObservationBatch> StreamReader::next() {
  std::vector<Vector> cols;
  std::int64_t time = batch_counter_;
  if (options_.time_column) {
    auto first = next_row();
    if (!first) return std::nullopt;
    time = first->time;
    cols.push_back(std::move(first->values));
    while (auto row = next_row()) {
      if (row->time != time) {
        pending_ = std::move(row);
        break;
      }
      cols.push_back(std::move(row->values));
    }
  } else {
    while (static_cast<Eigen::Index>(cols.size()) < options_.batch_size) {
      auto row = next_row();
      if (!row) break;
      cols.push_back(std::move(row->values));
    }
    if (cols.empty()) return std::nullopt;
  }
  ObservationBatch batch;
  batch.time_index = time;
  batch.data.resize(*dim_, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) batch.data.col(static_cast<Eigen::Index>(c)) = cols[c];
  ++batch_counter_;
  return batch;
}

Matrix StreamReader::read_rows(Eigen::Index count) {
  std::vector<Vector> cols;
  while (static_cast<Eigen::Index>(cols.size()) < count) {
    auto row = next_row();
    if (!row) break;
    cols.push_back(std::move(row->values));
  }
  Matrix out(dim_.value_or(0), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) out.col(static_cast<Eigen::Index>(c)) = cols[c];
  return out;
}

Matrix read_matrix(const std::string& path, ReaderOptions options) {
  options.time_column = false;
  StreamReader reader(path, options);
  return reader.read_rows(std::numeric_limits<Eigen::Index>::max());
}

void write_csv(std::ostream& out, const Matrix& columns) {
  char buf[64];
  for (Eigen::Index c = 0; c < columns.cols(); ++c) {
    for (Eigen::Index r = 0; r < columns.rows(); ++r) {
      const auto res = std::to_chars(buf, buf + sizeof(buf), columns(r, c));
      if (r > 0) out.put(',');
      out.write(buf, res.ptr - buf);
    }
    out.put('\n');
  }
}

void write_binary(std::ostream& out, const Matrix& columns) {
  out.write(kMagic, 4);
  write_u32(out, kBinaryVersion);
  write_u32(out, static_cast<std::uint32_t>(columns.rows()));
  out.write(reinterpret_cast<const char*>(columns.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(columns.size())));
}

void write_matrix(const std::string& path, const Matrix& columns, StreamFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open output: " + path);
  if (format == StreamFormat::Binary) {
    write_binary(out, columns);
  } else {
    write_csv(out, columns);
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::string flag_record_json(const ScoredObservation& so) {
  char buf[64];
  std::string out = "{\"t\":" + std::to_string(so.time_index) + ",\"i\":" + std::to_string(so.column_index) +
                    ",\"score\":";
  if (std::isfinite(so.score)) {
    const auto res = std::to_chars(buf, buf + sizeof(buf), so.score);
    out.append(buf, res.ptr);
  } else {
    // JSON has no infinity; quarantined observations report a null score.
    out += "null";
  }
  out += ",\"leaf\":" + std::to_string(so.assigned_leaf) + "}";
  return out;
}

void write_flags(std::ostream& out, std::span<const ScoredObservation> records) {
  for (const auto& so : records) out << flag_record_json(so) << '\n';
}

void write_flags(const std::string& path, std::span<const ScoredObservation> records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open output: " + path);
  write_flags(out, records);
}

Vector anscombe(const Vector& counts) {
  Vector out(counts.size());
  for (Eigen::Index i = 0; i < counts.size(); ++i) {
    const double y = counts[i];
    if (!(y >= 0.0)) throw std::invalid_argument("anscombe: counts must be non-negative");
    if (y != std::floor(y)) throw std::invalid_argument("anscombe: counts must be integers");
    out[i] = 2.0 * std::sqrt(y + 0.375);
  }
  return out;
}

Matrix anscombe(const Matrix& counts) {
  Matrix out(counts.rows(), counts.cols());
  for (Eigen::Index c = 0; c < counts.cols(); ++c) out.col(c) = anscombe(Vector(counts.col(c)));
  return out;
}

}  // namespace othin
