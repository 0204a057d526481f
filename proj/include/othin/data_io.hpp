#pragma once
// Stream readers and writers: CSV and the "OTHN" binary format in, JSON-lines
// flag records out; plus the Anscombe transform for count data.
//
// Binary layout (little-endian): "OTHN", u32 version (1), u32 p, then
// observations back to back, p doubles each (column-major batches).

#include <cstdint>
#include <fstream>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "othin/engine.hpp"

namespace othin {

enum class StreamFormat { Csv, Binary };

/// "csv" / "bin"; otherwise inferred from the file extension (.bin/.othn).
StreamFormat parse_stream_format(const std::string& name);
StreamFormat infer_stream_format(const std::string& path);

struct ReaderOptions {
  StreamFormat format = StreamFormat::Csv;
  Eigen::Index batch_size = 1;   // ignored when time_column is set
  bool header = false;           // CSV: skip the first line
  bool time_column = false;      // CSV: leading column is the time index; batches break when it changes
};

/// Sequential batch iterator over a CSV or binary observation stream.
class StreamReader {
 public:
  StreamReader(const std::string& path, ReaderOptions options);
  StreamReader(std::unique_ptr<std::istream> in, ReaderOptions options);
  ~StreamReader();
  StreamReader(StreamReader&&) noexcept;
  StreamReader& operator=(StreamReader&&) noexcept;

  /// Next batch, or nullopt at end of stream. Throws ParseError on malformed
  /// input (with the line or record number) and on dimension drift.
  std::optional<ObservationBatch> next();

  /// Dimension once known (after the first row / the binary header).
  std::optional<Eigen::Index> dim() const { return dim_; }

  /// Reads up to `count` rows as one p x count matrix (fewer at end of stream).
  Matrix read_rows(Eigen::Index count);

 private:
  struct Row {
    std::int64_t time = 0;
    Vector values;
  };
  std::optional<Row> next_row();

  std::unique_ptr<std::istream> in_;
  ReaderOptions options_;
  std::optional<Eigen::Index> dim_;
  std::size_t line_ = 0;
  std::int64_t batch_counter_ = 0;
  std::int64_t row_counter_ = 0;
  std::optional<Row> pending_;
  bool header_done_ = false;
};

/// Reads a whole stream into one p x N matrix.
Matrix read_matrix(const std::string& path, ReaderOptions options);

void write_csv(std::ostream& out, const Matrix& columns);
void write_binary(std::ostream& out, const Matrix& columns);
void write_matrix(const std::string& path, const Matrix& columns, StreamFormat format);

/// {"t":int,"i":int,"score":float,"leaf":int}
std::string flag_record_json(const ScoredObservation& so);
void write_flags(std::ostream& out, std::span<const ScoredObservation> records);
void write_flags(const std::string& path, std::span<const ScoredObservation> records);

/// Elementwise 2 sqrt(y + 3/8). Throws std::invalid_argument on negative or
/// non-integer counts.
Vector anscombe(const Vector& counts);
Matrix anscombe(const Matrix& counts);

}  // namespace othin
