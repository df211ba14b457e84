#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ghn {

std::string base64_encode(const uint8_t* data, size_t len);
std::vector<uint8_t> base64_decode(const std::string& text);

/// Little-endian byte image of a double buffer, and back. Round trip is
/// bit-exact.
std::string doubles_to_base64(const std::vector<double>& values);
std::vector<double> base64_to_doubles(const std::string& text);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);
void append_text_file(const std::string& path, const std::string& content);

/// RFC-4180 style writer: header row, fields quoted when they contain
/// commas, quotes or newlines.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header);
  void add_row(const std::vector<std::string>& fields);
  std::string str() const { return out_; }
  void save(const std::string& path) const;

 private:
  void write_row(const std::vector<std::string>& fields);
  size_t columns_;
  std::string out_;
};

std::string format_double(double v);  // shortest round-trip decimal form

}  // namespace ghn
