#include "ghnsearch/io.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ghnsearch/errors.hpp"

namespace ghn {

namespace {
constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int decode_char(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+') return 62;
  if (c == '/') return 63;
  return -1;
}
}  // namespace

std::string base64_encode(const uint8_t* data, size_t len) {
  std::string out;
  out.reserve((len + 2) / 3 * 4);
  for (size_t i = 0; i < len; i += 3) {
    const uint32_t b0 = data[i];
    const uint32_t b1 = i + 1 < len ? data[i + 1] : 0;
    const uint32_t b2 = i + 2 < len ? data[i + 2] : 0;
    const uint32_t triple = (b0 << 16) | (b1 << 8) | b2;
    out.push_back(kAlphabet[(triple >> 18) & 0x3f]);
    out.push_back(kAlphabet[(triple >> 12) & 0x3f]);
    out.push_back(i + 1 < len ? kAlphabet[(triple >> 6) & 0x3f] : '=');
    out.push_back(i + 2 < len ? kAlphabet[triple & 0x3f] : '=');
  }
  return out;
}

std::vector<uint8_t> base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) throw ParseError("base64 payload length not a multiple of 4");
  std::vector<uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (size_t i = 0; i < text.size(); i += 4) {
    int vals[4] = {0, 0, 0, 0};
    int pad = 0;
    for (size_t j = 0; j < 4; ++j) {
      const char c = text[i + j];
      if (c == '=') {
        if (i + 4 != text.size() || j < 2) throw ParseError("unexpected base64 padding");
        ++pad;
        continue;
      }
      vals[j] = decode_char(c);
      if (vals[j] < 0) throw ParseError(std::string("invalid base64 character '") + c + "'");
      if (pad > 0) throw ParseError("base64 data after padding");
    }
    const uint32_t triple = (static_cast<uint32_t>(vals[0]) << 18) |
                            (static_cast<uint32_t>(vals[1]) << 12) |
                            (static_cast<uint32_t>(vals[2]) << 6) | static_cast<uint32_t>(vals[3]);
    out.push_back(static_cast<uint8_t>((triple >> 16) & 0xff));
    if (pad < 2) out.push_back(static_cast<uint8_t>((triple >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<uint8_t>(triple & 0xff));
  }
  return out;
}

std::string doubles_to_base64(const std::vector<double>& values) {
  std::vector<uint8_t> bytes(values.size() * 8);
  for (size_t i = 0; i < values.size(); ++i) {
    uint64_t bits;
    std::memcpy(&bits, &values[i], 8);
    for (int b = 0; b < 8; ++b) bytes[i * 8 + static_cast<size_t>(b)] = (bits >> (8 * b)) & 0xff;
  }
  return base64_encode(bytes.data(), bytes.size());
}

std::vector<double> base64_to_doubles(const std::string& text) {
  const std::vector<uint8_t> bytes = base64_decode(text);
  if (bytes.size() % 8 != 0) throw ParseError("tensor payload not a multiple of 8 bytes");
  std::vector<double> out(bytes.size() / 8);
  for (size_t i = 0; i < out.size(); ++i) {
    uint64_t bits = 0;
    for (int b = 7; b >= 0; --b) bits = (bits << 8) | bytes[i * 8 + static_cast<size_t>(b)];
    std::memcpy(&out[i], &bits, 8);
  }
  return out;
}

std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << content;
  if (!os) throw IoError("failed writing " + path);
}

void append_text_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary | std::ios::app);
  if (!os) throw IoError("cannot open " + path + " for appending");
  os << content;
}

CsvWriter::CsvWriter(std::vector<std::string> header) : columns_(header.size()) {
  write_row(header);
}

void CsvWriter::add_row(const std::vector<std::string>& fields) {
  if (fields.size() != columns_) {
    throw InputError("csv row has " + std::to_string(fields.size()) + " fields, expected " +
                     std::to_string(columns_));
  }
  write_row(fields);
}

void CsvWriter::write_row(const std::vector<std::string>& fields) {
  for (size_t i = 0; i < fields.size(); ++i) {
    if (i) out_.push_back(',');
    const std::string& f = fields[i];
    if (f.find_first_of(",\"\n\r") != std::string::npos) {
      out_.push_back('"');
      for (char c : f) {
        if (c == '"') out_.push_back('"');
        out_.push_back(c);
      }
      out_.push_back('"');
    } else {
      out_ += f;
    }
  }
  out_.push_back('\n');
}

void CsvWriter::save(const std::string& path) const { write_text_file(path, out_); }

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  // Prefer the shortest representation that round-trips.
  for (int prec = 1; prec < 17; ++prec) {
    char probe[32];
    std::snprintf(probe, sizeof(probe), "%.*g", prec, v);
    double back = 0.0;
    std::sscanf(probe, "%lf", &back);
    if (back == v) return probe;
  }
  return buf;
}

}  // namespace ghn
