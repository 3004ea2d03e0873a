#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace advi::io {

// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view bytes);

class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;
  void update(std::string_view bytes);
  std::string hex();

 private:
  void* ctx_;
};

// Little-endian append-only byte buffer.
class Writer {
 public:
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void bytes(std::string_view b) { buf_.append(b); }
  const std::string& buffer() const { return buf_; }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

// Bounds-checked little-endian reader; running off the end is a FormatError.
class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::string_view bytes(std::size_t n);
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);
// Writes through a temporary sibling and renames, so readers never observe a
// partially written file.
void write_file(const std::filesystem::path& path, std::string_view bytes);

// Framed container used by checkpoints and detector files:
//   magic[8] | u32 version | u64 header length | header (JSON text)
//   | u64 payload length | sha256(header || payload) [32 raw bytes] | payload
struct Framed {
  std::uint32_t version = 0;
  std::string header;
  std::string payload;
  std::string hash;  // hex
};

std::string encode_framed(std::string_view magic, std::uint32_t version,
                          std::string_view header, std::string_view payload);
Framed decode_framed(std::string_view bytes, std::string_view magic,
                     std::uint32_t expected_version);

std::string encode_f64(std::span<const double> values);
std::vector<double> decode_f64(std::string_view bytes);

}  // namespace advi::io
