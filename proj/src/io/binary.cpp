#include "advi/io/binary.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "advi/error.hpp"

namespace advi::io {

Sha256::Sha256() : ctx_(EVP_MD_CTX_new()) {
  if (ctx_ == nullptr ||
      EVP_DigestInit_ex(static_cast<EVP_MD_CTX*>(ctx_), EVP_sha256(), nullptr) != 1) {
    throw Error("sha256: digest init failed");
  }
}

Sha256::~Sha256() { EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_)); }

void Sha256::update(std::string_view bytes) {
  EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), bytes.data(), bytes.size());
}

std::string Sha256::hex() {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(static_cast<EVP_MD_CTX*>(ctx_), md, &len);
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(digits[md[i] >> 4]);
    out.push_back(digits[md[i] & 15]);
  }
  return out;
}

std::string sha256_hex(std::string_view bytes) {
  Sha256 h;
  h.update(bytes);
  return h.hex();
}

void Writer::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void Writer::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void Writer::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
void Writer::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

std::string_view Reader::bytes(std::size_t n) {
  if (n > remaining()) throw FormatError("truncated data");
  auto out = data_.substr(pos_, n);
  pos_ += n;
  return out;
}

std::uint32_t Reader::u32() {
  auto b = bytes(4);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[i]);
  return v;
}

std::uint64_t Reader::u64() {
  auto b = bytes(8);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[i]);
  return v;
}

float Reader::f32() { return std::bit_cast<float>(u32()); }
double Reader::f64() { return std::bit_cast<double>(u64()); }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

namespace {

std::string raw_digest(std::string_view header, std::string_view payload) {
  Sha256 h;
  h.update(header);
  h.update(payload);
  return h.hex();
}

std::string hex_to_raw(const std::string& hex) {
  std::string raw;
  for (std::size_t i = 0; i + 1 < hex.size(); i += 2) {
    raw.push_back(static_cast<char>(std::stoi(hex.substr(i, 2), nullptr, 16)));
  }
  return raw;
}

}  // namespace

std::string encode_framed(std::string_view magic, std::uint32_t version,
                          std::string_view header, std::string_view payload) {
  if (magic.size() != 8) throw ConfigError("frame magic must be 8 bytes");
  Writer w;
  w.bytes(magic);
  w.u32(version);
  w.u64(header.size());
  w.bytes(header);
  w.u64(payload.size());
  w.bytes(hex_to_raw(raw_digest(header, payload)));
  w.bytes(payload);
  return w.take();
}

Framed decode_framed(std::string_view bytes, std::string_view magic,
                     std::uint32_t expected_version) {
  Reader r(bytes);
  if (r.remaining() < 8 || r.bytes(8) != magic) {
    throw FormatError("bad magic: expected " + std::string(magic));
  }
  Framed f;
  f.version = r.u32();
  if (f.version != expected_version) {
    throw FormatError("version mismatch: file has " + std::to_string(f.version) +
                      ", reader expects " + std::to_string(expected_version));
  }
  f.header = std::string(r.bytes(r.u64()));
  const std::uint64_t payload_len = r.u64();
  const std::string stored = std::string(r.bytes(32));
  if (r.remaining() != payload_len) {
    throw FormatError("payload length " + std::to_string(r.remaining()) +
                      " does not match declared " + std::to_string(payload_len));
  }
  f.payload = std::string(r.bytes(payload_len));
  f.hash = raw_digest(f.header, f.payload);
  if (hex_to_raw(f.hash) != stored) throw FormatError("content hash mismatch");
  return f;
}

std::string encode_f64(std::span<const double> values) {
  Writer w;
  for (double v : values) w.f64(v);
  return w.take();
}

std::vector<double> decode_f64(std::string_view bytes) {
  if (bytes.size() % 8 != 0) throw FormatError("float64 payload length not a multiple of 8");
  Reader r(bytes);
  std::vector<double> out(bytes.size() / 8);
  for (double& v : out) v = r.f64();
  return out;
}

}  // namespace advi::io
