#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "chest/common.hpp"

namespace chest::io {

inline std::uint32_t crc32_of(const void* data, std::size_t len) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, static_cast<const Bytef*>(data), static_cast<uInt>(len)));
}

// Little-endian binary buffer used for all versioned artifact files. Blocks
// are assembled in memory, checksummed, then written with a length prefix.
class Writer {
 public:
  void u8(std::uint8_t v) { put(&v, 1); }
  void u16(std::uint16_t v) { put(&v, 2); }
  void u32(std::uint32_t v) { put(&v, 4); }
  void u64(std::uint64_t v) { put(&v, 8); }
  void f32(float v) { put(&v, 4); }
  void f64(double v) { put(&v, 8); }

  void bytes(const void* p, std::size_t n) { put(p, n); }

  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    put(s.data(), s.size());
  }

  void f32s(const float* p, std::size_t n) { put(p, n * 4); }

  const std::vector<char>& buffer() const { return buf_; }
  void clear() { buf_.clear(); }

  std::uint32_t crc() const { return crc32_of(buf_.data(), buf_.size()); }

 private:
  void put(const void* p, std::size_t n) {
    const char* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(const char* data, std::size_t len) : data_(data), len_(len) {}
  explicit Reader(const std::vector<char>& v) : Reader(v.data(), v.size()) {}

  std::uint8_t u8() { return get<std::uint8_t>(); }
  std::uint16_t u16() { return get<std::uint16_t>(); }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  float f32() { return get<float>(); }
  double f64() { return get<double>(); }

  std::string str() {
    std::uint32_t n = u32();
    need(n);
    std::string s(data_ + pos_, n);
    pos_ += n;
    return s;
  }

  void f32s(float* out, std::size_t n) {
    need(n * 4);
    std::memcpy(out, data_ + pos_, n * 4);
    pos_ += n * 4;
  }

  void bytes(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, data_ + pos_, n);
    pos_ += n;
  }

  std::size_t remaining() const { return len_ - pos_; }
  bool eof() const { return pos_ >= len_; }

 private:
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_ + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void need(std::size_t n) const {
    if (pos_ + n > len_)
      throw corrupt_corpus_error("binary payload truncated");
  }
  const char* data_;
  std::size_t len_;
  std::size_t pos_ = 0;
};

inline void write_file(const std::string& path, const std::vector<char>& buf) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw error("cannot open for write: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw error("write failed: " + path);
}

inline std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw error("cannot open: " + path);
  const auto size = in.tellg();
  in.seekg(0);
  std::vector<char> buf(static_cast<std::size_t>(size));
  in.read(buf.data(), size);
  if (!in) throw error("read failed: " + path);
  return buf;
}

// One checksummed block: [u32 payload_len][payload][u32 crc32].
inline void append_block(std::vector<char>& out, const Writer& w) {
  Writer head;
  head.u32(static_cast<std::uint32_t>(w.buffer().size()));
  out.insert(out.end(), head.buffer().begin(), head.buffer().end());
  out.insert(out.end(), w.buffer().begin(), w.buffer().end());
  Writer tail;
  tail.u32(w.crc());
  out.insert(out.end(), tail.buffer().begin(), tail.buffer().end());
}

// Reads the next block out of `r`, verifying its checksum.
inline std::vector<char> read_block(Reader& r) {
  const std::uint32_t len = r.u32();
  std::vector<char> payload(len);
  r.bytes(payload.data(), len);
  const std::uint32_t want = r.u32();
  const std::uint32_t got = crc32_of(payload.data(), payload.size());
  if (want != got) throw corrupt_corpus_error("block checksum mismatch");
  return payload;
}

}  // namespace chest::io
