// Copyright 2026 The FACLSTM Kit Authors. Apache 2.0 License.

#include "faclstm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fmt/format.h>
#include <fstream>
#include <iterator>
#include <zlib.h>

#include "faclstm/errors.hpp"

namespace facl {

namespace {

constexpr unsigned char kMagic[4] = {'F', 'A', 'C', 'L'};

class Writer {
 public:
  void u32(uint32_t v) { put(v, 4); }
  void u64(uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<uint64_t>(v), 8); }
  void bytes(const void* p, size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  std::vector<unsigned char>& buffer() { return buf_; }

 private:
  void put(uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  std::vector<unsigned char> buf_;
};

class Reader {
 public:
  Reader(const std::vector<unsigned char>& b, size_t begin, size_t end, std::string origin)
      : b_(b), pos_(begin), end_(end), origin_(std::move(origin)) {}
  uint32_t u32() { return static_cast<uint32_t>(get(4)); }
  uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::string str(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  size_t remaining() const { return end_ - pos_; }
  [[noreturn]] void fail(const std::string& why) const {
    throw ValidationError(fmt::format("checkpoint {}: {} (offset {})", origin_, why, pos_));
  }

 private:
  void need(size_t n) const {
    if (n > end_ - pos_) fail("truncated");
  }
  uint64_t get(int n) {
    need(static_cast<size_t>(n));
    uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<uint64_t>(b_[pos_ + static_cast<size_t>(i)]) << (8 * i);
    pos_ += static_cast<size_t>(n);
    return v;
  }
  const std::vector<unsigned char>& b_;
  size_t pos_, end_;
  std::string origin_;
};

uint32_t crc_of(const unsigned char* p, size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<size_t>(n, 1u << 30));
    crc = crc32(crc, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<uint32_t>(crc);
}

}  // namespace

std::vector<unsigned char> encode_checkpoint(const NamedTensors& tensors) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.u64(tensors.size());
  for (const auto& [name, t] : tensors) {
    w.u32(static_cast<uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u32(static_cast<uint32_t>(t.rank()));
    for (int64_t d : t.dims()) w.u64(static_cast<uint64_t>(d));
    for (double v : t.data()) w.f64(v);
  }
  auto& buf = w.buffer();
  const uint32_t crc = crc_of(buf.data() + 4, buf.size() - 4);
  w.u32(crc);
  return std::move(buf);
}

NamedTensors decode_checkpoint(const std::vector<unsigned char>& bytes, const std::string& origin) {
  if (bytes.size() < 4 + 4 + 8 + 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw ValidationError("checkpoint " + origin + ": missing FACL magic");
  }
  const size_t crc_at = bytes.size() - 4;
  Reader tail(bytes, crc_at, bytes.size(), origin);
  const uint32_t stored = tail.u32();
  const uint32_t actual = crc_of(bytes.data() + 4, crc_at - 4);
  if (stored != actual) {
    throw ValidationError(fmt::format("checkpoint {}: CRC mismatch (stored {:08x}, computed {:08x})", origin,
                                      stored, actual));
  }
  Reader r(bytes, 4, crc_at, origin);
  const uint32_t version = r.u32();
  if (version != kCheckpointVersion) r.fail(fmt::format("unsupported version {}", version));
  const uint64_t count = r.u64();
  NamedTensors out;
  for (uint64_t i = 0; i < count; ++i) {
    const uint32_t name_len = r.u32();
    std::string name = r.str(name_len);
    const uint32_t rank = r.u32();
    if (rank < 1 || rank > 4) r.fail(fmt::format("tensor {} has rank {}", name, rank));
    Tensor::Dims dims;
    uint64_t numel = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      const uint64_t e = r.u64();
      if (e < 1 || e > (uint64_t{1} << 40)) r.fail(fmt::format("tensor {} has extent {}", name, e));
      dims.push_back(static_cast<int64_t>(e));
      numel *= e;
    }
    if (numel > r.remaining() / 8) r.fail("tensor " + name + " data truncated");
    std::vector<double> data(numel);
    for (auto& v : data) v = r.f64();
    if (!out.emplace(name, Tensor(std::move(dims), std::move(data))).second) {
      r.fail("duplicate tensor " + name);
    }
  }
  if (r.remaining() != 0) r.fail("trailing bytes after the last tensor");
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors) {
  const auto bytes = encode_checkpoint(tensors);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // write-then-rename
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

NamedTensors load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, path.string());
}

}  // namespace facl
