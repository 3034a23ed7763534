#include "invlens/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace invlens {

namespace {
constexpr std::string_view kMagic = "INVLCKPT";
}

// ---- byte codecs -----------------------------------------------------------

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  bytes(s);
}

std::string_view ByteReader::bytes(std::size_t n) {
  if (n > remaining()) throw FormatError("truncated input: need " + std::to_string(n) + " bytes at offset " +
                                         std::to_string(pos_) + ", have " + std::to_string(remaining()));
  std::string_view s = in_.substr(pos_, n);
  pos_ += n;
  return s;
}

std::uint8_t ByteReader::u8() { return static_cast<std::uint8_t>(bytes(1)[0]); }

std::uint32_t ByteReader::u32() {
  std::string_view b = bytes(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(b[i])) << (8 * i);
  return v;
}

std::uint64_t ByteReader::u64() {
  std::string_view b = bytes(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(b[i])) << (8 * i);
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }
double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::string ByteReader::str() {
  const std::uint32_t n = u32();
  return std::string(bytes(n));
}

// ---- files -----------------------------------------------------------------

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::string& path, std::string_view bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, end);
}

// ---- checkpoint ------------------------------------------------------------

void Checkpoint::put(std::string name, Shape shape, std::vector<double> values) {
  if (shape_size(shape) != values.size()) throw DimensionError("checkpoint entry " + name + ": shape/value mismatch");
  if (has(name)) throw FormatError("duplicate checkpoint entry " + name);
  entries_.push_back({std::move(name), std::move(shape), std::move(values)});
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return true;
  return false;
}

const CheckpointEntry& Checkpoint::get(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e;
  throw FormatError("checkpoint has no entry " + name);
}

const std::string& Checkpoint::meta(const std::string& key) const {
  auto it = meta_.find(key);
  if (it == meta_.end()) throw FormatError("checkpoint has no metadata key " + key);
  return it->second;
}

double Checkpoint::meta_number(const std::string& key) const {
  const std::string& s = meta(key);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw FormatError("metadata " + key + " is not a number: " + s);
  return v;
}

std::string Checkpoint::serialize() const {
  ByteWriter w;
  w.bytes(kMagic);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(entries_.size()));
  w.u32(static_cast<std::uint32_t>(meta_.size()));
  for (const auto& [k, v] : meta_) {
    w.str(k);
    w.str(v);
  }
  for (const auto& e : entries_) {
    w.str(e.name);
    w.u32(static_cast<std::uint32_t>(e.shape.size()));
    for (std::size_t d : e.shape) w.u64(d);
    for (double x : e.values) w.f64(x);
  }
  return w.take();
}

Checkpoint Checkpoint::deserialize(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.remaining() < kMagic.size() || r.bytes(kMagic.size()) != kMagic) throw FormatError("not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  const std::uint32_t nmeta = r.u32();
  Checkpoint c;
  for (std::uint32_t i = 0; i < nmeta; ++i) {
    std::string k = r.str();
    c.meta_[k] = r.str();
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const std::uint32_t rank = r.u32();
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<std::size_t>(r.u64()));
    const std::size_t n = shape_size(shape);
    if (n > r.remaining() / 8) throw FormatError("truncated checkpoint payload for " + name);
    std::vector<double> values(n);
    for (double& x : values) x = r.f64();
    c.put(std::move(name), std::move(shape), std::move(values));
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint");
  return c;
}

void Checkpoint::save(const std::string& path) const { write_file_atomic(path, serialize()); }

Checkpoint Checkpoint::load(const std::string& path) { return deserialize(read_file(path)); }

}  // namespace invlens
