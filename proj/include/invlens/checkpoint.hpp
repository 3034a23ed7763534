#pragma once

// Parameter checkpoints.
//
// Little-endian layout:
//   magic "INVLCKPT" (8 bytes)
//   u32 version (= 1)
//   u32 entry count
//   u32 metadata count, then per item: u32 key length, key bytes,
//                                      u32 value length, value bytes
//   per entry: u32 tag length, tag bytes, u32 rank, rank x u64 extents,
//              float64 payload (product of extents values)
//
// Tags are dotted paths whose prefix names the owning layer, e.g.
// "flow.b3.coupling.s1.l0.weight". Metadata carries model hyperparameters.
// Entries are written in insertion order and metadata in key order, so equal
// models serialize to equal bytes.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "invlens/tensor.hpp"

namespace invlens {

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

class Checkpoint {
 public:
  static constexpr std::uint32_t kVersion = 1;

  void put(std::string name, Shape shape, std::vector<double> values);
  bool has(const std::string& name) const;
  const CheckpointEntry& get(const std::string& name) const;
  const std::vector<CheckpointEntry>& entries() const { return entries_; }

  void set_meta(const std::string& key, const std::string& value) { meta_[key] = value; }
  const std::string& meta(const std::string& key) const;
  double meta_number(const std::string& key) const;
  bool has_meta(const std::string& key) const { return meta_.count(key) != 0; }
  const std::map<std::string, std::string>& all_meta() const { return meta_; }

  std::string serialize() const;
  static Checkpoint deserialize(std::string_view bytes);

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

 private:
  std::vector<CheckpointEntry> entries_;
  std::map<std::string, std::string> meta_;
};

// Little-endian primitive encoding shared by the binary file formats.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void bytes(std::string_view s) { out_.append(s); }
  void str(std::string_view s);
  const std::string& data() const { return out_; }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view in) : in_(in) {}
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::string_view bytes(std::size_t n);
  std::string str();
  bool done() const { return pos_ == in_.size(); }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::string_view in_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::string& path);
// Writes through a temporary file and renames it into place.
void write_file_atomic(const std::string& path, std::string_view bytes);

// Canonical text form of a double that parses back to the same bits.
std::string format_double(double v);

}  // namespace invlens
