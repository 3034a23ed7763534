#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "invlens/tensor.hpp"
#include "run_config.hpp"

namespace invlens::cli {

// Binary PPM (P6, maxval 255). Pixel rows are HWC values in [-1, 1],
// mapped by (v + 1) * 127.5 rounded half-up and clipped to [0, 255].
std::uint8_t to_byte(double v);

// Grid of images: cells[r][c] is one [side*side*3] image; cells are separated
// and framed by 2-pixel white gutters.
std::string encode_grid(const std::vector<std::vector<std::vector<double>>>& cells, std::size_t side);

std::vector<double> image_row(const Tensor& images, std::size_t row);

// Git blob object id: SHA-1 of "blob <size>\0" followed by the content.
std::string git_blob_hash(const std::string& bytes);

class Manifest {
 public:
  Manifest(std::string command, const RunConfig& config);

  // Records the hash of an input file; throws MissingInput if absent.
  void input(const std::string& path);
  // Writes an output atomically and lists it.
  void output(const std::string& path, const std::string& bytes);
  const std::vector<std::string>& outputs() const { return outputs_; }

  // Writes the manifest atomically to `path`.
  void finish(const std::string& path) const;

 private:
  std::string command_;
  std::string config_text_;
  std::vector<std::pair<std::string, std::string>> inputs_;
  std::vector<std::string> outputs_;
  double started_;
};

void require_file(const std::string& path);

}  // namespace invlens::cli
