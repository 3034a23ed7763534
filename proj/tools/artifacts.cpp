#include "artifacts.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <memory>
#include <span>

#include "invlens/checkpoint.hpp"
#include "json.hpp"

namespace invlens::cli {

namespace {

constexpr std::size_t kGutter = 2;
constexpr char kToolVersion[] = "invlens 0.1.0";

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

}  // namespace

std::uint8_t to_byte(double v) {
  const double scaled = std::floor((v + 1.0) * 127.5 + 0.5);
  return static_cast<std::uint8_t>(std::clamp(scaled, 0.0, 255.0));
}

std::string encode_grid(const std::vector<std::vector<std::vector<double>>>& cells, std::size_t side) {
  if (cells.empty() || cells.front().empty()) throw DimensionError("encode_grid: empty grid");
  const std::size_t rows = cells.size(), cols = cells.front().size();
  const std::size_t width = cols * side + (cols + 1) * kGutter;
  const std::size_t height = rows * side + (rows + 1) * kGutter;
  std::string pixels(width * height * 3, static_cast<char>(255));
  for (std::size_t r = 0; r < rows; ++r) {
    if (cells[r].size() != cols) throw DimensionError("encode_grid: ragged grid");
    for (std::size_t c = 0; c < cols; ++c) {
      const auto& img = cells[r][c];
      if (img.size() != side * side * 3) throw DimensionError("encode_grid: wrong image size");
      const std::size_t y0 = kGutter + r * (side + kGutter), x0 = kGutter + c * (side + kGutter);
      for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x)
          for (std::size_t ch = 0; ch < 3; ++ch)
            pixels[((y0 + y) * width + x0 + x) * 3 + ch] = static_cast<char>(to_byte(img[(y * side + x) * 3 + ch]));
    }
  }
  return "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n" + pixels;
}

std::vector<double> image_row(const Tensor& images, std::size_t row) {
  const std::size_t d = images.dim(1);
  const auto v = images.values().subspan(row * d, d);
  return {v.begin(), v.end()};
}

std::string git_blob_hash(const std::string& bytes) {
  const std::string header = "blob " + std::to_string(bytes.size()) + '\0';
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), header.data(), header.size()) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 || EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1)
    throw std::runtime_error("SHA-1 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned char b : std::span(digest, len)) {
    out += hex[b >> 4];
    out += hex[b & 15];
  }
  return out;
}

void require_file(const std::string& path) {
  if (!std::filesystem::is_regular_file(path)) throw MissingInput(path);
}

Manifest::Manifest(std::string command, const RunConfig& config)
    : command_(std::move(command)), config_text_(config.text()), started_(now_seconds()) {}

void Manifest::input(const std::string& path) {
  require_file(path);
  inputs_.emplace_back(path, git_blob_hash(read_file(path)));
}

void Manifest::output(const std::string& path, const std::string& bytes) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  write_file_atomic(path, bytes);
  outputs_.push_back(path);
}

void Manifest::finish(const std::string& path) const {
  nlohmann::ordered_json j;
  j["command"] = command_;
  j["tool_version"] = kToolVersion;
  j["config"] = config_text_;
  j["inputs"] = nlohmann::ordered_json::array();
  for (const auto& [p, h] : inputs_) j["inputs"].push_back({{"path", p}, {"sha1", h}});
  j["outputs"] = outputs_;
  j["wall_time_seconds"] = now_seconds() - started_;
  write_file_atomic(path, j.dump(2) + "\n");
}

}  // namespace invlens::cli
