#pragma once

// Synthetic colored-glyph images with three independent ground-truth
// factors: glyph class, foreground color and background color.
//
// Dataset file (little-endian):
//   magic "GLY1", u32 count, then per sample:
//   u8 class, 3 x f32 fg, 3 x f32 bg, 4 x f32 jitter, 16*16*3 x f32 pixels
// Pixels are row-major HWC in [-1, 1].

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "invlens/rng.hpp"
#include "invlens/tensor.hpp"

namespace invlens {

inline constexpr std::size_t kImageSide = 16;
inline constexpr std::size_t kImageChannels = 3;
inline constexpr std::size_t kImagePixels = kImageSide * kImageSide * kImageChannels;
inline constexpr std::size_t kGlyphClasses = 4;
inline constexpr float kMinContrast = 0.25f;

enum class GlyphClass : std::uint8_t { kHBar = 0, kVBar = 1, kCross = 2, kFrame = 3 };

enum class Concept { kClass, kFg, kBg };

std::string_view concept_name(Concept c);
Concept parse_concept(std::string_view name);
inline constexpr std::array<Concept, 3> kAllConcepts{Concept::kClass, Concept::kFg, Concept::kBg};

using Rgb = std::array<float, 3>;

// Jitter: center column, center row, stroke thickness, half-length (pixels).
using Jitter = std::array<float, 4>;

struct GlyphSample {
  std::uint8_t class_id = 0;
  Rgb fg{};
  Rgb bg{};
  Jitter jitter{};
  std::vector<float> pixels;  // kImagePixels values
};

// Attribute values a generated sample must reuse exactly.
struct GlyphConstraints {
  std::optional<std::uint8_t> class_id;
  std::optional<Rgb> fg;
  std::optional<Rgb> bg;
};

// Deterministic rasterization of (class, fg, bg, jitter). The glyph never
// touches the one-pixel border ring.
std::vector<float> render_glyph(std::uint8_t class_id, const Rgb& fg, const Rgb& bg, const Jitter& jitter);

GlyphSample gen_sample(Rng& rng, const GlyphConstraints& constraints = {});

struct ConceptPair {
  GlyphSample a;
  GlyphSample b;
  Concept shared;
};

ConceptPair gen_pair(Concept shared, Rng& rng);

std::vector<GlyphSample> gen_dataset(std::uint64_t seed, std::size_t count);

float contrast(const Rgb& a, const Rgb& b);

// Mean color of the outermost pixel ring, mapped back to [0, 1].
Rgb border_mean_color(std::span<const double> pixels);

// Rows of flattened pixels, [n x kImagePixels].
Tensor images_tensor(const std::vector<GlyphSample>& samples);
Tensor images_tensor(const std::vector<GlyphSample>& samples, const std::vector<std::size_t>& indices);
std::vector<std::size_t> labels(const std::vector<GlyphSample>& samples);

std::string encode_dataset(const std::vector<GlyphSample>& samples);
std::vector<GlyphSample> decode_dataset(std::string_view bytes);
void write_dataset(const std::string& path, const std::vector<GlyphSample>& samples);
std::vector<GlyphSample> read_dataset(const std::string& path);

}  // namespace invlens
