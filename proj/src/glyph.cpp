#include "invlens/glyph.hpp"

#include <algorithm>
#include <cmath>

#include "invlens/checkpoint.hpp"

namespace invlens {

namespace {

constexpr std::string_view kMagic = "GLY1";
constexpr int kMaxColorTries = 100;

Rgb random_color(Rng& rng) {
  Rgb c;
  for (float& v : c) v = static_cast<float>(rng.uniform());
  return c;
}

// Moves `free` away from `fixed` along the channel with the largest gap until
// the contrast floor holds.
Rgb enforce_contrast(const Rgb& fixed, Rgb free) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < 3; ++c)
    if (std::abs(free[c] - fixed[c]) > std::abs(free[best] - fixed[best])) best = c;
  free[best] = fixed[best] >= 0.5f ? fixed[best] - kMinContrast : fixed[best] + kMinContrast;
  return free;
}

Jitter random_jitter(Rng& rng) {
  return {static_cast<float>(6 + rng.below(4)), static_cast<float>(6 + rng.below(4)),
          static_cast<float>(2 + rng.below(2)), static_cast<float>(4 + rng.below(2))};
}

}  // namespace

std::string_view concept_name(Concept c) {
  switch (c) {
    case Concept::kClass:
      return "class";
    case Concept::kFg:
      return "fg";
    case Concept::kBg:
      return "bg";
  }
  return "?";
}

Concept parse_concept(std::string_view name) {
  for (Concept c : kAllConcepts)
    if (concept_name(c) == name) return c;
  throw DomainError("unknown concept '" + std::string(name) + "' (expected class, fg or bg)");
}

float contrast(const Rgb& a, const Rgb& b) {
  float m = 0.0f;
  for (std::size_t c = 0; c < 3; ++c) m = std::max(m, std::abs(a[c] - b[c]));
  return m;
}

std::vector<float> render_glyph(std::uint8_t class_id, const Rgb& fg, const Rgb& bg, const Jitter& jitter) {
  if (class_id >= kGlyphClasses) throw DomainError("glyph class out of range: " + std::to_string(class_id));
  const int cx = static_cast<int>(jitter[0]);
  const int cy = static_cast<int>(jitter[1]);
  const int thick = static_cast<int>(jitter[2]);
  const int half = static_cast<int>(jitter[3]);

  const int row0 = cy - thick / 2, col0 = cx - thick / 2;
  auto in_hbar = [&](int r, int c) { return r >= row0 && r < row0 + thick && c >= cx - half && c < cx + half; };
  auto in_vbar = [&](int r, int c) { return c >= col0 && c < col0 + thick && r >= cy - half && r < cy + half; };
  auto in_frame = [&](int r, int c) {
    const bool in_box = r >= cy - half && r < cy + half && c >= cx - half && c < cx + half;
    const bool in_hole = r >= cy - half + thick && r < cy + half - thick && c >= cx - half + thick && c < cx + half - thick;
    return in_box && !in_hole;
  };

  std::vector<float> px(kImagePixels);
  const auto cls = static_cast<GlyphClass>(class_id);
  for (int r = 0; r < static_cast<int>(kImageSide); ++r) {
    for (int c = 0; c < static_cast<int>(kImageSide); ++c) {
      bool on = false;
      switch (cls) {
        case GlyphClass::kHBar:
          on = in_hbar(r, c);
          break;
        case GlyphClass::kVBar:
          on = in_vbar(r, c);
          break;
        case GlyphClass::kCross:
          on = in_hbar(r, c) || in_vbar(r, c);
          break;
        case GlyphClass::kFrame:
          on = in_frame(r, c);
          break;
      }
      const Rgb& color = on ? fg : bg;
      for (std::size_t ch = 0; ch < kImageChannels; ++ch)
        px[(static_cast<std::size_t>(r) * kImageSide + static_cast<std::size_t>(c)) * kImageChannels + ch] =
            2.0f * color[ch] - 1.0f;
    }
  }
  return px;
}

GlyphSample gen_sample(Rng& rng, const GlyphConstraints& constraints) {
  GlyphSample s;
  s.class_id = constraints.class_id ? *constraints.class_id : static_cast<std::uint8_t>(rng.below(kGlyphClasses));
  if (constraints.fg && constraints.bg && contrast(*constraints.fg, *constraints.bg) < kMinContrast)
    throw DomainError("gen_sample: constrained colors violate the contrast floor");

  Rgb fg{}, bg{};
  bool ok = false;
  for (int attempt = 0; attempt < kMaxColorTries && !ok; ++attempt) {
    fg = constraints.fg ? *constraints.fg : random_color(rng);
    bg = constraints.bg ? *constraints.bg : random_color(rng);
    ok = contrast(fg, bg) >= kMinContrast;
  }
  if (!ok) {
    if (constraints.bg) {
      fg = enforce_contrast(bg, fg);
    } else {
      bg = enforce_contrast(fg, bg);
    }
  }
  s.fg = fg;
  s.bg = bg;
  s.jitter = random_jitter(rng);
  s.pixels = render_glyph(s.class_id, s.fg, s.bg, s.jitter);
  if (contrast(s.fg, s.bg) < kMinContrast) throw DomainError("gen_sample: contrast invariant violated");
  return s;
}

ConceptPair gen_pair(Concept shared, Rng& rng) {
  ConceptPair p{gen_sample(rng), {}, shared};
  GlyphConstraints c;
  switch (shared) {
    case Concept::kClass:
      c.class_id = p.a.class_id;
      break;
    case Concept::kFg:
      c.fg = p.a.fg;
      break;
    case Concept::kBg:
      c.bg = p.a.bg;
      break;
  }
  p.b = gen_sample(rng, c);
  return p;
}

std::vector<GlyphSample> gen_dataset(std::uint64_t seed, std::size_t count) {
  const Rng base(seed);
  std::vector<GlyphSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = base.derive(i);
    out.push_back(gen_sample(rng));
  }
  return out;
}

Rgb border_mean_color(std::span<const double> pixels) {
  if (pixels.size() != kImagePixels) throw DimensionError("border_mean_color: wrong pixel count");
  std::array<double, 3> acc{};
  std::size_t n = 0;
  for (std::size_t r = 0; r < kImageSide; ++r) {
    for (std::size_t c = 0; c < kImageSide; ++c) {
      if (r != 0 && c != 0 && r != kImageSide - 1 && c != kImageSide - 1) continue;
      for (std::size_t ch = 0; ch < 3; ++ch) acc[ch] += pixels[(r * kImageSide + c) * kImageChannels + ch];
      ++n;
    }
  }
  Rgb out;
  for (std::size_t ch = 0; ch < 3; ++ch) out[ch] = static_cast<float>((acc[ch] / static_cast<double>(n) + 1.0) / 2.0);
  return out;
}

Tensor images_tensor(const std::vector<GlyphSample>& samples, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw DimensionError("images_tensor: no samples selected");
  std::vector<double> v;
  v.reserve(indices.size() * kImagePixels);
  for (std::size_t i : indices) v.insert(v.end(), samples.at(i).pixels.begin(), samples.at(i).pixels.end());
  return Tensor({indices.size(), kImagePixels}, std::move(v));
}

Tensor images_tensor(const std::vector<GlyphSample>& samples) {
  std::vector<std::size_t> idx(samples.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return images_tensor(samples, idx);
}

std::vector<std::size_t> labels(const std::vector<GlyphSample>& samples) {
  std::vector<std::size_t> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.class_id);
  return out;
}

std::string encode_dataset(const std::vector<GlyphSample>& samples) {
  ByteWriter w;
  w.bytes(kMagic);
  w.u32(static_cast<std::uint32_t>(samples.size()));
  for (const auto& s : samples) {
    if (s.pixels.size() != kImagePixels) throw DimensionError("encode_dataset: sample has wrong pixel count");
    w.u8(s.class_id);
    for (float v : s.fg) w.f32(v);
    for (float v : s.bg) w.f32(v);
    for (float v : s.jitter) w.f32(v);
    for (float v : s.pixels) w.f32(v);
  }
  return w.take();
}

std::vector<GlyphSample> decode_dataset(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.remaining() < kMagic.size() || r.bytes(kMagic.size()) != kMagic)
    throw FormatError("not a glyph dataset (expected magic GLY1)");
  const std::uint32_t count = r.u32();
  constexpr std::size_t kRecord = 1 + 4 * (3 + 3 + 4 + kImagePixels);
  if (r.remaining() != static_cast<std::size_t>(count) * kRecord) {
    throw FormatError("glyph dataset declares " + std::to_string(count) + " samples but holds " +
                      std::to_string(r.remaining()) + " payload bytes (expected " +
                      std::to_string(static_cast<std::size_t>(count) * kRecord) + ")");
  }
  std::vector<GlyphSample> out(count);
  for (auto& s : out) {
    s.class_id = r.u8();
    if (s.class_id >= kGlyphClasses) throw FormatError("glyph dataset: class id out of range");
    for (float& v : s.fg) v = r.f32();
    for (float& v : s.bg) v = r.f32();
    for (float& v : s.jitter) v = r.f32();
    s.pixels.resize(kImagePixels);
    for (float& v : s.pixels) v = r.f32();
  }
  return out;
}

void write_dataset(const std::string& path, const std::vector<GlyphSample>& samples) {
  write_file_atomic(path, encode_dataset(samples));
}

std::vector<GlyphSample> read_dataset(const std::string& path) { return decode_dataset(read_file(path)); }

}  // namespace invlens
