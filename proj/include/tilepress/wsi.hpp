#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "tilepress/util.hpp"

namespace tilepress {

inline constexpr std::uint32_t kChannels = 3;

// Untiled RGB8 image, row-major, no padding.
struct Raster {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  Bytes rgb;

  bool operator==(const Raster&) const = default;
};

// One pyramid level: a grid of square RGB8 tiles in row-major order. Edge
// tiles are zero-padded to the full tile size.
struct Level {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint32_t tile_size = 0;
  Bytes tiles;  // tile_count() * tile_bytes() bytes

  std::uint32_t tiles_across() const { return (width + tile_size - 1) / tile_size; }
  std::uint32_t tiles_down() const { return (height + tile_size - 1) / tile_size; }
  std::size_t tile_count() const { return std::size_t{tiles_across()} * tiles_down(); }
  std::size_t tile_bytes() const { return std::size_t{tile_size} * tile_size * kChannels; }
  ByteView tile(std::size_t index) const {
    return ByteView(tiles).subspan(index * tile_bytes(), tile_bytes());
  }

  bool operator==(const Level&) const = default;
};

struct WsiPyramid {
  std::string slide_id;
  std::uint32_t tile_size = 0;
  std::vector<Level> levels;  // levels[0] is the base

  bool operator==(const WsiPyramid&) const = default;
};

enum class WsiErrc { kInvalidDimensions, kBadMagic, kTruncatedPayload, kHeaderInconsistent };

std::string_view to_string(WsiErrc code);

class WsiError : public std::runtime_error {
 public:
  // `field` names the offending header field or payload section.
  WsiError(WsiErrc code, std::string field, const std::string& detail);
  WsiErrc code() const noexcept { return code_; }
  const std::string& field() const noexcept { return field_; }

 private:
  WsiErrc code_;
  std::string field_;
};

// Number of levels produced by halving (ceiling) until max(w, h) <= tile.
std::uint32_t expected_level_count(std::uint32_t width, std::uint32_t height, std::uint32_t tile_size);

Level tile_raster(const Raster& raster, std::uint32_t tile_size);
Raster untile(const Level& level);

// Halves both dimensions (ceiling). Each output pixel is the per-channel mean
// of its 2x2 source block, rounded half-up; odd edges replicate the last
// row/column. Padding never contributes.
Raster downsample(const Raster& src);
Level downsample_level(const Level& src);

// Repeatedly downsamples until max(w, h) <= tile_size.
WsiPyramid build_pyramid(const Level& base, std::uint32_t tile_size, std::string slide_id = {});

// Deterministic synthetic base image: seeded noise over a colour gradient.
Raster generate_base(std::uint32_t width, std::uint32_t height, std::uint64_t seed);

enum class SlideLayout { kFullPyramid, kBaseOnly };

// SPYR bytes for a synthetic slide. tile_size must be 256 or 512.
Bytes generate_slide(const std::string& slide_id, std::uint32_t width, std::uint32_t height,
                     std::uint32_t tile_size, std::uint64_t seed,
                     SlideLayout layout = SlideLayout::kFullPyramid);

// SPYR layout (all integers little-endian u32):
//   "SPYR" version=1 width height tile_size level_count channels=3
//   per level: width height, then tiles_across*tiles_down padded RGB8 tiles
Bytes write_spyr(const WsiPyramid& pyramid);
// Accepts complete pyramids and base-only (level_count == 1) files.
// SPYR carries no slide id; callers supply it.
WsiPyramid read_spyr(ByteView bytes, std::string slide_id = {});

}  // namespace tilepress
