#include "tilepress/wsi.hpp"

#include <algorithm>
#include <cstring>

#include <fmt/format.h>

namespace tilepress {

namespace {

constexpr std::uint32_t kVersion = 1;
constexpr char kMagic[4] = {'S', 'P', 'Y', 'R'};
constexpr std::size_t kHeaderBytes = 4 + 6 * 4;

void put_u32(Bytes& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 24));
}

class Reader {
 public:
  explicit Reader(ByteView data) : data_(data) {}

  std::uint32_t u32(const std::string& field) {
    if (remaining() < 4) {
      throw WsiError(WsiErrc::kTruncatedPayload, field, fmt::format("need 4 bytes at offset {}", pos_));
    }
    const std::uint32_t v = data_[pos_] | (data_[pos_ + 1] << 8) | (data_[pos_ + 2] << 16) |
                            (static_cast<std::uint32_t>(data_[pos_ + 3]) << 24);
    pos_ += 4;
    return v;
  }

  ByteView take(std::size_t n, const std::string& field) {
    if (remaining() < n) {
      throw WsiError(WsiErrc::kTruncatedPayload, field,
                     fmt::format("need {} bytes at offset {}, have {}", n, pos_, remaining()));
    }
    ByteView out = data_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  ByteView data_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string_view to_string(WsiErrc code) {
  switch (code) {
    case WsiErrc::kInvalidDimensions: return "InvalidDimensions";
    case WsiErrc::kBadMagic: return "BadMagic";
    case WsiErrc::kTruncatedPayload: return "TruncatedPayload";
    case WsiErrc::kHeaderInconsistent: return "HeaderInconsistent";
  }
  return "Unknown";
}

WsiError::WsiError(WsiErrc code, std::string field, const std::string& detail)
    : std::runtime_error(fmt::format("{} ({}): {}", to_string(code), field, detail)),
      code_(code),
      field_(std::move(field)) {}

std::uint32_t expected_level_count(std::uint32_t width, std::uint32_t height, std::uint32_t tile_size) {
  std::uint32_t n = 1;
  while (std::max(width, height) > tile_size) {
    width = (width + 1) / 2;
    height = (height + 1) / 2;
    ++n;
  }
  return n;
}

Level tile_raster(const Raster& raster, std::uint32_t tile_size) {
  if (tile_size == 0) throw WsiError(WsiErrc::kInvalidDimensions, "tile_size", "must be positive");
  Level level;
  level.width = raster.width;
  level.height = raster.height;
  level.tile_size = tile_size;
  level.tiles.assign(level.tile_count() * level.tile_bytes(), 0);
  const std::size_t across = level.tiles_across();
  const std::size_t row_stride = std::size_t{raster.width} * kChannels;
  for (std::size_t ty = 0; ty < level.tiles_down(); ++ty) {
    for (std::size_t tx = 0; tx < across; ++tx) {
      std::uint8_t* tile = level.tiles.data() + (ty * across + tx) * level.tile_bytes();
      const std::size_t x0 = tx * tile_size;
      const std::size_t y0 = ty * tile_size;
      const std::size_t cols = std::min<std::size_t>(tile_size, raster.width - x0);
      const std::size_t rows = std::min<std::size_t>(tile_size, raster.height - y0);
      for (std::size_t r = 0; r < rows; ++r) {
        std::memcpy(tile + r * tile_size * kChannels, raster.rgb.data() + (y0 + r) * row_stride + x0 * kChannels,
                    cols * kChannels);
      }
    }
  }
  return level;
}

Raster untile(const Level& level) {
  Raster raster{level.width, level.height, Bytes(std::size_t{level.width} * level.height * kChannels)};
  const std::size_t across = level.tiles_across();
  const std::size_t row_stride = std::size_t{level.width} * kChannels;
  for (std::size_t ty = 0; ty < level.tiles_down(); ++ty) {
    for (std::size_t tx = 0; tx < across; ++tx) {
      const std::uint8_t* tile = level.tiles.data() + (ty * across + tx) * level.tile_bytes();
      const std::size_t x0 = tx * level.tile_size;
      const std::size_t y0 = ty * level.tile_size;
      const std::size_t cols = std::min<std::size_t>(level.tile_size, level.width - x0);
      const std::size_t rows = std::min<std::size_t>(level.tile_size, level.height - y0);
      for (std::size_t r = 0; r < rows; ++r) {
        std::memcpy(raster.rgb.data() + (y0 + r) * row_stride + x0 * kChannels,
                    tile + r * level.tile_size * kChannels, cols * kChannels);
      }
    }
  }
  return raster;
}

Raster downsample(const Raster& src) {
  if (src.width == 0 || src.height == 0) {
    throw WsiError(WsiErrc::kInvalidDimensions, "width/height", "cannot downsample an empty raster");
  }
  Raster out;
  out.width = (src.width + 1) / 2;
  out.height = (src.height + 1) / 2;
  out.rgb.resize(std::size_t{out.width} * out.height * kChannels);
  const std::size_t stride = std::size_t{src.width} * kChannels;
  for (std::size_t y = 0; y < out.height; ++y) {
    const std::size_t y0 = 2 * y;
    const std::size_t y1 = std::min<std::size_t>(y0 + 1, src.height - 1);
    const std::uint8_t* row0 = src.rgb.data() + y0 * stride;
    const std::uint8_t* row1 = src.rgb.data() + y1 * stride;
    std::uint8_t* dst = out.rgb.data() + y * out.width * kChannels;
    for (std::size_t x = 0; x < out.width; ++x) {
      const std::size_t x0 = 2 * x * kChannels;
      const std::size_t x1 = std::min<std::size_t>(2 * x + 1, src.width - 1) * kChannels;
      for (std::size_t c = 0; c < kChannels; ++c) {
        const unsigned sum = row0[x0 + c] + row0[x1 + c] + row1[x0 + c] + row1[x1 + c];
        dst[x * kChannels + c] = static_cast<std::uint8_t>((sum + 2) / 4);
      }
    }
  }
  return out;
}

Level downsample_level(const Level& src) { return tile_raster(downsample(untile(src)), src.tile_size); }

WsiPyramid build_pyramid(const Level& base, std::uint32_t tile_size, std::string slide_id) {
  if (base.width == 0 || base.height == 0) {
    throw WsiError(WsiErrc::kInvalidDimensions, "width/height", "base level is empty");
  }
  WsiPyramid pyramid;
  pyramid.slide_id = std::move(slide_id);
  pyramid.tile_size = tile_size;
  Raster current = untile(base);
  pyramid.levels.push_back(base.tile_size == tile_size ? base : tile_raster(current, tile_size));
  while (std::max(current.width, current.height) > tile_size) {
    current = downsample(current);
    pyramid.levels.push_back(tile_raster(current, tile_size));
  }
  return pyramid;
}

Raster generate_base(std::uint32_t width, std::uint32_t height, std::uint64_t seed) {
  Raster raster{width, height, Bytes(std::size_t{width} * height * kChannels)};
  const double wx = width > 1 ? 255.0 / (width - 1) : 0.0;
  const double hy = height > 1 ? 255.0 / (height - 1) : 0.0;
  const std::uint64_t salt = mix64(seed ^ 0x5350595200000000ULL);
  std::uint8_t* px = raster.rgb.data();
  for (std::uint32_t y = 0; y < height; ++y) {
    for (std::uint32_t x = 0; x < width; ++x) {
      const std::uint64_t noise = mix64(salt + (std::uint64_t{y} << 32 | x));
      const int base[3] = {static_cast<int>(x * wx), static_cast<int>(y * hy),
                           static_cast<int>((x * wx + y * hy) / 2)};
      for (int c = 0; c < 3; ++c) {
        const int jitter = static_cast<int>((noise >> (c * 8)) & 0x3f) - 32;
        *px++ = static_cast<std::uint8_t>(std::clamp(base[c] + jitter, 0, 255));
      }
    }
  }
  return raster;
}

Bytes generate_slide(const std::string& slide_id, std::uint32_t width, std::uint32_t height,
                     std::uint32_t tile_size, std::uint64_t seed, SlideLayout layout) {
  if (width == 0) throw WsiError(WsiErrc::kInvalidDimensions, "width", "must be >= 1");
  if (height == 0) throw WsiError(WsiErrc::kInvalidDimensions, "height", "must be >= 1");
  if (tile_size != 256 && tile_size != 512) {
    throw WsiError(WsiErrc::kInvalidDimensions, "tile_size", fmt::format("{} not in {{256, 512}}", tile_size));
  }
  const Level base = tile_raster(generate_base(width, height, seed), tile_size);
  if (layout == SlideLayout::kBaseOnly) {
    return write_spyr(WsiPyramid{slide_id, tile_size, {base}});
  }
  return write_spyr(build_pyramid(base, tile_size, slide_id));
}

Bytes write_spyr(const WsiPyramid& pyramid) {
  if (pyramid.levels.empty()) throw WsiError(WsiErrc::kInvalidDimensions, "levels", "pyramid has no levels");
  std::size_t total = kHeaderBytes;
  for (const auto& level : pyramid.levels) {
    if (level.tile_size != pyramid.tile_size || level.tiles.size() != level.tile_count() * level.tile_bytes()) {
      throw WsiError(WsiErrc::kHeaderInconsistent, "levels", "level tiles disagree with tile_size");
    }
    total += 8 + level.tiles.size();
  }
  Bytes out;
  out.reserve(total);
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32(out, kVersion);
  put_u32(out, pyramid.levels[0].width);
  put_u32(out, pyramid.levels[0].height);
  put_u32(out, pyramid.tile_size);
  put_u32(out, static_cast<std::uint32_t>(pyramid.levels.size()));
  put_u32(out, kChannels);
  for (const auto& level : pyramid.levels) {
    put_u32(out, level.width);
    put_u32(out, level.height);
    out.insert(out.end(), level.tiles.begin(), level.tiles.end());
  }
  return out;
}

WsiPyramid read_spyr(ByteView bytes, std::string slide_id) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw WsiError(WsiErrc::kBadMagic, "magic", "stream does not start with \"SPYR\"");
  }
  Reader in(bytes.subspan(4));
  const std::uint32_t version = in.u32("version");
  const std::uint32_t width = in.u32("width");
  const std::uint32_t height = in.u32("height");
  const std::uint32_t tile_size = in.u32("tile_size");
  const std::uint32_t level_count = in.u32("level_count");
  const std::uint32_t channels = in.u32("channels");

  if (version != kVersion) {
    throw WsiError(WsiErrc::kHeaderInconsistent, "version", fmt::format("unsupported version {}", version));
  }
  if (channels != kChannels) {
    throw WsiError(WsiErrc::kHeaderInconsistent, "channels", fmt::format("expected 3, got {}", channels));
  }
  if (width == 0) throw WsiError(WsiErrc::kHeaderInconsistent, "width", "zero");
  if (height == 0) throw WsiError(WsiErrc::kHeaderInconsistent, "height", "zero");
  if (tile_size == 0 || tile_size > 65535) {
    throw WsiError(WsiErrc::kHeaderInconsistent, "tile_size", fmt::format("{} out of range", tile_size));
  }
  const std::uint32_t full = expected_level_count(width, height, tile_size);
  if (level_count != 1 && level_count != full) {
    throw WsiError(WsiErrc::kHeaderInconsistent, "level_count",
                   fmt::format("{} is neither 1 nor the full pyramid depth {}", level_count, full));
  }

  WsiPyramid pyramid;
  pyramid.slide_id = std::move(slide_id);
  pyramid.tile_size = tile_size;
  pyramid.levels.reserve(level_count);
  std::uint32_t expect_w = width;
  std::uint32_t expect_h = height;
  for (std::uint32_t i = 0; i < level_count; ++i) {
    const std::string prefix = fmt::format("levels[{}]", i);
    Level level;
    level.width = in.u32(prefix + ".width");
    level.height = in.u32(prefix + ".height");
    level.tile_size = tile_size;
    if (level.width != expect_w) {
      throw WsiError(WsiErrc::kHeaderInconsistent, prefix + ".width",
                     fmt::format("expected {}, got {}", expect_w, level.width));
    }
    if (level.height != expect_h) {
      throw WsiError(WsiErrc::kHeaderInconsistent, prefix + ".height",
                     fmt::format("expected {}, got {}", expect_h, level.height));
    }
    const std::uint64_t need = std::uint64_t{level.tiles_across()} * level.tiles_down() * level.tile_bytes();
    const ByteView payload = in.take(static_cast<std::size_t>(need), prefix + ".tiles");
    level.tiles.assign(payload.begin(), payload.end());
    pyramid.levels.push_back(std::move(level));
    expect_w = (expect_w + 1) / 2;
    expect_h = (expect_h + 1) / 2;
  }
  if (in.remaining() != 0) {
    throw WsiError(WsiErrc::kHeaderInconsistent, "payload_length",
                   fmt::format("{} trailing bytes after last level", in.remaining()));
  }
  return pyramid;
}

}  // namespace tilepress
