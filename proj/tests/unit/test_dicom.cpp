#include <gtest/gtest.h>

#include <fmt/format.h>

#include <cstring>
#include <set>

#include "tilepress/dicom.hpp"

using namespace tilepress;

namespace {

Level random_level(std::uint32_t w, std::uint32_t h, std::uint32_t tile, std::uint64_t seed) {
  return tile_raster(generate_base(w, h, seed), tile);
}

DicomErrc decode_error(const Bytes& b) {
  try {
    decode_instance(b);
  } catch (const DicomError& e) {
    return e.code();
  }
  ADD_FAILURE() << "decode accepted the stream";
  return DicomErrc::kUidInvalid;
}

std::size_t find(const Bytes& hay, std::string_view needle) {
  const auto it = std::search(hay.begin(), hay.end(), needle.begin(), needle.end());
  return it == hay.end() ? std::string::npos : static_cast<std::size_t>(it - hay.begin());
}

void put_u32(Bytes& b, std::size_t at, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

const ElementHeader& element(const std::vector<ElementHeader>& els, std::uint16_t g, std::uint16_t e) {
  for (const auto& h : els) {
    if (h.group == g && h.element == e) return h;
  }
  throw std::runtime_error("element not found");
}

}  // namespace

TEST(Uid, Validity) {
  EXPECT_TRUE(is_valid_uid("1.2.840.10008.1.2.1"));
  EXPECT_TRUE(is_valid_uid("0.1"));
  EXPECT_FALSE(is_valid_uid(""));
  EXPECT_FALSE(is_valid_uid("1..2"));
  EXPECT_FALSE(is_valid_uid("1.02"));
  EXPECT_FALSE(is_valid_uid("1.2."));
  EXPECT_FALSE(is_valid_uid("1.a"));
  EXPECT_FALSE(is_valid_uid(std::string(65, '1')));
}

TEST(Uid, DeterministicAndSharedPerSlide) {
  const UidTriple a = make_uids("slide-001", 0);
  EXPECT_EQ(a, make_uids("slide-001", 0));
  const UidTriple b = make_uids("slide-001", 1);
  EXPECT_EQ(a.study, b.study);
  EXPECT_EQ(a.series, b.series);
  EXPECT_NE(a.sop, b.sop);
  EXPECT_NE(a.study, a.series);
  for (const auto& u : {a.study, a.series, a.sop}) {
    EXPECT_TRUE(is_valid_uid(u)) << u;
    EXPECT_LE(u.size(), 64u);
    EXPECT_EQ(u.rfind(std::string(kDefaultUidRoot), 0), 0u);
  }
  EXPECT_NE(make_uids("slide-002", 0).study, a.study);
}

TEST(Uid, NoCollisionsInTenThousandPairs) {
  SplitMix64 rng(2024);
  std::set<std::string> sops;
  std::set<std::pair<std::string, std::uint32_t>> inputs;
  while (inputs.size() < 10000) {
    inputs.insert({fmt::format("slide-{}", rng.next() % 100000), static_cast<std::uint32_t>(rng.next() % 12)});
  }
  for (const auto& [slide, level] : inputs) sops.insert(make_uids(slide, level).sop);
  EXPECT_EQ(sops.size(), inputs.size());
}

TEST(Uid, RootErrors) {
  try {
    make_uids("s", 0, "1.2.3." + std::string(50, '9'));
    FAIL();
  } catch (const DicomError& e) {
    EXPECT_EQ(e.code(), DicomErrc::kRootTooLong);
  }
  try {
    make_uids("s", 0, "1.02");
    FAIL();
  } catch (const DicomError& e) {
    EXPECT_EQ(e.code(), DicomErrc::kUidInvalid);
  }
}

TEST(Encode, FrameArithmetic) {
  const Level level = random_level(1024, 1024, 256, 1);
  const Bytes out = encode_instance(level, make_uids("s", 0), 0);
  const DicomInstance d = decode_instance(out);
  EXPECT_EQ(d.number_of_frames, 16u);
  EXPECT_EQ(d.pixel_data.size(), 16u * 256 * 256 * 3);
  EXPECT_EQ(element(scan_elements(out), 0x7FE0, 0x0010).length, 16u * 256 * 256 * 3);
}

TEST(Encode, PreambleAndMagic) {
  const Bytes out = encode_instance(random_level(10, 10, 256, 1), make_uids("s", 0), 0);
  for (int i = 0; i < 128; ++i) ASSERT_EQ(out[i], 0);
  EXPECT_EQ(std::memcmp(out.data() + 128, "DICM", 4), 0);
}

TEST(Encode, RoundTripFields) {
  const Level level = random_level(700, 300, 256, 4);
  const UidTriple uids = make_uids("slide-x", 2);
  const DicomInstance d = decode_instance(encode_instance(level, uids, 2));
  EXPECT_EQ(d.sop_class_uid, kWsiStorageSopClass);
  EXPECT_EQ(d.sop_instance_uid, uids.sop);
  EXPECT_EQ(d.series_instance_uid, uids.series);
  EXPECT_EQ(d.study_instance_uid, uids.study);
  EXPECT_EQ(d.modality, "SM");
  EXPECT_EQ(d.dimension_organization_type, "TILED_FULL");
  EXPECT_EQ(d.level_index, 2u);
  EXPECT_EQ(d.total_pixel_matrix_columns, 700u);
  EXPECT_EQ(d.total_pixel_matrix_rows, 300u);
  EXPECT_EQ(d.rows, 256);
  EXPECT_EQ(d.columns, 256);
  EXPECT_EQ(d.number_of_frames, 6u);
  EXPECT_EQ(d.samples_per_pixel, 3);
  EXPECT_EQ(d.photometric_interpretation, "RGB");
  EXPECT_EQ(d.planar_configuration, 0);
  EXPECT_EQ(d.bits_allocated, 8);
  EXPECT_EQ(d.bits_stored, 8);
  EXPECT_EQ(d.high_bit, 7);
  EXPECT_EQ(d.pixel_representation, 0);
  EXPECT_EQ(d.pixel_data, level.tiles);
  for (std::size_t i = 0; i < level.tile_count(); ++i) {
    EXPECT_TRUE(std::equal(d.frame(i).begin(), d.frame(i).end(), level.tile(i).begin()));
  }
}

TEST(Encode, TagsAscendingLengthsEvenMetaLengthExact) {
  SplitMix64 rng(8);
  for (int i = 0; i < 20; ++i) {
    const Level level = random_level(1 + rng.next() % 900, 1 + rng.next() % 900, 256, i);
    const Bytes out = encode_instance(level, make_uids(fmt::format("s{}", i), i % 4), i % 4);
    const auto els = scan_elements(out);
    std::uint32_t prev = 0;
    std::size_t meta_end = 0;
    for (const auto& h : els) {
      const std::uint32_t tag = (std::uint32_t{h.group} << 16) | h.element;
      if (h.group != 0x0002 || prev >> 16 == 0x0002) EXPECT_GT(tag, prev);
      prev = tag;
      EXPECT_EQ(h.length % 2, 0u) << std::hex << tag;
      if (h.group == 0x0002) meta_end = h.value_offset + h.length;
    }
    const ElementHeader& group_length = element(els, 0x0002, 0x0000);
    std::uint32_t declared = 0;
    std::memcpy(&declared, out.data() + group_length.value_offset, 4);
    EXPECT_EQ(group_length.value_offset + 4 + declared, meta_end);
  }
}

TEST(Encode, RejectsBadInput) {
  UidTriple bad = make_uids("s", 0);
  bad.sop = "1.2.03";
  try {
    encode_instance(random_level(10, 10, 256, 1), bad, 0);
    FAIL();
  } catch (const DicomError& e) {
    EXPECT_EQ(e.code(), DicomErrc::kUidInvalid);
  }
  Level broken = random_level(300, 10, 256, 1);
  broken.tiles.resize(broken.tiles.size() - 3);
  try {
    encode_instance(broken, make_uids("s", 0), 0);
    FAIL();
  } catch (const DicomError& e) {
    EXPECT_EQ(e.code(), DicomErrc::kFrameSizeMismatch);
  }
}

TEST(Decode, StrictErrors) {
  const Bytes good = encode_instance(random_level(1024, 1024, 256, 3), make_uids("s", 0), 0);

  Bytes no_magic = good;
  no_magic[129] = 'X';
  EXPECT_EQ(decode_error(no_magic), DicomErrc::kMissingPreamble);
  EXPECT_EQ(decode_error(Bytes(100, 0)), DicomErrc::kMissingPreamble);

  Bytes big_endian = good;
  const std::size_t ts = find(big_endian, kExplicitVrLittleEndian);
  ASSERT_NE(ts, std::string::npos);
  big_endian[ts + kExplicitVrLittleEndian.size() - 1] = '2';
  EXPECT_EQ(decode_error(big_endian), DicomErrc::kBadTransferSyntax);

  // Retag Modality (0008,0060) as an unknown (0008,0061): skipped, so Modality is missing.
  Bytes no_modality = good;
  const auto els = scan_elements(good);
  const ElementHeader& modality = element(els, 0x0008, 0x0060);
  no_modality[modality.value_offset - 6] = 0x61;
  EXPECT_EQ(decode_error(no_modality), DicomErrc::kRequiredTagMissing);

  // 16 frames declared, PixelData sized for 15.
  const ElementHeader& pixels = element(els, 0x7FE0, 0x0010);
  const std::size_t frame = 256 * 256 * 3;
  Bytes short_pixels(good.begin(), good.end() - frame);
  put_u32(short_pixels, pixels.value_offset - 4, static_cast<std::uint32_t>(pixels.length - frame));
  EXPECT_EQ(decode_error(short_pixels), DicomErrc::kLengthOverrun);

  // Declared length running past the end of the stream.
  Bytes cut(good.begin(), good.end() - 10);
  EXPECT_EQ(decode_error(cut), DicomErrc::kLengthOverrun);
}

TEST(Decode, SkipsUnknownElements) {
  const Bytes good = encode_instance(random_level(300, 300, 256, 3), make_uids("s", 0), 0);
  const auto els = scan_elements(good);
  // Private (0009,0010) LO "TILEPRESS " inserted before the first group > 0x0009.
  std::size_t at = 0;
  for (const auto& h : els) {
    if (h.group > 0x0009) {
      at = h.value_offset - (h.vr == "OB" || h.vr == "SQ" || h.vr == "UN" || h.vr == "OW" ? 12 : 8);
      break;
    }
  }
  ASSERT_GT(at, 0u);
  const Bytes extra = {0x09, 0x00, 0x10, 0x00, 'L', 'O', 10, 0, 'T', 'I', 'L', 'E', 'P', 'R', 'E', 'S', 'S', ' '};
  Bytes patched(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(at));
  patched.insert(patched.end(), extra.begin(), extra.end());
  patched.insert(patched.end(), good.begin() + static_cast<std::ptrdiff_t>(at), good.end());
  EXPECT_EQ(decode_instance(patched), decode_instance(good));
}
