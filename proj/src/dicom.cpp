#include "tilepress/dicom.hpp"

#include <algorithm>
#include <charconv>
#include <cstring>
#include <map>
#include <optional>

#include <fmt/format.h>

namespace tilepress {

namespace {

constexpr std::size_t kPreambleBytes = 128;
constexpr std::uint32_t kUndefinedLength = 0xFFFFFFFFu;

constexpr std::uint32_t tag(std::uint16_t group, std::uint16_t element) {
  return (std::uint32_t{group} << 16) | element;
}

std::string tag_name(std::uint32_t t) { return fmt::format("({:04X},{:04X})", t >> 16, t & 0xFFFF); }

// Tags of the subset.
constexpr std::uint32_t kMetaGroupLength = tag(0x0002, 0x0000);
constexpr std::uint32_t kMetaVersion = tag(0x0002, 0x0001);
constexpr std::uint32_t kMediaSopClass = tag(0x0002, 0x0002);
constexpr std::uint32_t kMediaSopInstance = tag(0x0002, 0x0003);
constexpr std::uint32_t kTransferSyntax = tag(0x0002, 0x0010);
constexpr std::uint32_t kImplClassUid = tag(0x0002, 0x0012);
constexpr std::uint32_t kImplVersion = tag(0x0002, 0x0013);
constexpr std::uint32_t kImageType = tag(0x0008, 0x0008);
constexpr std::uint32_t kSopClass = tag(0x0008, 0x0016);
constexpr std::uint32_t kSopInstance = tag(0x0008, 0x0018);
constexpr std::uint32_t kModality = tag(0x0008, 0x0060);
constexpr std::uint32_t kStudyUid = tag(0x0020, 0x000D);
constexpr std::uint32_t kSeriesUid = tag(0x0020, 0x000E);
constexpr std::uint32_t kInstanceNumber = tag(0x0020, 0x0013);
constexpr std::uint32_t kDimensionOrganization = tag(0x0020, 0x9311);
constexpr std::uint32_t kSamplesPerPixel = tag(0x0028, 0x0002);
constexpr std::uint32_t kPhotometric = tag(0x0028, 0x0004);
constexpr std::uint32_t kPlanarConfiguration = tag(0x0028, 0x0006);
constexpr std::uint32_t kNumberOfFrames = tag(0x0028, 0x0008);
constexpr std::uint32_t kRows = tag(0x0028, 0x0010);
constexpr std::uint32_t kColumns = tag(0x0028, 0x0011);
constexpr std::uint32_t kBitsAllocated = tag(0x0028, 0x0100);
constexpr std::uint32_t kBitsStored = tag(0x0028, 0x0101);
constexpr std::uint32_t kHighBit = tag(0x0028, 0x0102);
constexpr std::uint32_t kPixelRepresentation = tag(0x0028, 0x0103);
constexpr std::uint32_t kTotalPixelMatrixColumns = tag(0x0048, 0x0006);
constexpr std::uint32_t kTotalPixelMatrixRows = tag(0x0048, 0x0007);
constexpr std::uint32_t kPixelData = tag(0x7FE0, 0x0010);

constexpr std::uint32_t kItem = tag(0xFFFE, 0xE000);
constexpr std::uint32_t kItemDelimiter = tag(0xFFFE, 0xE00D);
constexpr std::uint32_t kSequenceDelimiter = tag(0xFFFE, 0xE0DD);

bool has_long_length(std::string_view vr) {
  static constexpr std::string_view kLong[] = {"OB", "OD", "OF", "OL", "OV", "OW", "SQ",
                                               "SV", "UC", "UN", "UR", "UT", "UV"};
  return std::find(std::begin(kLong), std::end(kLong), vr) != std::end(kLong);
}

// ---- writer ---------------------------------------------------------------

class Writer {
 public:
  void u16(std::uint16_t v) {
    out_.push_back(static_cast<std::uint8_t>(v));
    out_.push_back(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    u16(static_cast<std::uint16_t>(v));
    u16(static_cast<std::uint16_t>(v >> 16));
  }

  void header(std::uint32_t t, std::string_view vr, std::uint32_t length) {
    u16(static_cast<std::uint16_t>(t >> 16));
    u16(static_cast<std::uint16_t>(t));
    out_.push_back(static_cast<std::uint8_t>(vr[0]));
    out_.push_back(static_cast<std::uint8_t>(vr[1]));
    if (has_long_length(vr)) {
      u16(0);
      u32(length);
    } else {
      u16(static_cast<std::uint16_t>(length));
    }
  }

  // UI pads with NUL; other text VRs pad with a space.
  void text(std::uint32_t t, std::string_view vr, std::string_view value) {
    const bool pad = value.size() % 2 != 0;
    header(t, vr, static_cast<std::uint32_t>(value.size() + pad));
    out_.insert(out_.end(), value.begin(), value.end());
    if (pad) out_.push_back(vr == "UI" ? '\0' : ' ');
  }

  void us(std::uint32_t t, std::uint16_t v) {
    header(t, "US", 2);
    u16(v);
  }

  void ul(std::uint32_t t, std::uint32_t v) {
    header(t, "UL", 4);
    u32(v);
  }

  void ob(std::uint32_t t, ByteView value) {
    const bool pad = value.size() % 2 != 0;
    header(t, "OB", static_cast<std::uint32_t>(value.size() + pad));
    out_.insert(out_.end(), value.begin(), value.end());
    if (pad) out_.push_back(0);
  }

  Bytes& bytes() { return out_; }

 private:
  Bytes out_;
};

// ---- reader ---------------------------------------------------------------

struct RawElement {
  std::uint32_t tag = 0;
  std::string vr;
  std::uint32_t length = 0;
  std::size_t header_offset = 0;
  std::size_t value_offset = 0;
  ByteView value;
};

class Cursor {
 public:
  Cursor(ByteView data, std::size_t pos) : data_(data), pos_(pos) {}

  bool at_end() const { return pos_ >= data_.size(); }
  std::size_t pos() const { return pos_; }

  std::uint16_t u16() {
    need(2, "element header");
    const std::uint16_t v = data_[pos_] | (data_[pos_ + 1] << 8);
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    const std::uint32_t lo = u16();
    const std::uint32_t hi = u16();
    return lo | (hi << 16);
  }

  std::uint32_t peek_tag() const {
    if (data_.size() - pos_ < 4) return 0;
    return (std::uint32_t{static_cast<std::uint16_t>(data_[pos_] | (data_[pos_ + 1] << 8))} << 16) |
           static_cast<std::uint16_t>(data_[pos_ + 2] | (data_[pos_ + 3] << 8));
  }

  // Explicit VR little endian element. Undefined-length values are skipped
  // structurally and returned with an empty value.
  RawElement element() {
    RawElement e;
    e.header_offset = pos_;
    const std::uint16_t group = u16();
    const std::uint16_t elem = u16();
    e.tag = tag(group, elem);
    need(2, tag_name(e.tag) + " VR");
    e.vr.assign(reinterpret_cast<const char*>(data_.data() + pos_), 2);
    pos_ += 2;
    if (has_long_length(e.vr)) {
      u16();
      e.length = u32();
    } else {
      e.length = u16();
    }
    e.value_offset = pos_;
    if (e.length == kUndefinedLength) {
      if (e.vr != "SQ" && e.vr != "UN" && e.vr != "OB") {
        throw DicomError(DicomErrc::kLengthOverrun, tag_name(e.tag) + " has undefined length");
      }
      skip_undefined_sequence(e.tag);
      return e;
    }
    need(e.length, tag_name(e.tag) + " value");
    e.value = data_.subspan(pos_, e.length);
    pos_ += e.length;
    return e;
  }

 private:
  void need(std::size_t n, const std::string& what) const {
    if (data_.size() - pos_ < n) {
      throw DicomError(DicomErrc::kLengthOverrun,
                       fmt::format("{} needs {} bytes at offset {}, {} left", what, n, pos_, data_.size() - pos_));
    }
  }

  // Items until the sequence delimiter; each item is either length-prefixed
  // or a nested dataset closed by an item delimiter.
  void skip_undefined_sequence(std::uint32_t owner) {
    for (;;) {
      const std::uint16_t group = u16();
      const std::uint16_t elem = u16();
      const std::uint32_t t = tag(group, elem);
      const std::uint32_t len = u32();
      if (t == kSequenceDelimiter) return;
      if (t != kItem) {
        throw DicomError(DicomErrc::kLengthOverrun, fmt::format("unexpected {} inside {}", tag_name(t), tag_name(owner)));
      }
      if (len != kUndefinedLength) {
        need(len, tag_name(owner) + " item");
        pos_ += len;
        continue;
      }
      while (peek_tag() != kItemDelimiter) {
        if (at_end()) throw DicomError(DicomErrc::kLengthOverrun, tag_name(owner) + " item not terminated");
        element();
      }
      u16();
      u16();
      u32();
    }
  }

  ByteView data_;
  std::size_t pos_;
};

std::string trimmed_text(ByteView v) {
  std::string s(reinterpret_cast<const char*>(v.data()), v.size());
  while (!s.empty() && (s.back() == '\0' || s.back() == ' ')) s.pop_back();
  std::size_t start = 0;
  while (start < s.size() && s[start] == ' ') ++start;
  return s.substr(start);
}

std::uint16_t read_us(const RawElement& e) {
  if (e.value.size() != 2) {
    throw DicomError(DicomErrc::kUnsupportedValue, fmt::format("{} US length {}", tag_name(e.tag), e.value.size()));
  }
  return static_cast<std::uint16_t>(e.value[0] | (e.value[1] << 8));
}

std::uint32_t read_ul(const RawElement& e) {
  if (e.value.size() != 4) {
    throw DicomError(DicomErrc::kUnsupportedValue, fmt::format("{} UL length {}", tag_name(e.tag), e.value.size()));
  }
  return e.value[0] | (e.value[1] << 8) | (e.value[2] << 16) | (std::uint32_t{e.value[3]} << 24);
}

std::uint32_t read_is(const RawElement& e) {
  const std::string s = trimmed_text(e.value);
  std::uint32_t out = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) {
    throw DicomError(DicomErrc::kUnsupportedValue, fmt::format("{} is not an unsigned IS: '{}'", tag_name(e.tag), s));
  }
  return out;
}

void check_preamble(ByteView bytes) {
  if (bytes.size() < kPreambleBytes + 4 || std::memcmp(bytes.data() + kPreambleBytes, "DICM", 4) != 0) {
    throw DicomError(DicomErrc::kMissingPreamble, "no \"DICM\" prefix at offset 128");
  }
}

}  // namespace

std::string_view to_string(DicomErrc code) {
  switch (code) {
    case DicomErrc::kUidInvalid: return "UidInvalid";
    case DicomErrc::kRootTooLong: return "RootTooLong";
    case DicomErrc::kFrameSizeMismatch: return "FrameSizeMismatch";
    case DicomErrc::kMissingPreamble: return "MissingPreamble";
    case DicomErrc::kBadTransferSyntax: return "BadTransferSyntax";
    case DicomErrc::kRequiredTagMissing: return "RequiredTagMissing";
    case DicomErrc::kLengthOverrun: return "LengthOverrun";
    case DicomErrc::kUnsupportedValue: return "UnsupportedValue";
  }
  return "Unknown";
}

DicomError::DicomError(DicomErrc code, const std::string& detail)
    : std::runtime_error(fmt::format("{}: {}", to_string(code), detail)), code_(code) {}

bool is_valid_uid(std::string_view uid) {
  if (uid.empty() || uid.size() > kMaxUidLength) return false;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = uid.find('.', start);
    const std::string_view part = uid.substr(start, dot == std::string_view::npos ? uid.npos : dot - start);
    if (part.empty()) return false;
    if (part.size() > 1 && part[0] == '0') return false;
    if (!std::all_of(part.begin(), part.end(), [](char c) { return c >= '0' && c <= '9'; })) return false;
    if (dot == std::string_view::npos) return true;
    start = dot + 1;
  }
}

UidTriple make_uids(std::string_view slide_id, std::uint32_t level_index, std::string_view root) {
  if (!is_valid_uid(root)) {
    throw DicomError(DicomErrc::kUidInvalid, fmt::format("invalid UID root '{}'", root));
  }
  // Fixed-width component: a leading 1 followed by 19 digits of the hash.
  constexpr std::uint64_t kTen19 = 10'000'000'000'000'000'000ULL;
  const std::uint64_t h = mix64(fnv1a64(slide_id));
  const std::string slide_part = fmt::format("1{:019}", h % kTen19);
  UidTriple uids{fmt::format("{}.1.{}", root, slide_part), fmt::format("{}.2.{}", root, slide_part),
                 fmt::format("{}.3.{}.{}", root, slide_part, level_index)};
  if (uids.sop.size() > kMaxUidLength) {
    throw DicomError(DicomErrc::kRootTooLong,
                     fmt::format("root '{}' yields a {}-character SOP UID", root, uids.sop.size()));
  }
  return uids;
}

Bytes encode_instance(const Level& level, const UidTriple& uids, std::uint32_t level_index) {
  for (const auto* uid : {&uids.study, &uids.series, &uids.sop}) {
    if (!is_valid_uid(*uid)) throw DicomError(DicomErrc::kUidInvalid, fmt::format("'{}'", *uid));
  }
  if (level.tile_size == 0 || level.tile_size > 0xFFFF || level.width == 0 || level.height == 0) {
    throw DicomError(DicomErrc::kFrameSizeMismatch,
                     fmt::format("level {}x{} tile {} is not encodable", level.width, level.height, level.tile_size));
  }
  if (level.tiles.size() != level.tile_count() * level.tile_bytes()) {
    throw DicomError(DicomErrc::kFrameSizeMismatch,
                     fmt::format("{} tile bytes, expected {} frames of {}", level.tiles.size(), level.tile_count(),
                                 level.tile_bytes()));
  }

  Writer meta;
  meta.ob(kMetaVersion, std::vector<std::uint8_t>{0x00, 0x01});
  meta.text(kMediaSopClass, "UI", kWsiStorageSopClass);
  meta.text(kMediaSopInstance, "UI", uids.sop);
  meta.text(kTransferSyntax, "UI", kExplicitVrLittleEndian);
  meta.text(kImplClassUid, "UI", kImplementationClassUid);
  meta.text(kImplVersion, "SH", kImplementationVersion);

  Writer out;
  out.bytes().assign(kPreambleBytes, 0);
  out.bytes().insert(out.bytes().end(), {'D', 'I', 'C', 'M'});
  out.ul(kMetaGroupLength, static_cast<std::uint32_t>(meta.bytes().size()));
  out.bytes().insert(out.bytes().end(), meta.bytes().begin(), meta.bytes().end());

  out.text(kImageType, "CS", level_index == 0 ? "ORIGINAL\\PRIMARY\\VOLUME\\NONE" : "DERIVED\\PRIMARY\\VOLUME\\RESAMPLED");
  out.text(kSopClass, "UI", kWsiStorageSopClass);
  out.text(kSopInstance, "UI", uids.sop);
  out.text(kModality, "CS", "SM");
  out.text(kStudyUid, "UI", uids.study);
  out.text(kSeriesUid, "UI", uids.series);
  out.text(kInstanceNumber, "IS", std::to_string(level_index + 1));
  out.text(kDimensionOrganization, "CS", "TILED_FULL");
  out.us(kSamplesPerPixel, 3);
  out.text(kPhotometric, "CS", "RGB");
  out.us(kPlanarConfiguration, 0);
  out.text(kNumberOfFrames, "IS", std::to_string(level.tile_count()));
  out.us(kRows, static_cast<std::uint16_t>(level.tile_size));
  out.us(kColumns, static_cast<std::uint16_t>(level.tile_size));
  out.us(kBitsAllocated, 8);
  out.us(kBitsStored, 8);
  out.us(kHighBit, 7);
  out.us(kPixelRepresentation, 0);
  out.ul(kTotalPixelMatrixColumns, level.width);
  out.ul(kTotalPixelMatrixRows, level.height);
  out.ob(kPixelData, level.tiles);
  return std::move(out.bytes());
}

std::vector<ElementHeader> scan_elements(ByteView bytes) {
  check_preamble(bytes);
  std::vector<ElementHeader> out;
  Cursor cursor(bytes, kPreambleBytes + 4);
  while (!cursor.at_end()) {
    const RawElement e = cursor.element();
    out.push_back({static_cast<std::uint16_t>(e.tag >> 16), static_cast<std::uint16_t>(e.tag & 0xFFFF), e.vr,
                   e.length, e.value_offset});
  }
  return out;
}

DicomInstance decode_instance(ByteView bytes) {
  check_preamble(bytes);
  Cursor cursor(bytes, kPreambleBytes + 4);

  // File meta group: the group length must cover exactly the group 0002
  // elements that follow it.
  if (cursor.peek_tag() != kMetaGroupLength) {
    throw DicomError(DicomErrc::kRequiredTagMissing, "(0002,0000) FileMetaInformationGroupLength");
  }
  const RawElement group_length = cursor.element();
  if (group_length.vr != "UL") {
    throw DicomError(DicomErrc::kUnsupportedValue, "(0002,0000) must be UL");
  }
  const std::size_t meta_end = cursor.pos() + read_ul(group_length);
  if (meta_end > bytes.size()) {
    throw DicomError(DicomErrc::kLengthOverrun, "file meta group length runs past end of stream");
  }
  std::optional<std::string> transfer_syntax;
  while (cursor.pos() < meta_end) {
    const RawElement e = cursor.element();
    if ((e.tag >> 16) != 0x0002) {
      throw DicomError(DicomErrc::kLengthOverrun, fmt::format("{} inside file meta group", tag_name(e.tag)));
    }
    if (e.tag == kTransferSyntax) transfer_syntax = trimmed_text(e.value);
  }
  if (cursor.pos() != meta_end) {
    throw DicomError(DicomErrc::kLengthOverrun, "file meta element crosses the declared group length");
  }
  if (!cursor.at_end() && (cursor.peek_tag() >> 16) == 0x0002) {
    throw DicomError(DicomErrc::kLengthOverrun, "file meta group continues past its declared length");
  }
  if (!transfer_syntax) throw DicomError(DicomErrc::kRequiredTagMissing, "(0002,0010) TransferSyntaxUID");
  if (*transfer_syntax != kExplicitVrLittleEndian) {
    throw DicomError(DicomErrc::kBadTransferSyntax, fmt::format("'{}'", *transfer_syntax));
  }

  std::map<std::uint32_t, RawElement> found;
  while (!cursor.at_end()) {
    RawElement e = cursor.element();
    if (e.tag == kPixelData && e.length == kUndefinedLength) {
      throw DicomError(DicomErrc::kBadTransferSyntax, "encapsulated PixelData in a native transfer syntax");
    }
    found[e.tag] = std::move(e);
  }

  auto require = [&](std::uint32_t t, std::string_view name) -> const RawElement& {
    auto it = found.find(t);
    if (it == found.end()) throw DicomError(DicomErrc::kRequiredTagMissing, fmt::format("{} {}", tag_name(t), name));
    return it->second;
  };

  DicomInstance inst;
  inst.sop_class_uid = trimmed_text(require(kSopClass, "SOPClassUID").value);
  inst.sop_instance_uid = trimmed_text(require(kSopInstance, "SOPInstanceUID").value);
  inst.study_instance_uid = trimmed_text(require(kStudyUid, "StudyInstanceUID").value);
  inst.series_instance_uid = trimmed_text(require(kSeriesUid, "SeriesInstanceUID").value);
  inst.modality = trimmed_text(require(kModality, "Modality").value);
  inst.image_type = trimmed_text(require(kImageType, "ImageType").value);
  if (auto it = found.find(kDimensionOrganization); it != found.end()) {
    inst.dimension_organization_type = trimmed_text(it->second.value);
  }
  const std::uint32_t instance_number = read_is(require(kInstanceNumber, "InstanceNumber"));
  if (instance_number == 0) throw DicomError(DicomErrc::kUnsupportedValue, "InstanceNumber must be >= 1");
  inst.level_index = instance_number - 1;
  inst.total_pixel_matrix_columns = read_ul(require(kTotalPixelMatrixColumns, "TotalPixelMatrixColumns"));
  inst.total_pixel_matrix_rows = read_ul(require(kTotalPixelMatrixRows, "TotalPixelMatrixRows"));
  inst.rows = read_us(require(kRows, "Rows"));
  inst.columns = read_us(require(kColumns, "Columns"));
  inst.number_of_frames = read_is(require(kNumberOfFrames, "NumberOfFrames"));
  inst.samples_per_pixel = read_us(require(kSamplesPerPixel, "SamplesPerPixel"));
  inst.photometric_interpretation = trimmed_text(require(kPhotometric, "PhotometricInterpretation").value);
  inst.planar_configuration = read_us(require(kPlanarConfiguration, "PlanarConfiguration"));
  inst.bits_allocated = read_us(require(kBitsAllocated, "BitsAllocated"));
  inst.bits_stored = read_us(require(kBitsStored, "BitsStored"));
  inst.high_bit = read_us(require(kHighBit, "HighBit"));
  inst.pixel_representation = read_us(require(kPixelRepresentation, "PixelRepresentation"));
  const RawElement& pixels = require(kPixelData, "PixelData");

  for (const auto* uid : {&inst.sop_instance_uid, &inst.study_instance_uid, &inst.series_instance_uid}) {
    if (!is_valid_uid(*uid)) throw DicomError(DicomErrc::kUidInvalid, fmt::format("'{}'", *uid));
  }
  if (inst.samples_per_pixel != 3 || inst.photometric_interpretation != "RGB" || inst.planar_configuration != 0 ||
      inst.bits_allocated != 8 || inst.bits_stored != 8 || inst.high_bit != 7 || inst.pixel_representation != 0) {
    throw DicomError(DicomErrc::kUnsupportedValue, "only interleaved 8-bit RGB pixel data is supported");
  }
  if (inst.rows == 0 || inst.columns == 0 || inst.total_pixel_matrix_columns == 0 || inst.total_pixel_matrix_rows == 0) {
    throw DicomError(DicomErrc::kUnsupportedValue, "zero image dimension");
  }
  const std::uint64_t grid = std::uint64_t{(inst.total_pixel_matrix_columns + inst.columns - 1u) / inst.columns} *
                             ((inst.total_pixel_matrix_rows + inst.rows - 1u) / inst.rows);
  if (inst.number_of_frames != grid) {
    throw DicomError(DicomErrc::kFrameSizeMismatch,
                     fmt::format("NumberOfFrames {} but the tile grid holds {}", inst.number_of_frames, grid));
  }
  const std::uint64_t expected = std::uint64_t{inst.number_of_frames} * inst.frame_bytes();
  const std::uint64_t padded = expected + (expected % 2);
  if (pixels.length != padded) {
    throw DicomError(DicomErrc::kLengthOverrun,
                     fmt::format("PixelData holds {} bytes, {} frames need {}", pixels.length, inst.number_of_frames,
                                 padded));
  }
  inst.pixel_data.assign(pixels.value.begin(), pixels.value.begin() + static_cast<std::ptrdiff_t>(expected));
  return inst;
}

}  // namespace tilepress
