#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tilepress/util.hpp"
#include "tilepress/wsi.hpp"

namespace tilepress {

inline constexpr std::string_view kExplicitVrLittleEndian = "1.2.840.10008.1.2.1";
inline constexpr std::string_view kWsiStorageSopClass = "1.2.840.10008.5.1.4.1.1.77.1.6";
inline constexpr std::string_view kDefaultUidRoot = "1.2.826.0.1.3680043.10.543";
inline constexpr std::string_view kImplementationClassUid = "1.2.826.0.1.3680043.10.543.0.1";
inline constexpr std::string_view kImplementationVersion = "TILEPRESS_010";
inline constexpr std::size_t kMaxUidLength = 64;

struct UidTriple {
  std::string study;
  std::string series;
  std::string sop;

  bool operator==(const UidTriple&) const = default;
};

// The decoded VL Whole Slide Microscopy subset: one pyramid level whose tiles
// are the frames of a native multi-frame PixelData element.
struct DicomInstance {
  std::string sop_class_uid;
  std::string sop_instance_uid;
  std::string series_instance_uid;
  std::string study_instance_uid;
  std::string modality;
  std::string image_type;
  std::string dimension_organization_type;
  std::uint32_t level_index = 0;  // InstanceNumber - 1
  std::uint32_t total_pixel_matrix_columns = 0;
  std::uint32_t total_pixel_matrix_rows = 0;
  std::uint16_t rows = 0;
  std::uint16_t columns = 0;
  std::uint32_t number_of_frames = 0;
  std::uint16_t samples_per_pixel = 0;
  std::string photometric_interpretation;
  std::uint16_t planar_configuration = 0;
  std::uint16_t bits_allocated = 0;
  std::uint16_t bits_stored = 0;
  std::uint16_t high_bit = 0;
  std::uint16_t pixel_representation = 0;
  Bytes pixel_data;  // frames back to back, without the VR pad byte

  std::size_t frame_bytes() const { return std::size_t{rows} * columns * samples_per_pixel; }
  ByteView frame(std::size_t index) const {
    return ByteView(pixel_data).subspan(index * frame_bytes(), frame_bytes());
  }

  bool operator==(const DicomInstance&) const = default;
};

enum class DicomErrc {
  kUidInvalid,
  kRootTooLong,
  kFrameSizeMismatch,
  kMissingPreamble,
  kBadTransferSyntax,
  kRequiredTagMissing,
  kLengthOverrun,
  kUnsupportedValue,
};

std::string_view to_string(DicomErrc code);

class DicomError : public std::runtime_error {
 public:
  DicomError(DicomErrc code, const std::string& detail);
  DicomErrc code() const noexcept { return code_; }

 private:
  DicomErrc code_;
};

// Dotted-decimal, <= 64 chars, no empty components, no leading zeros.
bool is_valid_uid(std::string_view uid);

// Deterministic UIDs: study and series depend only on the slide, the SOP
// instance UID additionally on the level. Throws kUidInvalid for a malformed
// root and kRootTooLong when the SOP UID would exceed 64 characters.
UidTriple make_uids(std::string_view slide_id, std::uint32_t level_index,
                    std::string_view root = kDefaultUidRoot);

// Part 10 stream: 128 zero bytes, "DICM", file meta group, then the dataset in
// Explicit VR Little Endian with tags in ascending order.
Bytes encode_instance(const Level& level, const UidTriple& uids, std::uint32_t level_index);

// Strict parse of the subset written by encode_instance. Unknown elements are
// skipped by their declared lengths.
DicomInstance decode_instance(ByteView bytes);

// Raw element headers of a stream, for inspection and tests.
struct ElementHeader {
  std::uint16_t group = 0;
  std::uint16_t element = 0;
  std::string vr;
  std::uint32_t length = 0;
  std::size_t value_offset = 0;
};
std::vector<ElementHeader> scan_elements(ByteView bytes);

}  // namespace tilepress
