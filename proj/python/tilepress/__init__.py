"""Slide pyramid to DICOM conversion and workflow benchmarks."""

from ._tilepress import (
    DicomError,
    DicomStoreError,
    WsiError,
    __version__,
    bench,
    checkpoints_for,
    convert,
    convert_to_store,
    decode_instance,
    generate_slide,
    make_uids,
    read_spyr,
    set_log_level,
)

__all__ = [
    "DicomError",
    "DicomStoreError",
    "WsiError",
    "__version__",
    "bench",
    "checkpoints_for",
    "convert",
    "convert_to_store",
    "decode_instance",
    "generate_slide",
    "make_uids",
    "read_spyr",
    "set_log_level",
]
