#pragma once

#include <stdexcept>
#include <string>

namespace cscope {

/// Failure categories surfaced by the toolkit. The CLI maps these onto exit
/// classes: usage errors exit with 2, data errors with 3, numeric errors with 4.
enum class errc {
  // file format / io
  bad_magic,
  bad_size,
  bad_header,
  unsupported_datatype,
  truncated,
  io_error,
  // numerics
  range_error,
  shape_mismatch,
  input_too_small,
  batch_too_small,
  all_zero,
  // volume ops
  trim_too_long,
  // connectome
  empty_roi,
  empty_group,
  // forest
  no_split,
  single_class,
  length_mismatch,
  // manifests / splits
  duplicate_id,
  missing_file,
  bad_label,
  bad_field,
  stratum_too_small,
  // cli
  usage,
};

inline const char* errc_name(errc c) {
  switch (c) {
    case errc::bad_magic: return "BadMagic";
    case errc::bad_size: return "BadSize";
    case errc::bad_header: return "BadHeader";
    case errc::unsupported_datatype: return "UnsupportedDatatype";
    case errc::truncated: return "Truncated";
    case errc::io_error: return "IoError";
    case errc::range_error: return "RangeError";
    case errc::shape_mismatch: return "ShapeMismatch";
    case errc::input_too_small: return "InputTooSmall";
    case errc::batch_too_small: return "BatchTooSmall";
    case errc::all_zero: return "AllZero";
    case errc::trim_too_long: return "TrimTooLong";
    case errc::empty_roi: return "EmptyRoi";
    case errc::empty_group: return "EmptyGroup";
    case errc::no_split: return "NoSplit";
    case errc::single_class: return "SingleClass";
    case errc::length_mismatch: return "LengthMismatch";
    case errc::duplicate_id: return "DuplicateId";
    case errc::missing_file: return "MissingFile";
    case errc::bad_label: return "BadLabel";
    case errc::bad_field: return "BadField";
    case errc::stratum_too_small: return "StratumTooSmall";
    case errc::usage: return "Usage";
  }
  return "Unknown";
}

class error : public std::runtime_error {
public:
  error(errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}
  errc code() const noexcept { return code_; }

private:
  errc code_;
};

[[noreturn]] inline void fail(errc c, const std::string& msg) { throw error(c, msg); }

inline void require(bool cond, errc c, const std::string& msg) {
  if (!cond) fail(c, msg);
}

}  // namespace cscope
