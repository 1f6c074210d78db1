#pragma once

// FLNS tensor dump:
//
//   offset 0   "FLNS"            4-byte magic
//   offset 4   u32 version = 1   little endian
//   offset 8   u64 header_len    little endian
//   offset 16  header            UTF-8 JSON, header_len bytes
//   ...        data region       raw little-endian f32 values
//
// Header: {"data_bytes": N, "tensors": {name: {"dtype": "f32", "shape": [...],
// "byte_offset": off}}}. Offsets are relative to the start of the data region;
// the file is exactly 16 + header_len + data_bytes bytes long.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "forage/error.hpp"

namespace forage::flns {

enum class Errc {
  io,
  bad_magic,
  bad_version,
  bad_header,
  bad_dtype,
  truncated,
  size_mismatch,
  out_of_bounds,
  overlapping_ranges,
  missing_tensor,
  shape_mismatch,
};

std::string_view to_string(Errc e) noexcept;

class DumpError : public InputError {
 public:
  DumpError(Errc code, const std::string& what);
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

struct TensorInfo {
  std::vector<std::uint64_t> shape;
  std::uint64_t byte_offset = 0;

  std::uint64_t num_elements() const;
  std::uint64_t num_bytes() const { return num_elements() * sizeof(float); }
};

struct Tensor {
  std::vector<std::uint64_t> shape;
  std::vector<float> data;
};

/// Validated read-only handle; tensor payloads are read on demand.
class TensorDump {
 public:
  /// Parses and validates the header; throws DumpError.
  static TensorDump open(const std::filesystem::path& path);

  const std::filesystem::path& path() const noexcept { return path_; }
  const std::map<std::string, TensorInfo>& tensors() const noexcept { return tensors_; }
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  const TensorInfo& info(const std::string& name) const;

  /// Reads one tensor (throws DumpError{missing_tensor} if absent).
  Tensor read(const std::string& name) const;

  TensorDump(TensorDump&&) noexcept;
  TensorDump& operator=(TensorDump&&) noexcept;
  ~TensorDump();

 private:
  TensorDump() = default;

  std::filesystem::path path_;
  std::map<std::string, TensorInfo> tensors_;
  std::uint64_t data_start_ = 0;
  mutable std::ifstream file_;
  mutable std::unique_ptr<std::mutex> mutex_;
};

/// Accumulates tensors in memory and writes them as one FLNS file.
class DumpWriter {
 public:
  void add(std::string name, std::vector<std::uint64_t> shape, std::span<const float> data);
  void add(std::string name, std::span<const float> vector);
  std::size_t size() const noexcept { return entries_.size(); }

  /// Serializes to bytes (useful for tests of malformed files).
  std::string serialize() const;
  /// Writes atomically (temp file + rename).
  void write(const std::filesystem::path& path) const;

 private:
  std::map<std::string, Tensor> entries_;
};

}  // namespace forage::flns
