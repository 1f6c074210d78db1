#include "forage/flns.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <numeric>

#include <json.hpp>

#include "forage/sequence_io.hpp"

namespace forage::flns {

namespace {

constexpr char kMagic[4] = {'F', 'L', 'N', 'S'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint64_t kPreamble = 16;
// Guards against absurd header lengths in corrupt files.
constexpr std::uint64_t kMaxHeader = 1ULL << 32;

template <typename T>
T load_le(const unsigned char* p) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(p[i]) << (8 * i);
  return v;
}

template <typename T>
void store_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void swap_floats_if_big_endian(std::span<float> v) {
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& f : v) {
      auto u = std::bit_cast<std::uint32_t>(f);
      u = (u >> 24) | ((u >> 8) & 0xFF00) | ((u << 8) & 0xFF0000) | (u << 24);
      f = std::bit_cast<float>(u);
    }
  }
}

}  // namespace

std::string_view to_string(Errc e) noexcept {
  switch (e) {
    case Errc::io: return "io";
    case Errc::bad_magic: return "bad_magic";
    case Errc::bad_version: return "bad_version";
    case Errc::bad_header: return "bad_header";
    case Errc::bad_dtype: return "bad_dtype";
    case Errc::truncated: return "truncated";
    case Errc::size_mismatch: return "size_mismatch";
    case Errc::out_of_bounds: return "out_of_bounds";
    case Errc::overlapping_ranges: return "overlapping_ranges";
    case Errc::missing_tensor: return "missing_tensor";
    case Errc::shape_mismatch: return "shape_mismatch";
  }
  return "unknown";
}

DumpError::DumpError(Errc code, const std::string& what)
    : InputError("FLNS " + std::string(to_string(code)) + ": " + what), code_(code) {}

std::uint64_t TensorInfo::num_elements() const {
  return std::accumulate(shape.begin(), shape.end(), std::uint64_t{1}, std::multiplies<>());
}

TensorDump::TensorDump(TensorDump&&) noexcept = default;
TensorDump& TensorDump::operator=(TensorDump&&) noexcept = default;
TensorDump::~TensorDump() = default;

TensorDump TensorDump::open(const std::filesystem::path& path) {
  TensorDump dump;
  dump.path_ = path;
  dump.mutex_ = std::make_unique<std::mutex>();
  dump.file_.open(path, std::ios::binary);
  if (!dump.file_) throw DumpError(Errc::io, "cannot open " + path.string());

  std::error_code ec;
  const auto file_size = std::filesystem::file_size(path, ec);
  if (ec) throw DumpError(Errc::io, "cannot stat " + path.string());

  unsigned char pre[kPreamble] = {};
  const auto head = static_cast<std::streamsize>(std::min<std::uintmax_t>(file_size, kPreamble));
  dump.file_.read(reinterpret_cast<char*>(pre), head);
  if (head >= 4 && std::memcmp(pre, kMagic, 4) != 0) throw DumpError(Errc::bad_magic, path.string());
  if (head < static_cast<std::streamsize>(kPreamble)) {
    throw DumpError(Errc::truncated, "file shorter than the 16-byte preamble");
  }
  const auto version = load_le<std::uint32_t>(pre + 4);
  if (version != kVersion) throw DumpError(Errc::bad_version, "version " + std::to_string(version));
  const auto header_len = load_le<std::uint64_t>(pre + 8);
  if (header_len > kMaxHeader || kPreamble + header_len > file_size) {
    throw DumpError(Errc::truncated, "header length " + std::to_string(header_len) + " exceeds file size");
  }

  std::string header(header_len, '\0');
  if (!dump.file_.read(header.data(), static_cast<std::streamsize>(header_len))) {
    throw DumpError(Errc::truncated, "cannot read header");
  }

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(header);
  } catch (const nlohmann::json::parse_error& e) {
    throw DumpError(Errc::bad_header, e.what());
  }

  std::uint64_t data_bytes = 0;
  try {
    data_bytes = j.at("data_bytes").get<std::uint64_t>();
    for (const auto& [name, t] : j.at("tensors").items()) {
      const auto dtype = t.at("dtype").get<std::string>();
      if (dtype != "f32") throw DumpError(Errc::bad_dtype, "tensor '" + name + "' has dtype " + dtype);
      TensorInfo info;
      info.shape = t.at("shape").get<std::vector<std::uint64_t>>();
      info.byte_offset = t.at("byte_offset").get<std::uint64_t>();
      dump.tensors_.emplace(name, std::move(info));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DumpError(Errc::bad_header, e.what());
  }

  dump.data_start_ = kPreamble + header_len;
  const auto expected = dump.data_start_ + data_bytes;
  if (file_size < expected) {
    throw DumpError(Errc::truncated, "header declares " + std::to_string(expected) + " bytes, file has " +
                                         std::to_string(file_size));
  }
  if (file_size != expected) {
    throw DumpError(Errc::size_mismatch, "header declares " + std::to_string(expected) + " bytes, file has " +
                                             std::to_string(file_size));
  }

  std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges;
  for (const auto& [name, info] : dump.tensors_) {
    const auto bytes = info.num_bytes();
    if (info.byte_offset > data_bytes || bytes > data_bytes - info.byte_offset) {
      throw DumpError(Errc::out_of_bounds, "tensor '" + name + "' extends past the data region");
    }
    if (bytes > 0) ranges.emplace_back(info.byte_offset, info.byte_offset + bytes);
  }
  std::sort(ranges.begin(), ranges.end());
  for (std::size_t i = 1; i < ranges.size(); ++i) {
    if (ranges[i].first < ranges[i - 1].second) {
      throw DumpError(Errc::overlapping_ranges, "byte ranges overlap at offset " + std::to_string(ranges[i].first));
    }
  }
  return dump;
}

const TensorInfo& TensorDump::info(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw DumpError(Errc::missing_tensor, "'" + name + "' not in " + path_.string());
  return it->second;
}

Tensor TensorDump::read(const std::string& name) const {
  const auto& meta = info(name);
  Tensor t;
  t.shape = meta.shape;
  t.data.resize(meta.num_elements());
  std::lock_guard lock(*mutex_);
  file_.clear();
  file_.seekg(static_cast<std::streamoff>(data_start_ + meta.byte_offset));
  if (!file_.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(meta.num_bytes()))) {
    throw DumpError(Errc::io, "short read for '" + name + "'");
  }
  swap_floats_if_big_endian(t.data);
  return t;
}

void DumpWriter::add(std::string name, std::vector<std::uint64_t> shape, std::span<const float> data) {
  const auto n = std::accumulate(shape.begin(), shape.end(), std::uint64_t{1}, std::multiplies<>());
  if (n != data.size()) {
    throw DumpError(Errc::shape_mismatch, "tensor '" + name + "': shape holds " + std::to_string(n) +
                                              " values, got " + std::to_string(data.size()));
  }
  entries_[std::move(name)] = Tensor{std::move(shape), {data.begin(), data.end()}};
}

void DumpWriter::add(std::string name, std::span<const float> vector) {
  add(std::move(name), {vector.size()}, vector);
}

std::string DumpWriter::serialize() const {
  nlohmann::json tensors = nlohmann::json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : entries_) {
    tensors[name] = {{"dtype", "f32"}, {"shape", t.shape}, {"byte_offset", offset}};
    offset += t.data.size() * sizeof(float);
  }
  const nlohmann::json header{{"data_bytes", offset}, {"tensors", tensors}};
  const auto header_text = header.dump();

  std::string out(kMagic, 4);
  store_le<std::uint32_t>(out, kVersion);
  store_le<std::uint64_t>(out, header_text.size());
  out += header_text;
  out.reserve(out.size() + offset);
  for (const auto& [name, t] : entries_) {
    std::vector<float> le(t.data);
    swap_floats_if_big_endian(le);
    out.append(reinterpret_cast<const char*>(le.data()), le.size() * sizeof(float));
  }
  return out;
}

void DumpWriter::write(const std::filesystem::path& path) const { write_file_atomic(path, serialize()); }

}  // namespace forage::flns
