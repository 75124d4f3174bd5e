#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "slq/tensor.hpp"

namespace slq {

// Checkpoint container: magic "SLQ1", a version byte, a manifest of
// (name, dtype, shape, byte offset, checksum) records, then the raw
// little-endian arrays. Loaders verify every checksum.

enum class EntryDType : std::uint8_t { kF32 = 0, kF64 = 1, kU64 = 2 };

struct CheckpointEntry {
  std::string name;
  EntryDType dtype = EntryDType::kF32;
  Shape shape;
  std::vector<std::byte> raw;  // little-endian payload
};

std::uint32_t crc32(std::span<const std::byte> bytes);

void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<CheckpointEntry>& entries);

// IntegrityError on bad magic, unknown version, truncation or checksum
// mismatch.
std::vector<CheckpointEntry> load_checkpoint(const std::filesystem::path& path);

// Tensor <-> entry conversion (values only; grad state is not serialized).
template <typename S>
CheckpointEntry to_entry(const std::string& name, const Tensor<S>& t);

template <typename S>
Tensor<S> from_entry(const CheckpointEntry& entry);

CheckpointEntry to_entry_u64(const std::string& name,
                             const std::vector<std::uint64_t>& values);
std::vector<std::uint64_t> from_entry_u64(const CheckpointEntry& entry);

// Content checksum of a tensor's raw little-endian bytes; the freeze
// contract compares these before/after adaptation.
template <typename S>
std::uint32_t tensor_checksum(const Tensor<S>& t);

// ---------------------------------------------------------------------------
// Little-endian scalar packing
// ---------------------------------------------------------------------------

namespace detail {

template <typename U>
void append_le(std::vector<std::byte>& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<std::byte>((value >> (8 * i)) & 0xff));
  }
}

template <typename U>
U read_le(std::span<const std::byte> bytes, std::size_t offset) {
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    value |= static_cast<U>(static_cast<std::uint8_t>(bytes[offset + i])) << (8 * i);
  }
  return value;
}

std::uint32_t float_bits(float v);
std::uint64_t double_bits(double v);
float bits_to_float(std::uint32_t b);
double bits_to_double(std::uint64_t b);

}  // namespace detail

template <typename S>
CheckpointEntry to_entry(const std::string& name, const Tensor<S>& t) {
  CheckpointEntry e;
  e.name = name;
  e.shape = t.shape();
  if constexpr (sizeof(S) == 4) {
    e.dtype = EntryDType::kF32;
    for (S v : t.values()) detail::append_le(e.raw, detail::float_bits(static_cast<float>(v)));
  } else {
    e.dtype = EntryDType::kF64;
    for (S v : t.values()) detail::append_le(e.raw, detail::double_bits(static_cast<double>(v)));
  }
  return e;
}

template <typename S>
Tensor<S> from_entry(const CheckpointEntry& entry) {
  const int n = shape_numel(entry.shape);
  std::vector<S> values(static_cast<std::size_t>(n));
  if (entry.dtype == EntryDType::kF32) {
    if (entry.raw.size() != static_cast<std::size_t>(n) * 4) {
      throw IntegrityError("entry '" + entry.name + "': payload size mismatch");
    }
    for (int i = 0; i < n; ++i) {
      values[static_cast<std::size_t>(i)] = static_cast<S>(detail::bits_to_float(
          detail::read_le<std::uint32_t>(entry.raw, static_cast<std::size_t>(i) * 4)));
    }
  } else if (entry.dtype == EntryDType::kF64) {
    if (entry.raw.size() != static_cast<std::size_t>(n) * 8) {
      throw IntegrityError("entry '" + entry.name + "': payload size mismatch");
    }
    for (int i = 0; i < n; ++i) {
      values[static_cast<std::size_t>(i)] = static_cast<S>(detail::bits_to_double(
          detail::read_le<std::uint64_t>(entry.raw, static_cast<std::size_t>(i) * 8)));
    }
  } else {
    throw IntegrityError("entry '" + entry.name + "': not a float tensor");
  }
  return Tensor<S>::from_values(entry.shape, std::move(values));
}

template <typename S>
std::uint32_t tensor_checksum(const Tensor<S>& t) {
  std::vector<std::byte> raw;
  raw.reserve(t.values().size() * sizeof(S));
  if constexpr (sizeof(S) == 4) {
    for (S v : t.values()) detail::append_le(raw, detail::float_bits(static_cast<float>(v)));
  } else {
    for (S v : t.values()) detail::append_le(raw, detail::double_bits(static_cast<double>(v)));
  }
  return crc32(raw);
}

}  // namespace slq
