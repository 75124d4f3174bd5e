#include "slq/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

namespace slq {

namespace detail {

std::uint32_t float_bits(float v) { return std::bit_cast<std::uint32_t>(v); }
std::uint64_t double_bits(double v) { return std::bit_cast<std::uint64_t>(v); }
float bits_to_float(std::uint32_t b) { return std::bit_cast<float>(b); }
double bits_to_double(std::uint64_t b) { return std::bit_cast<double>(b); }

namespace {

std::array<std::uint32_t, 256> make_crc_table() {
  std::array<std::uint32_t, 256> table{};
  for (std::uint32_t i = 0; i < 256; ++i) {
    std::uint32_t c = i;
    for (int k = 0; k < 8; ++k) {
      c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
    }
    table[i] = c;
  }
  return table;
}

}  // namespace

}  // namespace detail

std::uint32_t crc32(std::span<const std::byte> bytes) {
  static const auto table = detail::make_crc_table();
  std::uint32_t c = 0xffffffffu;
  for (std::byte b : bytes) {
    c = table[(c ^ static_cast<std::uint8_t>(b)) & 0xffu] ^ (c >> 8);
  }
  return c ^ 0xffffffffu;
}

namespace {

constexpr char kMagic[4] = {'S', 'L', 'Q', '1'};
constexpr std::uint8_t kVersion = 1;

}  // namespace

void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<CheckpointEntry>& entries) {
  // Manifest first so payload offsets are known before writing.
  std::vector<std::byte> manifest;
  detail::append_le<std::uint32_t>(manifest, static_cast<std::uint32_t>(entries.size()));
  std::size_t manifest_size = manifest.size();
  for (const auto& e : entries) {
    manifest_size += 2 + e.name.size() + 1 + 1 + 4 * e.shape.size() + 8 + 4;
  }
  std::uint64_t offset = 4 + 1 + manifest_size;

  manifest.clear();
  detail::append_le<std::uint32_t>(manifest, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    detail::append_le<std::uint16_t>(manifest, static_cast<std::uint16_t>(e.name.size()));
    for (char c : e.name) manifest.push_back(static_cast<std::byte>(c));
    manifest.push_back(static_cast<std::byte>(e.dtype));
    manifest.push_back(static_cast<std::byte>(e.shape.size()));
    for (int d : e.shape) detail::append_le<std::uint32_t>(manifest, static_cast<std::uint32_t>(d));
    detail::append_le<std::uint64_t>(manifest, offset);
    detail::append_le<std::uint32_t>(manifest, crc32(e.raw));
    offset += e.raw.size();
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot open checkpoint for writing: " + path.string());
  out.write(kMagic, 4);
  out.put(static_cast<char>(kVersion));
  out.write(reinterpret_cast<const char*>(manifest.data()),
            static_cast<std::streamsize>(manifest.size()));
  for (const auto& e : entries) {
    out.write(reinterpret_cast<const char*>(e.raw.data()),
              static_cast<std::streamsize>(e.raw.size()));
  }
  if (!out) throw InputError("checkpoint write failed: " + path.string());
}

std::vector<CheckpointEntry> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IntegrityError("cannot open checkpoint: " + path.string());
  std::vector<char> chars((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  std::vector<std::byte> bytes(chars.size());
  std::memcpy(bytes.data(), chars.data(), chars.size());

  if (bytes.size() < 9 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw IntegrityError("bad checkpoint magic: " + path.string());
  }
  if (static_cast<std::uint8_t>(bytes[4]) != kVersion) {
    throw IntegrityError("unsupported checkpoint version in " + path.string());
  }
  std::size_t pos = 5;
  auto need = [&](std::size_t n) {
    if (pos + n > bytes.size()) {
      throw IntegrityError("truncated checkpoint: " + path.string());
    }
  };
  need(4);
  const std::uint32_t count = detail::read_le<std::uint32_t>(bytes, pos);
  pos += 4;

  struct RawEntry {
    CheckpointEntry entry;
    std::uint64_t offset = 0;
    std::uint64_t size = 0;
    std::uint32_t checksum = 0;
  };
  std::vector<RawEntry> raws;
  raws.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    RawEntry r;
    need(2);
    const std::uint16_t name_len = detail::read_le<std::uint16_t>(bytes, pos);
    pos += 2;
    need(name_len);
    r.entry.name.assign(reinterpret_cast<const char*>(bytes.data() + pos), name_len);
    pos += name_len;
    need(2);
    const auto dtype = static_cast<std::uint8_t>(bytes[pos++]);
    if (dtype > 2) throw IntegrityError("unknown dtype in " + path.string());
    r.entry.dtype = static_cast<EntryDType>(dtype);
    const auto rank = static_cast<std::uint8_t>(bytes[pos++]);
    need(static_cast<std::size_t>(rank) * 4 + 12);
    for (int d = 0; d < rank; ++d) {
      r.entry.shape.push_back(static_cast<int>(detail::read_le<std::uint32_t>(bytes, pos)));
      pos += 4;
    }
    r.offset = detail::read_le<std::uint64_t>(bytes, pos);
    pos += 8;
    r.checksum = detail::read_le<std::uint32_t>(bytes, pos);
    pos += 4;
    const std::size_t elem =
        r.entry.dtype == EntryDType::kF32 ? 4 : 8;
    r.size = static_cast<std::uint64_t>(shape_numel(r.entry.shape)) * elem;
    raws.push_back(std::move(r));
  }

  std::vector<CheckpointEntry> entries;
  entries.reserve(raws.size());
  for (auto& r : raws) {
    if (r.offset + r.size > bytes.size()) {
      throw IntegrityError("entry '" + r.entry.name + "' exceeds file: " + path.string());
    }
    r.entry.raw.assign(bytes.begin() + static_cast<std::ptrdiff_t>(r.offset),
                       bytes.begin() + static_cast<std::ptrdiff_t>(r.offset + r.size));
    if (crc32(r.entry.raw) != r.checksum) {
      throw IntegrityError("checksum mismatch for '" + r.entry.name + "' in " +
                           path.string());
    }
    entries.push_back(std::move(r.entry));
  }
  return entries;
}

CheckpointEntry to_entry_u64(const std::string& name,
                             const std::vector<std::uint64_t>& values) {
  CheckpointEntry e;
  e.name = name;
  e.dtype = EntryDType::kU64;
  e.shape = {static_cast<int>(values.size())};
  for (std::uint64_t v : values) detail::append_le(e.raw, v);
  return e;
}

std::vector<std::uint64_t> from_entry_u64(const CheckpointEntry& entry) {
  if (entry.dtype != EntryDType::kU64) {
    throw IntegrityError("entry '" + entry.name + "': expected u64 payload");
  }
  const std::size_t n = entry.raw.size() / 8;
  std::vector<std::uint64_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = detail::read_le<std::uint64_t>(entry.raw, i * 8);
  }
  return out;
}

}  // namespace slq
