#include "nasaudit/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "nasaudit/error.hpp"

namespace nasaudit {

namespace {

constexpr char kMagic[8] = {'N', 'A', 'S', 'A', 'U', 'D', '0', '1'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }

std::uint32_t get_u32(std::istream& is, const std::filesystem::path& p) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw FormatError("checkpoint " + p.string() + ": truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& is, const std::filesystem::path& p) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw FormatError("checkpoint " + p.string() + ": truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

struct RawEntry {
  std::string name;
  Tensor value{std::vector<std::size_t>{0}};
};

std::vector<RawEntry> read_entries(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("checkpoint " + path.string() + ": cannot open");
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw FormatError("checkpoint " + path.string() + ": bad magic");
  const std::uint32_t version = get_u32(is, path);
  if (version != kVersion)
    throw FormatError("checkpoint " + path.string() + ": unsupported version " +
                      std::to_string(version));
  const std::uint64_t count = get_u64(is, path);
  std::vector<RawEntry> out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = get_u32(is, path);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(name_len)))
      throw FormatError("checkpoint " + path.string() + ": truncated");
    const std::uint32_t rank = get_u32(is, path);
    std::vector<std::size_t> shape(rank);
    for (std::uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<std::size_t>(get_u64(is, path));
    Tensor t(shape);
    for (std::size_t j = 0; j < t.size(); ++j)
      t.data()[j] = std::bit_cast<double>(get_u64(is, path));
    out.push_back(RawEntry{std::move(name), std::move(t)});
  }
  return out;
}

}  // namespace

void save_checkpoint(const ParamStore& store, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("checkpoint " + path.string() + ": cannot write");
  os.write(kMagic, 8);
  put_u32(os, kVersion);
  put_u64(os, store.count());
  for (std::size_t i = 0; i < store.count(); ++i) {
    const std::string& name = store.name(i);
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    const Tensor& t = store.value(i);
    put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d = 0; d < t.rank(); ++d) put_u64(os, t.shape()[d]);
    for (std::size_t j = 0; j < t.size(); ++j) put_f64(os, t.data()[j]);
  }
  if (!os) throw FormatError("checkpoint " + path.string() + ": write failed");
}

void load_checkpoint_into(ParamStore& store, const std::filesystem::path& path) {
  std::vector<RawEntry> entries = read_entries(path);
  if (entries.size() != store.count())
    throw FormatError("checkpoint " + path.string() + ": holds " + std::to_string(entries.size()) +
                      " parameters, store expects " + std::to_string(store.count()));
  for (RawEntry& e : entries) {
    const int idx = store.index_of(e.name);
    if (idx < 0) throw FormatError("checkpoint " + path.string() + ": unknown parameter " + e.name);
    Tensor& dst = store.value(static_cast<std::size_t>(idx));
    if (!dst.same_shape(e.value))
      throw FormatError("checkpoint " + path.string() + ": shape mismatch for " + e.name + ", " +
                        e.value.shape_string() + " vs " + dst.shape_string());
    dst = std::move(e.value);
  }
}

ParamStore load_checkpoint(const std::filesystem::path& path) {
  ParamStore store;
  for (RawEntry& e : read_entries(path)) store.add(std::move(e.name), std::move(e.value));
  return store;
}

}  // namespace nasaudit
