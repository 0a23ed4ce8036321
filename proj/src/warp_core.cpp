#include "dae/warp_core.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace dae {

namespace {

constexpr char kMagic[4] = {'D', 'A', 'E', 'W'};

static_assert(std::endian::native == std::endian::little, "DAEW I/O assumes a little-endian host");

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw InvalidInput("DAEW: truncated header");
  return v;
}

}  // namespace

void write_fields(std::ostream& os, const WarpField& fields) {
  os.write(kMagic, 4);
  put_u32(os, kWarpFileVersion);
  put_u32(os, static_cast<std::uint32_t>(fields.batch()));
  put_u32(os, static_cast<std::uint32_t>(fields.height()));
  put_u32(os, static_cast<std::uint32_t>(fields.width()));
  os.write(reinterpret_cast<const char*>(fields.grid.data()),
           static_cast<std::streamsize>(fields.grid.size() * sizeof(float)));
  if (!os) throw std::runtime_error("DAEW: write failed");
}

void write_fields(const std::string& path, const WarpField& fields) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_fields(os, fields);
}

WarpField read_fields(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw InvalidInput("DAEW: bad magic");
  const std::uint32_t version = get_u32(is);
  if (version != kWarpFileVersion) {
    throw InvalidInput("DAEW: unsupported version " + std::to_string(version));
  }
  const int n = static_cast<int>(get_u32(is));
  const int h = static_cast<int>(get_u32(is));
  const int w = static_cast<int>(get_u32(is));
  WarpField f(n, h, w);
  if (!is.read(reinterpret_cast<char*>(f.grid.data()), static_cast<std::streamsize>(f.grid.size() * sizeof(float)))) {
    throw InvalidInput("DAEW: truncated payload");
  }
  return f;
}

WarpField read_fields(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  return read_fields(is);
}

}  // namespace dae
