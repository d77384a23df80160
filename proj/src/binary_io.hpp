#pragma once

// Little-endian binary helpers shared by the CBRE / CBRM / CBRW writers.
// Assumes a little-endian host (checked at compile time).

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "cbrm/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts unsupported");

namespace cbrm::detail {

template <typename T>
void write_raw(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_raw(std::istream& in, const std::string& path, const char* what) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) {
    const auto pos = in.tellg();
    const long long offset = pos == std::streampos(-1) ? 0 : static_cast<long long>(pos);
    throw FormatError(path + ": truncated while reading " + what + " at byte offset " +
                      std::to_string(offset));
  }
  return value;
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open file: " + path);
  return in;
}

inline std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open file for writing: " + path);
  return out;
}

inline void expect_magic(std::istream& in, const std::string& path, const char magic[4]) {
  char got[4] = {};
  in.read(got, 4);
  if (!in || std::memcmp(got, magic, 4) != 0)
    throw FormatError(path + ": bad magic at byte offset 0 (expected \"" +
                      std::string(magic, 4) + "\")");
}

}  // namespace cbrm::detail
