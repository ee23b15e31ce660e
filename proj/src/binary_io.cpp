#include "fpalign/binary_io.hpp"

#include <fmt/core.h>

#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>

namespace fpalign::io {

void ByteWriter::string16(std::string_view s) {
  if (s.size() > std::numeric_limits<std::uint16_t>::max()) {
    throw Error(ErrorKind::Parameter, fmt::format("string of {} bytes exceeds u16 length", s.size()));
  }
  u16(static_cast<std::uint16_t>(s.size()));
  bytes(s);
}

void ByteWriter::string32(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  bytes(s);
}

void ByteWriter::save(const std::filesystem::path& path) const {
  // Write-then-rename so readers never see a partial file.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, fmt::format("cannot open {} for writing", tmp.string()));
    out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw Error(ErrorKind::Io, fmt::format("write failed: {}", tmp.string()));
  }
  std::filesystem::rename(tmp, path);
}

ByteReader ByteReader::from_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, fmt::format("cannot open {}", path.string()));
  std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return ByteReader(std::move(data));
}

void ByteReader::need(std::size_t n) const {
  if (remaining() < n) {
    throw ParseError(ParseFailure::Truncated,
                     fmt::format("truncated file: need {} bytes at offset {}, have {}", n, pos_,
                                 remaining()));
  }
}

void ByteReader::expect_magic(std::string_view magic) {
  need(magic.size());
  std::string_view got(data_.data() + pos_, magic.size());
  if (got != magic) {
    throw ParseError(ParseFailure::BadMagic,
                     fmt::format("bad magic: expected \"{}\", got \"{}\"", magic, got));
  }
  pos_ += magic.size();
}

void ByteReader::f32s(std::span<float> out) {
  need(out.size_bytes());
  std::memcpy(out.data(), data_.data() + pos_, out.size_bytes());
  pos_ += out.size_bytes();
}

std::string ByteReader::string16() {
  const auto n = u16();
  need(n);
  std::string s(data_.data() + pos_, n);
  pos_ += n;
  return s;
}

std::string ByteReader::string32() {
  const auto n = u32();
  need(n);
  std::string s(data_.data() + pos_, n);
  pos_ += n;
  return s;
}

}  // namespace fpalign::io
