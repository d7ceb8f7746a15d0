#include "histlayer/binary_io.hpp"

#include <bit>
#include <fstream>
#include <iterator>

#include "histlayer/error.hpp"

namespace histlayer {

void ByteWriter::magic(std::string_view m) {
  for (char ch : m) buf_.push_back(static_cast<std::uint8_t>(ch));
}

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::string(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  for (char ch : s) buf_.push_back(static_cast<std::uint8_t>(ch));
}

void ByteReader::need(std::size_t n) {
  if (remaining() < n) {
    throw FormatError(FormatError::Kind::kTruncated, what_ + ": truncated at byte " + std::to_string(pos_) +
                                                         " (needed " + std::to_string(n) + " more, have " +
                                                         std::to_string(remaining()) + ")");
  }
}

void ByteReader::expect_magic(std::string_view m) {
  if (remaining() < m.size()) {
    throw FormatError(FormatError::Kind::kBadMagic,
                      what_ + ": file too short for magic, expected \"" + std::string(m) + "\"");
  }
  std::string got(reinterpret_cast<const char*>(data_.data() + pos_), m.size());
  if (got != m) {
    throw FormatError(FormatError::Kind::kBadMagic, what_ + ": bad magic, expected \"" + std::string(m) + "\"");
  }
  pos_ += m.size();
}

std::uint8_t ByteReader::u8() {
  need(1);
  return data_[pos_++];
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_++]) << (8 * i);
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_++]) << (8 * i);
  return v;
}

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::string ByteReader::string() {
  const std::uint32_t n = u32();
  auto b = bytes(n);
  return std::string(reinterpret_cast<const char*>(b.data()), b.size());
}

std::span<const std::uint8_t> ByteReader::bytes(std::size_t n) {
  need(n);
  auto out = data_.subspan(pos_, n);
  pos_ += n;
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace histlayer
