#pragma once

#include <zlib.h>

#include <cctype>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include "prd/errors.hpp"

// Minimal reader for NumPy .npz archives (zip container of .npy arrays),
// covering stored and deflated members and zip64 size fields.

namespace prd::io {

struct NpyArray {
  std::string descr;  // numpy dtype string, e.g. "|u1", "<i8"
  bool fortran_order = false;
  std::vector<std::size_t> shape;
  std::vector<std::uint8_t> data;

  std::size_t element_count() const {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
  }
};

namespace detail {

inline std::uint16_t le16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }
inline std::uint32_t le32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint64_t le64(const std::uint8_t* p) {
  return static_cast<std::uint64_t>(le32(p)) | (static_cast<std::uint64_t>(le32(p + 4)) << 32);
}

inline std::vector<std::uint8_t> inflate_raw(const std::uint8_t* src, std::size_t src_len, std::size_t out_len,
                                             const std::string& member) {
  std::vector<std::uint8_t> out(out_len);
  z_stream zs{};
  if (inflateInit2(&zs, -MAX_WBITS) != Z_OK) throw FormatError("zlib init failed for " + member);
  zs.next_in = const_cast<Bytef*>(src);
  zs.avail_in = static_cast<uInt>(src_len);
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out_len);
  const int rc = inflate(&zs, Z_FINISH);
  inflateEnd(&zs);
  if (rc != Z_STREAM_END || zs.total_out != out_len) throw FormatError("corrupt deflate stream in member " + member);
  return out;
}

inline std::string header_value(const std::string& header, const std::string& key) {
  const auto k = header.find("'" + key + "'");
  if (k == std::string::npos) return {};
  auto pos = header.find(':', k);
  if (pos == std::string::npos) return {};
  ++pos;
  while (pos < header.size() && header[pos] == ' ') ++pos;
  if (pos >= header.size()) return {};
  if (header[pos] == '\'') {
    const auto end = header.find('\'', pos + 1);
    return header.substr(pos + 1, end - pos - 1);
  }
  if (header[pos] == '(') {
    const auto end = header.find(')', pos);
    return header.substr(pos, end - pos + 1);
  }
  auto end = header.find_first_of(",}", pos);
  return header.substr(pos, end - pos);
}

}  // namespace detail

inline NpyArray parse_npy(const std::vector<std::uint8_t>& bytes, const std::string& member) {
  static constexpr std::uint8_t kMagic[6] = {0x93, 'N', 'U', 'M', 'P', 'Y'};
  if (bytes.size() < 10 || std::memcmp(bytes.data(), kMagic, 6) != 0) {
    throw FormatError("member " + member + " is not a .npy array");
  }
  const int major = bytes[6];
  std::size_t header_len = 0;
  std::size_t offset = 0;
  if (major == 1) {
    header_len = detail::le16(bytes.data() + 8);
    offset = 10;
  } else {
    if (bytes.size() < 12) throw FormatError("truncated .npy header in " + member);
    header_len = detail::le32(bytes.data() + 8);
    offset = 12;
  }
  if (offset + header_len > bytes.size()) throw FormatError("truncated .npy header in " + member);
  const std::string header(reinterpret_cast<const char*>(bytes.data() + offset), header_len);

  NpyArray arr;
  arr.descr = detail::header_value(header, "descr");
  arr.fortran_order = detail::header_value(header, "fortran_order").find("True") != std::string::npos;
  const std::string shape = detail::header_value(header, "shape");
  if (arr.descr.empty() || shape.empty()) throw FormatError("malformed .npy header in " + member);
  std::size_t i = 0;
  while (i < shape.size()) {
    if (std::isdigit(static_cast<unsigned char>(shape[i]))) {
      std::size_t v = 0;
      while (i < shape.size() && std::isdigit(static_cast<unsigned char>(shape[i]))) v = v * 10 + (shape[i++] - '0');
      arr.shape.push_back(v);
    } else {
      ++i;
    }
  }
  arr.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset + header_len), bytes.end());
  return arr;
}

/// Reads every .npy member of an .npz file, keyed by name without extension.
inline std::map<std::string, NpyArray> read_npz(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open archive " + path.string());
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = path.string();

  // End of central directory record.
  if (buf.size() < 22) throw FormatError("archive " + where + " is too small to be a zip file");
  std::size_t eocd = std::string::npos;
  for (std::size_t p = buf.size() - 22 + 1; p-- > 0;) {
    if (detail::le32(buf.data() + p) == 0x06054b50) {
      eocd = p;
      break;
    }
    if (buf.size() - p > 22 + 65535) break;
  }
  if (eocd == std::string::npos) throw FormatError("archive " + where + " has no zip directory");
  std::uint64_t entries = detail::le16(buf.data() + eocd + 10);
  std::uint64_t cd_offset = detail::le32(buf.data() + eocd + 16);
  if (cd_offset == 0xFFFFFFFFu || entries == 0xFFFF) {
    // zip64 end-of-central-directory locator precedes the classic record
    if (eocd < 20 || detail::le32(buf.data() + eocd - 20) != 0x07064b50) {
      throw FormatError("archive " + where + " has a broken zip64 directory");
    }
    const std::uint64_t z64 = detail::le64(buf.data() + eocd - 20 + 8);
    if (z64 + 56 > buf.size() || detail::le32(buf.data() + z64) != 0x06064b50) {
      throw FormatError("archive " + where + " has a broken zip64 directory");
    }
    entries = detail::le64(buf.data() + z64 + 32);
    cd_offset = detail::le64(buf.data() + z64 + 48);
  }

  std::map<std::string, NpyArray> out;
  std::size_t p = cd_offset;
  for (std::uint64_t e = 0; e < entries; ++e) {
    if (p + 46 > buf.size() || detail::le32(buf.data() + p) != 0x02014b50) {
      throw FormatError("archive " + where + " has a corrupt central directory");
    }
    const std::uint16_t method = detail::le16(buf.data() + p + 10);
    std::uint64_t comp_size = detail::le32(buf.data() + p + 20);
    std::uint64_t raw_size = detail::le32(buf.data() + p + 24);
    const std::uint16_t name_len = detail::le16(buf.data() + p + 28);
    const std::uint16_t extra_len = detail::le16(buf.data() + p + 30);
    const std::uint16_t comment_len = detail::le16(buf.data() + p + 32);
    std::uint64_t local = detail::le32(buf.data() + p + 42);
    std::string name(reinterpret_cast<const char*>(buf.data() + p + 46), name_len);

    const std::uint8_t* extra = buf.data() + p + 46 + name_len;
    for (std::size_t x = 0; x + 4 <= extra_len;) {
      const std::uint16_t id = detail::le16(extra + x);
      const std::uint16_t len = detail::le16(extra + x + 2);
      if (id == 0x0001) {
        std::size_t q = x + 4;
        if (raw_size == 0xFFFFFFFFu) raw_size = detail::le64(extra + q), q += 8;
        if (comp_size == 0xFFFFFFFFu) comp_size = detail::le64(extra + q), q += 8;
        if (local == 0xFFFFFFFFu) local = detail::le64(extra + q);
      }
      x += 4 + len;
    }
    p += 46 + name_len + extra_len + comment_len;

    if (local + 30 > buf.size() || detail::le32(buf.data() + local) != 0x04034b50) {
      throw FormatError("archive " + where + ": bad local header for member " + name);
    }
    const std::size_t data_at =
        local + 30 + detail::le16(buf.data() + local + 26) + detail::le16(buf.data() + local + 28);
    if (data_at + comp_size > buf.size()) throw FormatError("archive " + where + ": truncated member " + name);

    std::vector<std::uint8_t> raw;
    if (method == 0) {
      raw.assign(buf.begin() + static_cast<std::ptrdiff_t>(data_at),
                 buf.begin() + static_cast<std::ptrdiff_t>(data_at + comp_size));
    } else if (method == 8) {
      raw = detail::inflate_raw(buf.data() + data_at, comp_size, raw_size, name);
    } else {
      throw FormatError("archive " + where + ": unsupported compression for member " + name);
    }
    std::string key = name;
    if (key.size() > 4 && key.ends_with(".npy")) key.resize(key.size() - 4);
    out.emplace(key, parse_npy(raw, name));
  }
  return out;
}

}  // namespace prd::io
