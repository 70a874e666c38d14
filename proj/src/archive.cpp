#include "burstq/archive.hpp"

#include <cstdio>
#include <cstring>

#include "burstq/error.hpp"

namespace burstq {
namespace {

constexpr std::size_t kBlock = 512;

void put_octal(char* field, std::size_t width, std::uint64_t value) {
  std::snprintf(field, width, "%0*llo", static_cast<int>(width - 1),
                static_cast<unsigned long long>(value));
}

std::uint64_t get_octal(const char* field, std::size_t width) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < width && field[i]; ++i) {
    if (field[i] == ' ') continue;
    if (field[i] < '0' || field[i] > '7') throw Error(ErrorCode::MalformedPayload, "bad tar header");
    v = v * 8 + static_cast<std::uint64_t>(field[i] - '0');
  }
  return v;
}

unsigned header_checksum(const char* h) {
  unsigned sum = 0;
  for (std::size_t i = 0; i < kBlock; ++i)
    sum += (i >= 148 && i < 156) ? ' ' : static_cast<unsigned char>(h[i]);
  return sum;
}

}  // namespace

std::string write_tar(const ArchiveEntries& files) {
  std::string out;
  for (const auto& [name, body] : files) {
    if (name.empty() || name.size() > 99)
      throw Error(ErrorCode::ValidationError, "archive member name too long: " + name);
    char h[kBlock];
    std::memset(h, 0, sizeof h);
    std::memcpy(h, name.data(), name.size());
    put_octal(h + 100, 8, 0644);
    put_octal(h + 108, 8, 0);
    put_octal(h + 116, 8, 0);
    put_octal(h + 124, 12, body.size());
    put_octal(h + 136, 12, 0);
    h[156] = '0';
    std::memcpy(h + 257, "ustar", 6);
    std::memcpy(h + 263, "00", 2);
    std::snprintf(h + 148, 8, "%06o", header_checksum(h));
    h[155] = ' ';
    out.append(h, kBlock);
    out.append(body);
    out.append((kBlock - body.size() % kBlock) % kBlock, '\0');
  }
  out.append(2 * kBlock, '\0');
  return out;
}

ArchiveEntries read_tar(std::string_view archive) {
  ArchiveEntries files;
  std::size_t pos = 0;
  while (pos + kBlock <= archive.size()) {
    const char* h = archive.data() + pos;
    bool zero = true;
    for (std::size_t i = 0; i < kBlock && zero; ++i) zero = h[i] == 0;
    if (zero) return files;
    if (get_octal(h + 148, 8) != header_checksum(h))
      throw Error(ErrorCode::MalformedPayload, "tar checksum mismatch");
    const std::string name(h, strnlen(h, 100));
    const std::uint64_t size = get_octal(h + 124, 12);
    pos += kBlock;
    if (pos + size > archive.size()) throw Error(ErrorCode::MalformedPayload, "truncated tar");
    if (h[156] == '0' || h[156] == '\0') files.emplace_back(name, std::string(archive.substr(pos, size)));
    pos += (size + kBlock - 1) / kBlock * kBlock;
  }
  throw Error(ErrorCode::MalformedPayload, "tar without end marker");
}

}  // namespace burstq
