#include "placekd/container.h"

#include <bit>
#include <cstring>
#include <fstream>

#include "placekd/errors.h"

namespace placekd {
namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'P', 'L', 'A', 'C', 'E', 'K', 'D', '\0'};

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) v = __builtin_bswap32(v);
  return v;
}

std::uint64_t to_little64(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) v = __builtin_bswap64(v);
  return v;
}

}  // namespace

void write_text_atomic(const fs::path& path, const std::string& text) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

void write_container(const fs::path& path, const nlohmann::json& header, std::span<const float> body) {
  const std::string head = header.dump();
  std::string bytes(kMagic, sizeof(kMagic));
  const std::uint64_t len = to_little64(head.size());
  bytes.append(reinterpret_cast<const char*>(&len), sizeof(len));
  bytes += head;
  const std::size_t start = bytes.size();
  bytes.resize(start + body.size() * 4);
  for (std::size_t i = 0; i < body.size(); ++i) {
    const std::uint32_t v = to_little(std::bit_cast<std::uint32_t>(body[i]));
    std::memcpy(bytes.data() + start + 4 * i, &v, 4);
  }
  write_text_atomic(path, bytes);
}

Container read_container(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError(path.string() + ": bad magic, not a placekd container");
  }
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, 8);
  len = to_little64(len);
  if (len > bytes.size() - 16) throw FormatError(path.string() + ": header length exceeds file size");
  Container c;
  try {
    c.header = nlohmann::json::parse(bytes.substr(16, len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": corrupt header: " + e.what());
  }
  const std::size_t start = 16 + len;
  if ((bytes.size() - start) % 4 != 0) throw FormatError(path.string() + ": body is not a float32 array");
  c.body.resize((bytes.size() - start) / 4);
  for (std::size_t i = 0; i < c.body.size(); ++i) {
    std::uint32_t v;
    std::memcpy(&v, bytes.data() + start + 4 * i, 4);
    c.body[i] = std::bit_cast<float>(to_little(v));
  }
  return c;
}

}  // namespace placekd
