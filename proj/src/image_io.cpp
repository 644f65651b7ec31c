#include "placekd/image_io.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "placekd/errors.h"

namespace placekd {
namespace {

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::istream& in) {
  std::string token;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string discard;
      std::getline(in, discard);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!token.empty()) return token;
      continue;
    }
    token.push_back(c);
  }
  return token;
}

struct NetpbmHeader {
  std::string magic;
  int width = 0;
  int height = 0;
  int maxval = 0;
};

NetpbmHeader read_header(std::istream& in, const std::filesystem::path& path) {
  NetpbmHeader h;
  h.magic = next_token(in);
  try {
    h.width = std::stoi(next_token(in));
    h.height = std::stoi(next_token(in));
    h.maxval = std::stoi(next_token(in));
  } catch (const std::exception&) {
    throw LoadError("malformed netpbm header in " + path.string());
  }
  if (h.width <= 0 || h.height <= 0 || h.maxval <= 0 || h.maxval > 65535) {
    throw LoadError("invalid netpbm dimensions in " + path.string());
  }
  return h;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open image " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

}  // namespace

RgbImage read_rgb(const std::filesystem::path& path) {
  auto in = open_in(path);
  NetpbmHeader h = read_header(in, path);
  if (h.magic != "P6" || h.maxval != 255) {
    throw LoadError("expected 8-bit P6 image: " + path.string());
  }
  RgbImage image(h.height, h.width);
  in.read(reinterpret_cast<char*>(image.pixels.data()),
          static_cast<std::streamsize>(image.pixels.size()));
  if (!in) throw LoadError("truncated image data in " + path.string());
  return image;
}

void write_rgb(const std::filesystem::path& path, const RgbImage& image) {
  auto out = open_out(path);
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

LabelMap read_label_map(const std::filesystem::path& path) {
  auto in = open_in(path);
  NetpbmHeader h = read_header(in, path);
  if (h.magic != "P5") throw LoadError("expected P5 label map: " + path.string());
  LabelMap labels(h.height, h.width);
  const std::size_t n = labels.labels.size();
  if (h.maxval < 256) {
    std::vector<unsigned char> raw(n);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n));
    for (std::size_t i = 0; i < n; ++i) labels.labels[i] = raw[i];
  } else {
    std::vector<unsigned char> raw(2 * n);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(2 * n));
    for (std::size_t i = 0; i < n; ++i) labels.labels[i] = (raw[2 * i] << 8) | raw[2 * i + 1];
  }
  if (!in) throw LoadError("truncated label data in " + path.string());
  return labels;
}

void write_label_map(const std::filesystem::path& path, const LabelMap& labels) {
  int max_label = 0;
  for (int v : labels.labels) {
    if (v < 0 || v > 65535) throw IoError("label value out of range for " + path.string());
    max_label = std::max(max_label, v);
  }
  const bool wide = max_label > 255;
  auto out = open_out(path);
  out << "P5\n" << labels.width << ' ' << labels.height << '\n' << (wide ? 65535 : 255) << '\n';
  std::vector<unsigned char> raw;
  raw.reserve(labels.labels.size() * (wide ? 2 : 1));
  for (int v : labels.labels) {
    if (wide) raw.push_back(static_cast<unsigned char>(v >> 8));
    raw.push_back(static_cast<unsigned char>(v & 0xff));
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

RgbImage resize_bilinear(const RgbImage& image, int height, int width) {
  if (image.height == height && image.width == width) return image;
  RgbImage out(height, width);
  const double sy = static_cast<double>(image.height) / height;
  const double sx = static_cast<double>(image.width) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double v = (1 - wy) * ((1 - wx) * image.px(y0, x0)[c] + wx * image.px(y0, x1)[c]) +
                         wy * ((1 - wx) * image.px(y1, x0)[c] + wx * image.px(y1, x1)[c]);
        out.px(y, x)[c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

LabelMap resize_nearest(const LabelMap& labels, int height, int width) {
  if (labels.height == height && labels.width == width) return labels;
  LabelMap out(height, width);
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(labels.height - 1,
                            static_cast<int>((static_cast<long long>(y) * labels.height) / height));
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(labels.width - 1,
                              static_cast<int>((static_cast<long long>(x) * labels.width) / width));
      out.at(y, x) = labels.at(sy, sx);
    }
  }
  return out;
}

Tensor3<float> rgb_to_tensor(const RgbImage& image) {
  Tensor3<float> t(3, image.height, image.width);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const std::uint8_t* p = image.px(y, x);
      for (int c = 0; c < 3; ++c) t.at(c, y, x) = (p[c] / 255.0f - 0.5f) / 0.25f;
    }
  }
  return t;
}

}  // namespace placekd
