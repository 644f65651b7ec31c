#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "placekd/model.h"

namespace placekd::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("placekd-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline BackboneConfig tiny_backbone(int in_channels, int base = 2) {
  BackboneConfig c = BackboneConfig::rgb_like(in_channels);
  c.stage_channels = {base, base + 1, base + 2, base + 3, base + 4};
  c.preset = "tiny";
  return c;
}

inline Tensor3<float> random_tensor(int c, int h, int w, std::mt19937_64& rng, float lo = -1.f, float hi = 1.f) {
  std::uniform_real_distribution<float> u(lo, hi);
  Tensor3<float> t(c, h, w);
  for (auto& v : t.data) v = u(rng);
  return t;
}

inline std::vector<double> random_unit(int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(dim);
  double s = 0;
  for (auto& x : v) {
    x = n(rng);
    s += x * x;
  }
  for (auto& x : v) x /= std::sqrt(s);
  return v;
}

}  // namespace placekd::testing
