#include "placekd/synth.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <random>

#include "placekd/errors.h"
#include "placekd/image_io.h"
#include "placekd/random.h"
#include "placekd/slme.h"

namespace placekd {
namespace fs = std::filesystem;

void SynthConfig::validate() const {
  if (n_places < 2) throw ConfigError("synth.n_places must be >= 2");
  if (views_per_place < 2) throw ConfigError("synth.views_per_place must be >= 2");
  if (height < 8 || width < 8) throw ConfigError("synth image size must be at least 8x8");
  if (!(corrupt_fraction >= 0 && corrupt_fraction <= 1)) throw ConfigError("synth.corrupt_fraction must be in [0,1]");
  if (geometric_jitter_px < 0) throw ConfigError("synth.geometric_jitter_px must be >= 0");
  if (!(train_fraction > 0 && val_fraction >= 0 && train_fraction + val_fraction < 1)) {
    throw ConfigError("synth split fractions must satisfy train > 0, val >= 0, train + val < 1");
  }
  if (!(place_spacing_m > 0)) throw ConfigError("synth.place_spacing_m must be > 0");
}

nlohmann::json SynthConfig::to_json() const {
  return {{"n_places", n_places},
          {"views_per_place", views_per_place},
          {"height", height},
          {"width", width},
          {"corrupt_fraction", corrupt_fraction},
          {"color_jitter", color_jitter},
          {"illumination_shift", illumination_shift},
          {"occluder_density", occluder_density},
          {"noise_sigma", noise_sigma},
          {"geometric_jitter_px", geometric_jitter_px},
          {"train_fraction", train_fraction},
          {"val_fraction", val_fraction},
          {"place_spacing_m", place_spacing_m},
          {"seed", seed}};
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j, SynthConfig d) {
  const nlohmann::json known = d.to_json();
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown synth config field '" + key + "'");
  }
  try {
    d.n_places = j.value("n_places", d.n_places);
    d.views_per_place = j.value("views_per_place", d.views_per_place);
    d.height = j.value("height", d.height);
    d.width = j.value("width", d.width);
    d.corrupt_fraction = j.value("corrupt_fraction", d.corrupt_fraction);
    d.color_jitter = j.value("color_jitter", d.color_jitter);
    d.illumination_shift = j.value("illumination_shift", d.illumination_shift);
    d.occluder_density = j.value("occluder_density", d.occluder_density);
    d.noise_sigma = j.value("noise_sigma", d.noise_sigma);
    d.geometric_jitter_px = j.value("geometric_jitter_px", d.geometric_jitter_px);
    d.train_fraction = j.value("train_fraction", d.train_fraction);
    d.val_fraction = j.value("val_fraction", d.val_fraction);
    d.place_spacing_m = j.value("place_spacing_m", d.place_spacing_m);
    d.seed = j.value("seed", d.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synth config: ") + e.what());
  }
  d.validate();
  return d;
}

namespace {

using Color = std::array<double, 3>;

struct Shape {
  int cls;
  bool ellipse;
  double x0, y0, x1, y1;  // normalized bounding box
  Color color;
};

struct Layout {
  double horizon;
  Color sky, ground;
  std::vector<Shape> shapes;  // drawn in order, later shapes on top
};

const std::array<Color, kNumStructureClasses> kBaseColors = {{
    {60, 140, 50},    // vegetation
    {200, 40, 40},    // dynamic
    {130, 180, 235},  // sky
    {110, 105, 100},  // ground
    {170, 150, 120},  // building
    {230, 200, 40},   // other
}};

Color tinted(int cls, std::mt19937_64& rng, double spread) {
  std::uniform_real_distribution<double> u(-spread, spread);
  Color c = kBaseColors[static_cast<std::size_t>(cls)];
  for (double& v : c) v = std::clamp(v + u(rng), 0.0, 255.0);
  return c;
}

Layout make_layout(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto range = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  auto count = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  Layout l;
  l.horizon = range(0.35, 0.6);
  l.sky = tinted(kSky, rng, 40);
  l.ground = tinted(kGround, rng, 40);
  for (int i = count(1, 3); i > 0; --i) {
    const double x0 = range(-0.1, 0.8);
    const double top = range(0.05, l.horizon - 0.08);
    l.shapes.push_back({kBuilding, false, x0, top, x0 + range(0.15, 0.45), l.horizon + range(0.0, 0.1),
                        tinted(kBuilding, rng, 60)});
  }
  for (int i = count(0, 2); i > 0; --i) {
    const double cx = range(0.0, 1.0), cy = range(l.horizon - 0.2, l.horizon);
    const double rx = range(0.06, 0.15), ry = range(0.08, 0.2);
    l.shapes.push_back({kVegetation, true, cx - rx, cy - ry, cx + rx, cy + ry, tinted(kVegetation, rng, 50)});
  }
  for (int i = count(0, 2); i > 0; --i) {
    const double x0 = range(0.0, 0.95);
    l.shapes.push_back({kOther, false, x0, range(0.1, l.horizon), x0 + range(0.03, 0.07), l.horizon + 0.1,
                        tinted(kOther, rng, 40)});
  }
  for (int i = count(0, 2); i > 0; --i) {
    const double x0 = range(-0.05, 0.85);
    const double y0 = range(l.horizon + 0.05, 0.8);
    l.shapes.push_back({kDynamic, false, x0, y0, x0 + range(0.15, 0.25), y0 + range(0.1, 0.15),
                        tinted(kDynamic, rng, 60)});
  }
  return l;
}

// Class texture as a brightness multiplier at layout pixel (x, y). Being
// multiplicative, it survives palette, gain and offset changes.
double texture(int cls, int x, int y) {
  auto mod = [](int v, int m) { return ((v % m) + m) % m; };
  switch (cls) {
    case kBuilding: return mod(x, 4) < 2 && mod(y, 4) < 2 ? 0.6 : 1.0;
    case kVegetation: return mod(x + y, 2) == 0 ? 0.7 : 1.0;
    case kGround: return mod(y, 3) == 0 ? 0.75 : 1.0;
    case kDynamic: return mod(x, 2) == 0 ? 0.7 : 1.0;
    case kOther: return mod(y, 2) == 0 ? 0.7 : 1.0;
    default: return 1.0;
  }
}

bool covers(const Shape& s, double x, double y) {
  if (!s.ellipse) return x >= s.x0 && x < s.x1 && y >= s.y0 && y < s.y1;
  const double cx = 0.5 * (s.x0 + s.x1), cy = 0.5 * (s.y0 + s.y1);
  const double rx = 0.5 * (s.x1 - s.x0), ry = 0.5 * (s.y1 - s.y0);
  const double dx = (x - cx) / rx, dy = (y - cy) / ry;
  return dx * dx + dy * dy <= 1.0;
}

// Rasterizes the layout shifted by (dx, dy) pixels. `palette` overrides the
// per-region colors (index 0 sky, 1 ground, 2.. shapes) when non-empty.
void rasterize(const Layout& l, int h, int w, int dx, int dy, const std::vector<Color>& palette, LabelMap& labels,
               std::vector<Color>& colors) {
  labels = LabelMap(h, w);
  colors.assign(static_cast<std::size_t>(h) * w, Color{});
  for (int y = 0; y < h; ++y) {
    const double ny = (y + 0.5 - dy) / h;
    for (int x = 0; x < w; ++x) {
      const double nx = (x + 0.5 - dx) / w;
      int cls = ny < l.horizon ? kSky : kGround;
      Color c = palette.empty() ? (cls == kSky ? l.sky : l.ground) : palette[cls == kSky ? 0 : 1];
      for (std::size_t s = 0; s < l.shapes.size(); ++s) {
        if (covers(l.shapes[s], nx, ny)) {
          cls = l.shapes[s].cls;
          c = palette.empty() ? l.shapes[s].color : palette[2 + s];
        }
      }
      const double t = texture(cls, x - dx, y - dy);
      for (double& v : c) v *= t;
      labels.at(y, x) = cls;
      colors[static_cast<std::size_t>(y) * w + x] = c;
    }
  }
}

struct ViewStyle {
  double gain[3];
  double offset;
  double noise;
  int occluders;
};

RgbImage shade(const std::vector<Color>& colors, int h, int w, const ViewStyle& style, std::mt19937_64& rng) {
  RgbImage img(h, w);
  std::normal_distribution<double> noise(0.0, style.noise > 0 ? style.noise : 1.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Color& c = colors[static_cast<std::size_t>(y) * w + x];
      for (int k = 0; k < 3; ++k) {
        double v = c[k] * style.gain[k] + style.offset;
        if (style.noise > 0) v += noise(rng);
        img.px(y, x)[k] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  std::uniform_int_distribution<int> py(0, h - 1), px(0, w - 1), size(2, std::max(2, std::min(h, w) / 6));
  std::uniform_int_distribution<int> gray(40, 200);
  for (int o = 0; o < style.occluders; ++o) {
    const int y0 = py(rng), x0 = px(rng), sh = size(rng), sw = size(rng);
    const auto g = static_cast<std::uint8_t>(gray(rng));
    for (int y = y0; y < std::min(h, y0 + sh); ++y) {
      for (int x = x0; x < std::min(w, x0 + sw); ++x) {
        for (int k = 0; k < 3; ++k) img.px(y, x)[k] = g;
      }
    }
  }
  return img;
}

std::string place_id(int place, int view) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "p%04d_v%d", place, view);
  return buf;
}

constexpr const char* kMetaName = "synth_meta.json";

}  // namespace

SynthOutput synth_generate(const SynthConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  SynthOutput out;
  out.root = fs::absolute(out_dir).lexically_normal();
  std::vector<fs::path> written;
  std::vector<fs::path> created_dirs;
  try {
    for (const fs::path& d : {out.root, out.root / "rgb", out.root / "seg"}) {
      if (!fs::exists(d)) {
        fs::create_directories(d);
        created_dirs.push_back(d);
      }
    }
    const std::uint64_t base = derive_seed(cfg.seed, kStreamSynth);
    std::mt19937_64 global(base);

    // Place -> split assignment.
    std::vector<int> order(static_cast<std::size_t>(cfg.n_places));
    for (int i = 0; i < cfg.n_places; ++i) order[static_cast<std::size_t>(i)] = i;
    std::shuffle(order.begin(), order.end(), global);
    const int n_train = std::max(1, static_cast<int>(std::lround(cfg.train_fraction * cfg.n_places)));
    const int n_val = static_cast<int>(std::lround(cfg.val_fraction * cfg.n_places));
    std::vector<int> split_of(static_cast<std::size_t>(cfg.n_places));
    for (int i = 0; i < cfg.n_places; ++i) {
      split_of[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = i < n_train ? 0 : (i < n_train + n_val ? 1 : 2);
    }

    // Exactly round(fraction * queries) corrupted queries.
    std::vector<std::string> queries;
    for (int p = 0; p < cfg.n_places; ++p) {
      for (int v = 1; v < cfg.views_per_place; ++v) queries.push_back(place_id(p, v));
    }
    std::shuffle(queries.begin(), queries.end(), global);
    const auto n_corrupt = static_cast<std::size_t>(std::lround(cfg.corrupt_fraction * queries.size()));
    out.corrupted.insert(queries.begin(), queries.begin() + static_cast<std::ptrdiff_t>(n_corrupt));

    const int columns = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(cfg.n_places))));
    for (int p = 0; p < cfg.n_places; ++p) {
      std::mt19937_64 rng(derive_seed(base, static_cast<std::uint64_t>(p) + 1));
      const Layout layout = make_layout(rng);
      std::uniform_real_distribution<double> u(0.0, 1.0);
      const double east = (p % columns) * cfg.place_spacing_m;
      const double north = (p / columns) * cfg.place_spacing_m;
      const double heading = 360.0 * u(rng);
      std::uniform_int_distribution<int> jitter(-cfg.geometric_jitter_px, cfg.geometric_jitter_px);

      for (int v = 0; v < cfg.views_per_place; ++v) {
        const std::string id = place_id(p, v);
        const bool corrupt = out.corrupted.count(id) > 0;
        const int dx = jitter(rng), dy = jitter(rng);
        std::vector<Color> palette;
        ViewStyle style{};
        if (corrupt) {
          palette.push_back(tinted(kSky, rng, 40));
          palette.push_back(tinted(kGround, rng, 40));
          for (const Shape& s : layout.shapes) palette.push_back(tinted(s.cls, rng, 60));
          const double dark = 0.4 + 0.3 * u(rng);
          for (double& g : style.gain) g = dark * (1.0 + 0.3 * (2 * u(rng) - 1));
          style.offset = 255.0 * 0.1 * (2 * u(rng) - 1);
          style.noise = 3.0 * cfg.noise_sigma;
        } else {
          for (double& g : style.gain) g = 1.0 + cfg.color_jitter * (2 * u(rng) - 1);
          style.offset = 255.0 * cfg.illumination_shift * (2 * u(rng) - 1);
          style.noise = cfg.noise_sigma;
        }
        style.occluders = std::poisson_distribution<int>(std::max(cfg.occluder_density, 1e-9))(rng);

        LabelMap labels;
        std::vector<Color> colors;
        rasterize(layout, cfg.height, cfg.width, dx, dy, palette, labels, colors);
        const RgbImage rgb = shade(colors, cfg.height, cfg.width, style, rng);

        PlaceRecord r;
        r.id = id;
        r.rgb_path = out.root / "rgb" / (id + ".ppm");
        r.seg_path = out.root / "seg" / (id + ".pgm");
        write_rgb(r.rgb_path, rgb);
        written.push_back(r.rgb_path);
        write_label_map(r.seg_path, labels);
        written.push_back(r.seg_path);
        r.pose = Pose::make(east + 3.0 * (2 * u(rng) - 1), north + 3.0 * (2 * u(rng) - 1),
                            heading + 10.0 * (2 * u(rng) - 1));
        r.split = v == 0 ? Split::kDatabase : Split::kQuery;
        const int s = split_of[static_cast<std::size_t>(p)];
        (s == 0 ? out.train : s == 1 ? out.val : out.test).push_back(std::move(r));
      }
    }

    out.train_manifest = out.root / "train.csv";
    out.val_manifest = out.root / "val.csv";
    out.test_manifest = out.root / "test.csv";
    out.meta_path = out.root / kMetaName;
    write_manifest(out.train_manifest, out.train);
    written.push_back(out.train_manifest);
    write_manifest(out.val_manifest, out.val);
    written.push_back(out.val_manifest);
    write_manifest(out.test_manifest, out.test);
    written.push_back(out.test_manifest);
    nlohmann::json meta = {{"config", cfg.to_json()},
                           {"corrupted", std::vector<std::string>(out.corrupted.begin(), out.corrupted.end())},
                           {"manifests", {{"train", "train.csv"}, {"val", "val.csv"}, {"test", "test.csv"}}}};
    std::ofstream m(out.meta_path);
    m << meta.dump(2) << '\n';
    if (!m) throw IoError("failed writing " + out.meta_path.string());
    written.push_back(out.meta_path);
  } catch (const std::exception& e) {
    std::error_code ec;
    for (const auto& f : written) fs::remove(f, ec);
    for (auto it = created_dirs.rbegin(); it != created_dirs.rend(); ++it) fs::remove(*it, ec);
    if (dynamic_cast<const ConfigError*>(&e)) throw;
    throw IoError(std::string("synth generation failed, partial output removed: ") + e.what());
  }
  return out;
}

SynthOutput load_synth(const fs::path& out_dir) {
  SynthOutput out;
  out.root = fs::absolute(out_dir).lexically_normal();
  out.meta_path = out.root / kMetaName;
  std::ifstream in(out.meta_path);
  if (!in) throw LoadError("missing " + out.meta_path.string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(in);
    for (const auto& id : meta.at("corrupted")) out.corrupted.insert(id.get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(out.meta_path.string() + ": " + e.what());
  }
  out.train_manifest = out.root / "train.csv";
  out.val_manifest = out.root / "val.csv";
  out.test_manifest = out.root / "test.csv";
  out.train = load_manifest(out.train_manifest);
  out.val = load_manifest(out.val_manifest);
  out.test = load_manifest(out.test_manifest);
  return out;
}

}  // namespace placekd
