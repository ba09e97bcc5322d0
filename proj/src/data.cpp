#include "mtsu/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

namespace fs = std::filesystem;

namespace mtsu {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Deterministic palette: distinct, mid-range color per (scene, region, chan).
double palette(int scene, int region, int chan) {
  double x = 0.6180339887498949 * (scene * 97 + region * 31 + chan * 11 + 1);
  return 0.12 + 0.76 * (x - std::floor(x));
}

struct Shape {
  double cx, cy;     // centroid, (col, row)
  double a, b;       // half extents along the rotated axes
  double theta_deg;  // orientation in [0, 360)
  bool ellipse;
  int cls;           // semantic class id
};

bool inside(const Shape& s, int64_t row, int64_t col) {
  double t = s.theta_deg * kPi / 180.0;
  double dx = col - s.cx, dy = row - s.cy;
  double u = std::cos(t) * dx + std::sin(t) * dy;
  double v = -std::sin(t) * dx + std::cos(t) * dy;
  if (s.ellipse) return (u * u) / (s.a * s.a) + (v * v) / (s.b * s.b) <= 1.0;
  return std::abs(u) <= s.a && std::abs(v) <= s.b;
}

}  // namespace

SceneSample generate_scene(uint64_t seed, const GenConfig& cfg) {
  if (cfg.h < 16 || cfg.w < 16 || cfg.stuff_classes < 1 ||
      cfg.thing_classes < 1 || cfg.scene_classes < 1 ||
      cfg.min_objects < 1 || cfg.max_objects < cfg.min_objects)
    throw std::invalid_argument("generate_scene: bad config");

  std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL + 1);
  auto unif = [&](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  auto unif_int = [&](int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
  };

  SceneSample s;
  s.h = cfg.h;
  s.w = cfg.w;
  s.rgb = Tensor<float>::zeros({3, cfg.h, cfg.w});
  s.depth = Tensor<float>::zeros({1, cfg.h, cfg.w});
  s.semantic.assign(static_cast<size_t>(cfg.h * cfg.w), 0);
  s.instance.assign(static_cast<size_t>(cfg.h * cfg.w), 0);
  s.scene_class = unif_int(0, cfg.scene_classes - 1);

  // Layered stuff background: horizontal bands with jittered boundaries.
  std::vector<int64_t> band_end(static_cast<size_t>(cfg.stuff_classes), cfg.h);
  for (int i = 0; i + 1 < cfg.stuff_classes; ++i) {
    double frac = (i + 1.0) / cfg.stuff_classes + unif(-0.08, 0.08);
    band_end[static_cast<size_t>(i)] = std::clamp<int64_t>(
        static_cast<int64_t>(frac * cfg.h), 1, cfg.h - 1);
  }
  std::sort(band_end.begin(), band_end.end());

  int n_objects = unif_int(cfg.min_objects, cfg.max_objects);
  double lo_ext = 0.07 * std::min(cfg.h, cfg.w);
  double hi_ext = 0.14 * std::min(cfg.h, cfg.w);
  std::vector<Shape> shapes;
  for (int k = 0; k < n_objects; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < 400 && !placed; ++attempt) {
      Shape sh;
      sh.a = unif(lo_ext, hi_ext);
      sh.b = unif(lo_ext, hi_ext);
      sh.theta_deg = unif(0.0, 360.0);
      sh.ellipse = unif_int(0, 1) == 1;
      sh.cls = cfg.stuff_classes + unif_int(0, cfg.thing_classes - 1);
      double r = std::sqrt(sh.a * sh.a + sh.b * sh.b);
      double margin = r + 1.5;
      if (2 * margin >= cfg.w - 1 || 2 * margin >= cfg.h - 1) continue;
      sh.cx = unif(margin, cfg.w - 1 - margin);
      sh.cy = unif(margin, cfg.h - 1 - margin);
      bool ok = true;
      for (const Shape& o : shapes) {
        double d = std::hypot(sh.cx - o.cx, sh.cy - o.cy);
        double ro = std::sqrt(o.a * o.a + o.b * o.b);
        // Disjoint bounding circles keep occlusion out and centroids honest.
        if (d < r + ro + 2.0 || d < cfg.min_centroid_dist) ok = false;
      }
      if (!ok) continue;
      shapes.push_back(sh);
      placed = true;
    }
    if (!placed)
      throw std::invalid_argument(
          "generate_scene: cannot place " + std::to_string(n_objects) +
          " objects at " + std::to_string(cfg.h) + "x" + std::to_string(cfg.w));
  }

  // Rasterize background, then things (non-overlapping by construction).
  int64_t hw = cfg.h * cfg.w;
  for (int64_t row = 0; row < cfg.h; ++row) {
    int band = 0;
    while (row >= band_end[static_cast<size_t>(band)]) ++band;
    float d = static_cast<float>(0.85 - 0.45 * row / (cfg.h - 1.0));
    for (int64_t col = 0; col < cfg.w; ++col) {
      int64_t i = row * cfg.w + col;
      s.semantic[static_cast<size_t>(i)] = band;
      for (int ch = 0; ch < 3; ++ch)
        s.rgb.data[static_cast<size_t>(ch * hw + i)] =
            static_cast<float>(palette(s.scene_class, band, ch));
      s.depth.data[static_cast<size_t>(i)] = d;
    }
  }
  std::vector<int64_t> area(shapes.size() + 1, 0);
  for (size_t k = 0; k < shapes.size(); ++k) {
    const Shape& sh = shapes[k];
    int id = static_cast<int>(k) + 1;
    double jit = unif(-0.05, 0.05);
    float d = static_cast<float>(
        std::clamp(0.85 - 0.45 * sh.cy / (cfg.h - 1.0) - 0.2, 0.05, 1.0));
    for (int64_t row = 0; row < cfg.h; ++row)
      for (int64_t col = 0; col < cfg.w; ++col) {
        if (!inside(sh, row, col)) continue;
        int64_t i = row * cfg.w + col;
        s.semantic[static_cast<size_t>(i)] = sh.cls;
        s.instance[static_cast<size_t>(i)] = id;
        ++area[static_cast<size_t>(id)];
        for (int ch = 0; ch < 3; ++ch)
          s.rgb.data[static_cast<size_t>(ch * hw + i)] = static_cast<float>(
              std::clamp(palette(100 + sh.cls, 0, ch) + jit, 0.0, 1.0));
        s.depth.data[static_cast<size_t>(i)] = d;
      }
    s.orientations[id] = sh.theta_deg;
  }

  // Area floor: 0.25% of the image; retry with a derived seed on the rare
  // quantization shortfall.
  int64_t min_area = static_cast<int64_t>(std::ceil(0.0025 * hw));
  for (size_t k = 1; k < area.size(); ++k)
    if (area[k] < min_area) return generate_scene(seed * 31 + 7, cfg);

  if (cfg.sensor_noise) {
    std::normal_distribution<double> noise(0.0, 0.01);
    for (float& v : s.rgb.data)
      v = static_cast<float>(std::clamp(v + noise(rng), 0.0, 1.0));
    for (float& v : s.depth.data)
      v = static_cast<float>(std::clamp(v + noise(rng), 0.0, 1.0));
  }
  return s;
}

void validate_sample(const SceneSample& s, int num_semantic_classes,
                     int num_scene_classes, int stuff_classes,
                     const std::string& what) {
  auto fail = [&](const std::string& msg) {
    throw std::invalid_argument(what + ": " + msg);
  };
  int64_t hw = s.h * s.w;
  if (s.h < 1 || s.w < 1) fail("empty extents");
  if (s.rgb.shape != std::vector<int64_t>{3, s.h, s.w}) fail("rgb shape");
  if (s.depth.shape != std::vector<int64_t>{1, s.h, s.w}) fail("depth shape");
  if (static_cast<int64_t>(s.semantic.size()) != hw) fail("semantic size");
  if (static_cast<int64_t>(s.instance.size()) != hw) fail("instance size");
  if (s.scene_class < 0 || s.scene_class >= num_scene_classes)
    fail("scene class out of range");
  if (!s.rgb.all_finite() || !s.depth.all_finite()) fail("non-finite values");
  std::map<int, int64_t> areas;
  for (int64_t i = 0; i < hw; ++i) {
    int c = s.semantic[static_cast<size_t>(i)];
    int id = s.instance[static_cast<size_t>(i)];
    if (c < 0 || c >= num_semantic_classes) fail("semantic id out of range");
    if (id < 0) fail("negative instance id");
    if (id > 0 && c < stuff_classes) fail("thing pixel with stuff class");
    if (id == 0 && c >= stuff_classes) fail("stuff pixel with thing class");
    if (id > 0) ++areas[id];
  }
  int64_t min_area = static_cast<int64_t>(std::ceil(0.0025 * hw));
  for (const auto& [id, a] : areas) {
    if (!s.orientations.count(id))
      fail("instance " + std::to_string(id) + " missing from orientations");
    if (a < min_area)
      fail("instance " + std::to_string(id) + " below area floor");
  }
  for (const auto& [id, deg] : s.orientations)
    if (!areas.count(id))
      fail("orientation for absent instance " + std::to_string(id));
}

// ---------------------------------------------------------------------------
// Tensor files
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'M', 'T', 'A', 'T'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

uint32_t get_u32(std::istream& is, const std::string& ctx) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw io_error("truncated file: " + ctx);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

uint64_t get_u64(std::istream& is, const std::string& ctx) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw io_error("truncated file: " + ctx);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

void write_tensor_stream(std::ostream& os, const Tensor<float>& t) {
  if (t.numel() <= 0) throw io_error("refusing to write empty tensor");
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  put_u32(os, 0);  // dtype: f32
  put_u32(os, static_cast<uint32_t>(t.shape.size()));
  for (int64_t e : t.shape) put_u64(os, static_cast<uint64_t>(e));
  static_assert(sizeof(float) == 4);
  os.write(reinterpret_cast<const char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * 4));
}

Tensor<float> read_tensor_stream(std::istream& is, const std::string& ctx) {
  char magic[4];
  if (!is.read(magic, 4)) throw io_error("truncated file: " + ctx);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw io_error("bad magic in " + ctx);
  uint32_t version = get_u32(is, ctx);
  if (version != kVersion)
    throw io_error("unsupported version " + std::to_string(version) + " in " +
                   ctx);
  uint32_t dtype = get_u32(is, ctx);
  if (dtype != 0)
    throw io_error("unsupported dtype " + std::to_string(dtype) + " in " + ctx);
  uint32_t rank = get_u32(is, ctx);
  if (rank == 0 || rank > 8) throw io_error("bad rank in " + ctx);
  std::vector<int64_t> shape(rank);
  for (uint32_t i = 0; i < rank; ++i) {
    uint64_t e = get_u64(is, ctx);
    if (e == 0 || e > (1ULL << 32)) throw io_error("bad extent in " + ctx);
    shape[i] = static_cast<int64_t>(e);
  }
  Tensor<float> t = Tensor<float>::zeros(shape);  // validates overflow
  if (!is.read(reinterpret_cast<char*>(t.data.data()),
               static_cast<std::streamsize>(t.data.size() * 4)))
    throw io_error("truncated payload in " + ctx);
  return t;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw io_error("cannot open for writing: " + path.string());
  return os;
}

}  // namespace

void write_tensor(const fs::path& path, const Tensor<float>& t) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os = open_out(tmp);
    write_tensor_stream(os, t);
    if (!os) throw io_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

Tensor<float> read_tensor(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open: " + path.string());
  return read_tensor_stream(is, path.string());
}

void atomic_write_text(const fs::path& path, const std::string& text) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::trunc);
    if (!os) throw io_error("cannot open for writing: " + tmp.string());
    os << text;
    if (!os) throw io_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

namespace {

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += v[i];
  }
  return out;
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

Tensor<float> grid_to_tensor(const std::vector<int>& g, int64_t h, int64_t w) {
  Tensor<float> t = Tensor<float>::zeros({1, h, w});
  for (size_t i = 0; i < g.size(); ++i) t.data[i] = static_cast<float>(g[i]);
  return t;
}

std::vector<int> tensor_to_grid(const Tensor<float>& t,
                                const std::string& ctx) {
  std::vector<int> g(t.data.size());
  for (size_t i = 0; i < t.data.size(); ++i) {
    float v = t.data[i];
    if (v != std::floor(v) || v < 0 || v > 1e6f)
      throw io_error("non-integer label grid in " + ctx);
    g[i] = static_cast<int>(v);
  }
  return g;
}

}  // namespace

void write_dataset(const fs::path& dir, const std::vector<SceneSample>& samples,
                   const DatasetManifest& meta) {
  fs::create_directories(dir);
  std::ostringstream man;
  man << "count = " << samples.size() << "\n";
  man << "stuff_classes = " << meta.stuff_classes << "\n";
  man << "semantic_names = " << join(meta.semantic_names) << "\n";
  man << "scene_names = " << join(meta.scene_names) << "\n";
  for (size_t k = 0; k < samples.size(); ++k) {
    const SceneSample& s = samples[k];
    char name[32];
    std::snprintf(name, sizeof(name), "sample%04zu", k);
    fs::path sd = dir / name;
    fs::create_directories(sd);
    write_tensor(sd / "rgb.mt", s.rgb);
    write_tensor(sd / "depth.mt", s.depth);
    write_tensor(sd / "semantic.mt", grid_to_tensor(s.semantic, s.h, s.w));
    write_tensor(sd / "instance.mt", grid_to_tensor(s.instance, s.h, s.w));
    int64_t n = static_cast<int64_t>(s.orientations.size());
    Tensor<float> orient = Tensor<float>::zeros({std::max<int64_t>(n, 1), 2});
    int64_t row = 0;
    for (const auto& [id, deg] : s.orientations) {
      orient.data[static_cast<size_t>(2 * row)] = static_cast<float>(id);
      orient.data[static_cast<size_t>(2 * row + 1)] =
          static_cast<float>(deg);
      ++row;
    }
    if (n == 0) orient.data = {-1.f, 0.f};  // sentinel: no instances
    write_tensor(sd / "orient.mt", orient);
    atomic_write_text(sd / "scene.txt",
                      std::to_string(s.scene_class) + "\n");
    man << name << "\n";
  }
  atomic_write_text(dir / "manifest.txt", man.str());
}

DatasetManifest read_manifest(const fs::path& dir) {
  fs::path mp = dir / "manifest.txt";
  std::ifstream is(mp);
  if (!is) throw io_error("cannot open: " + mp.string());
  DatasetManifest m;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      m.sample_dirs.push_back(line);
      continue;
    }
    auto trim = [](std::string s) {
      size_t a = s.find_first_not_of(" \t");
      size_t b = s.find_last_not_of(" \t");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key == "count")
      m.count = std::stoll(val);
    else if (key == "stuff_classes")
      m.stuff_classes = std::stoi(val);
    else if (key == "semantic_names")
      m.semantic_names = split_csv(val);
    else if (key == "scene_names")
      m.scene_names = split_csv(val);
    else
      throw io_error("unknown manifest key '" + key + "' in " + mp.string());
  }
  if (m.count != static_cast<int64_t>(m.sample_dirs.size()))
    throw io_error("manifest count mismatch in " + mp.string());
  if (m.stuff_classes < 0 ||
      m.stuff_classes > static_cast<int>(m.semantic_names.size()))
    throw io_error("bad stuff partition in " + mp.string());
  return m;
}

std::vector<SceneSample> load_dataset(const fs::path& dir) {
  DatasetManifest m = read_manifest(dir);
  std::vector<SceneSample> out;
  out.reserve(m.sample_dirs.size());
  for (const std::string& rel : m.sample_dirs) {
    fs::path sd = dir / rel;
    for (const char* f :
         {"rgb.mt", "depth.mt", "semantic.mt", "instance.mt", "orient.mt",
          "scene.txt"})
      if (!fs::exists(sd / f))
        throw io_error("missing file: " + (sd / f).string());
    SceneSample s;
    s.rgb = read_tensor(sd / "rgb.mt");
    s.depth = read_tensor(sd / "depth.mt");
    if (s.rgb.shape.size() != 3 || s.rgb.shape[0] != 3)
      throw io_error("bad rgb shape in " + sd.string());
    s.h = s.rgb.shape[1];
    s.w = s.rgb.shape[2];
    s.semantic = tensor_to_grid(read_tensor(sd / "semantic.mt"), sd.string());
    s.instance = tensor_to_grid(read_tensor(sd / "instance.mt"), sd.string());
    Tensor<float> orient = read_tensor(sd / "orient.mt");
    if (orient.shape.size() != 2 || orient.shape[1] != 2)
      throw io_error("bad orientation table in " + sd.string());
    for (int64_t r = 0; r < orient.shape[0]; ++r) {
      int id = static_cast<int>(orient.data[static_cast<size_t>(2 * r)]);
      if (id < 0) continue;  // sentinel row for empty scenes
      s.orientations[id] =
          static_cast<double>(orient.data[static_cast<size_t>(2 * r + 1)]);
    }
    std::ifstream sc(sd / "scene.txt");
    if (!(sc >> s.scene_class))
      throw io_error("bad scene.txt in " + sd.string());
    validate_sample(s, static_cast<int>(m.semantic_names.size()),
                    static_cast<int>(m.scene_names.size()), m.stuff_classes,
                    sd.string());
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

void save_checkpoint(const fs::path& path, const ParamStore<float>& store) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os = open_out(tmp);
    for (const std::string& name : store.order) {
      put_u32(os, static_cast<uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_tensor_stream(os, store.at(name));
    }
    if (!os) throw io_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

void load_checkpoint(const fs::path& path, ParamStore<float>& store) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open: " + path.string());
  size_t loaded = 0;
  while (is.peek() != std::char_traits<char>::eof()) {
    uint32_t len = get_u32(is, path.string());
    if (len == 0 || len > 4096)
      throw io_error("bad name length in " + path.string());
    std::string name(len, '\0');
    if (!is.read(name.data(), len))
      throw io_error("truncated file: " + path.string());
    Tensor<float> t = read_tensor_stream(is, path.string() + ":" + name);
    if (!store.has(name))
      throw io_error("checkpoint has unknown entry '" + name + "'");
    Tensor<float>& dst = store.at(name);
    if (dst.shape != t.shape)
      throw io_error("shape mismatch for '" + name + "': file " +
                     shape_str(t.shape) + " vs model " + shape_str(dst.shape));
    dst = std::move(t);
    ++loaded;
  }
  if (loaded != store.order.size())
    throw io_error("checkpoint holds " + std::to_string(loaded) +
                   " entries, model expects " +
                   std::to_string(store.order.size()));
}

}  // namespace mtsu
