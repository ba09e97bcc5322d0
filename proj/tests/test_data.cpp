#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <limits>
#include <fstream>
#include <random>
#include <set>

#include "mtsu/data.hpp"

using namespace mtsu;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("mtsu_test_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

DatasetManifest toy_manifest(int64_t count) {
  DatasetManifest m;
  m.count = count;
  m.stuff_classes = 2;
  m.semantic_names = {"stuff0", "stuff1", "thing0", "thing1", "thing2",
                      "thing3"};
  m.scene_names = {"scene0", "scene1", "scene2", "scene3"};
  return m;
}

}  // namespace

TEST_CASE("generator: deterministic and fully validated") {
  GenConfig cfg;
  auto a = generate_scene(42, cfg);
  auto b = generate_scene(42, cfg);
  CHECK(a.rgb.data == b.rgb.data);
  CHECK(a.depth.data == b.depth.data);
  CHECK(a.semantic == b.semantic);
  CHECK(a.instance == b.instance);
  CHECK(a.orientations == b.orientations);
  CHECK(a.scene_class == b.scene_class);

  auto c = generate_scene(43, cfg);
  CHECK(a.instance != c.instance);  // different seeds differ

  for (uint64_t s = 0; s < 30; ++s)
    CHECK_NOTHROW(validate_sample(generate_scene(s, cfg), 6, 4, 2,
                                  "seed " + std::to_string(s)));
}

TEST_CASE("generator: object count, area floor, and centroid spacing") {
  GenConfig cfg;
  const int64_t min_area =
      static_cast<int64_t>(std::ceil(0.0025 * static_cast<double>(cfg.h * cfg.w)));
  for (uint64_t s = 100; s < 160; ++s) {
    auto sample = generate_scene(s, cfg);
    std::map<int, int64_t> areas;
    std::map<int, std::pair<double, double>> centroid;
    std::map<int, double> cnt;
    for (int64_t r = 0; r < cfg.h; ++r)
      for (int64_t c = 0; c < cfg.w; ++c) {
        int id = sample.instance[static_cast<size_t>(r * cfg.w + c)];
        if (id == 0) continue;
        ++areas[id];
        centroid[id].first += static_cast<double>(r);
        centroid[id].second += static_cast<double>(c);
        cnt[id] += 1.0;
      }
    CHECK(areas.size() >= static_cast<size_t>(cfg.min_objects));
    CHECK(areas.size() <= static_cast<size_t>(cfg.max_objects));
    for (const auto& [id, a] : areas) {
      CHECK(a >= min_area);
      CHECK(sample.orientations.count(id) == 1);
    }
    // Pairwise centroid distance respects the configured minimum.
    for (auto i = centroid.begin(); i != centroid.end(); ++i)
      for (auto j = std::next(i); j != centroid.end(); ++j) {
        double ri = i->second.first / cnt[i->first];
        double ci = i->second.second / cnt[i->first];
        double rj = j->second.first / cnt[j->first];
        double cj = j->second.second / cnt[j->first];
        double d = std::hypot(ri - rj, ci - cj);
        CHECK(d >= cfg.min_centroid_dist);
      }
  }
}

TEST_CASE("generator: impossible constraints are rejected") {
  GenConfig cfg;
  cfg.h = 32;
  cfg.w = 32;
  cfg.min_objects = 4;
  cfg.max_objects = 4;
  cfg.min_centroid_dist = 40.0;  // cannot fit 4 centers 40px apart in 32x32
  CHECK_THROWS_AS(generate_scene(1, cfg), std::invalid_argument);
}

TEST_CASE("tensor files: bit-exact round trip") {
  TempDir td;
  Tensor<float> t({2, 3, 4});
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<float> d(-10.f, 10.f);
  for (auto& v : t.data) v = d(rng);
  auto p = td.path / "x.mt";
  write_tensor(p, t);
  auto back = read_tensor(p);
  CHECK(back.shape == t.shape);
  CHECK(back.data == t.data);  // exact bit pattern, not approximate
}

TEST_CASE("tensor files: typed errors on corruption") {
  TempDir td;
  auto p = td.path / "x.mt";
  write_tensor(p, Tensor<float>::full({2, 2}, 1.f));

  // Corrupt the magic.
  {
    std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  CHECK_THROWS_AS(read_tensor(p), io_error);

  // Truncate the payload.
  write_tensor(p, Tensor<float>::full({4, 4}, 2.f));
  fs::resize_file(p, fs::file_size(p) - 5);
  CHECK_THROWS_AS(read_tensor(p), io_error);

  // Missing file.
  CHECK_THROWS_AS(read_tensor(td.path / "absent.mt"), io_error);
}

TEST_CASE("dataset: write, read back, and validate") {
  TempDir td;
  GenConfig cfg;
  std::vector<SceneSample> samples;
  for (uint64_t s = 0; s < 3; ++s) samples.push_back(generate_scene(s, cfg));
  auto meta = toy_manifest(3);
  write_dataset(td.path, samples, meta);

  auto m = read_manifest(td.path);
  CHECK(m.count == 3);
  CHECK(m.stuff_classes == 2);
  CHECK(m.semantic_names == meta.semantic_names);
  CHECK(m.scene_names == meta.scene_names);
  REQUIRE(m.sample_dirs.size() == 3);

  auto back = load_dataset(td.path);
  REQUIRE(back.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(back[i].rgb.data == samples[i].rgb.data);
    CHECK(back[i].depth.data == samples[i].depth.data);
    CHECK(back[i].semantic == samples[i].semantic);
    CHECK(back[i].instance == samples[i].instance);
    CHECK(back[i].scene_class == samples[i].scene_class);
    REQUIRE(back[i].orientations.size() == samples[i].orientations.size());
    for (const auto& [id, deg] : samples[i].orientations)
      // Orientations persist as float32; compare at single precision.
      CHECK(back[i].orientations.at(id) ==
            doctest::Approx(deg).epsilon(1e-5));
  }

  // A missing per-sample file is reported as an io_error naming the file.
  fs::remove(td.path / m.sample_dirs[1] / "depth.mt");
  try {
    load_dataset(td.path);
    FAIL("expected io_error");
  } catch (const io_error& e) {
    CHECK(std::string(e.what()).find("depth.mt") != std::string::npos);
  }
}

TEST_CASE("dataset: missing manifest is a typed error") {
  TempDir td;
  CHECK_THROWS_AS(read_manifest(td.path / "nowhere"), io_error);
}

TEST_CASE("checkpoint: bit-exact round trip in store order") {
  TempDir td;
  ParamStore<float> ps;
  std::mt19937_64 rng(9);
  auto& a = ps.add("alpha.w", {3, 4});
  init_uniform_fanin(a, 4, rng);
  auto& b = ps.add("beta.running_mean", {5}, /*trainable=*/false);
  init_uniform_fanin(b, 5, rng);

  auto p = td.path / "model.ckpt";
  save_checkpoint(p, ps);

  ParamStore<float> loaded;
  loaded.add("alpha.w", {3, 4});
  loaded.add("beta.running_mean", {5}, false);
  load_checkpoint(p, loaded);
  CHECK(loaded.at("alpha.w").data == ps.at("alpha.w").data);
  CHECK(loaded.at("beta.running_mean").data == ps.at("beta.running_mean").data);

  // Shape mismatch and name mismatch are rejected.
  ParamStore<float> wrong_shape;
  wrong_shape.add("alpha.w", {4, 3});
  wrong_shape.add("beta.running_mean", {5}, false);
  CHECK_THROWS_AS(load_checkpoint(p, wrong_shape), io_error);

  ParamStore<float> extra;
  extra.add("alpha.w", {3, 4});
  extra.add("beta.running_mean", {5}, false);
  extra.add("gamma.w", {1});
  CHECK_THROWS_AS(load_checkpoint(p, extra), io_error);
}

TEST_CASE("atomic_write_text leaves no temporary behind") {
  TempDir td;
  auto p = td.path / "note.txt";
  atomic_write_text(p, "hello\n");
  std::ifstream f(p);
  std::string line;
  std::getline(f, line);
  CHECK(line == "hello");
  int entries = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(td.path)) ++entries;
  CHECK(entries == 1);
}

TEST_CASE("validate_sample rejects corrupted fields") {
  GenConfig cfg;
  auto good = generate_scene(5, cfg);
  CHECK_NOTHROW(validate_sample(good, 6, 4, 2, "good"));

  auto bad = good;
  bad.semantic[0] = 99;  // out-of-range class
  CHECK_THROWS_AS(validate_sample(bad, 6, 4, 2, "bad-sem"),
                  std::invalid_argument);

  bad = good;
  bad.rgb.data[0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(validate_sample(bad, 6, 4, 2, "bad-rgb"),
                  std::invalid_argument);

  bad = good;
  REQUIRE(!bad.orientations.empty());
  bad.orientations.erase(bad.orientations.begin());  // instance without angle
  CHECK_THROWS_AS(validate_sample(bad, 6, 4, 2, "bad-orient"),
                  std::invalid_argument);

  bad = good;
  bad.scene_class = 17;
  CHECK_THROWS_AS(validate_sample(bad, 6, 4, 2, "bad-scene"),
                  std::invalid_argument);
}
