#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "mtsu/heads_losses.hpp"

using namespace mtsu;

TEST_CASE("center targets: peak exactly 1, Gaussian fall-off, honest centroid") {
  // One 3x3 square instance (id 7) centered at (3, 4) in an 8x8 grid.
  const int64_t h = 8, w = 8;
  std::vector<int> inst(static_cast<size_t>(h * w), 0);
  for (int64_t r = 2; r <= 4; ++r)
    for (int64_t c = 3; c <= 5; ++c) inst[static_cast<size_t>(r * w + c)] = 7;

  auto tg = encode_center_targets<double>(inst, h, w, 2.0);
  REQUIRE(tg.centroids.size() == 1);
  CHECK(tg.centroids.at(7).first == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(tg.centroids.at(7).second == doctest::Approx(4.0).epsilon(1e-12));

  // Peak is forced to exactly 1 at the rounded centroid cell.
  CHECK(tg.heatmap.data[static_cast<size_t>(3 * w + 4)] == 1.0);
  // Off-center values follow exp(-d^2 / (2 sigma^2)).
  double d2 = 2.0 * 2.0 + 1.0;  // cell (1, 3)
  CHECK(tg.heatmap.data[static_cast<size_t>(1 * w + 3)] ==
        doctest::Approx(std::exp(-d2 / 8.0)).epsilon(1e-12));

  // Offsets at thing pixels point at the centroid; mask marks thing pixels.
  for (int64_t r = 0; r < h; ++r)
    for (int64_t c = 0; c < w; ++c) {
      size_t i = static_cast<size_t>(r * w + c);
      bool thing = inst[i] == 7;
      CHECK(tg.mask.data[i] == (thing ? 1.0 : 0.0));
      if (thing) {
        CHECK(tg.offsets.data[i] == doctest::Approx(3.0 - r).epsilon(1e-12));
        CHECK(tg.offsets.data[static_cast<size_t>(h * w) + i] ==
              doctest::Approx(4.0 - c).epsilon(1e-12));
      } else {
        CHECK(tg.offsets.data[i] == 0.0);
      }
    }

  CHECK_THROWS_AS(encode_center_targets<double>(inst, h, w + 1, 2.0),
                  std::invalid_argument);
}

TEST_CASE("center targets: two instances take the pointwise max heatmap") {
  const int64_t h = 8, w = 16;
  std::vector<int> inst(static_cast<size_t>(h * w), 0);
  inst[static_cast<size_t>(2 * w + 2)] = 1;
  inst[static_cast<size_t>(5 * w + 12)] = 2;
  auto tg = encode_center_targets<double>(inst, h, w, 3.0);
  CHECK(tg.heatmap.data[static_cast<size_t>(2 * w + 2)] == 1.0);
  CHECK(tg.heatmap.data[static_cast<size_t>(5 * w + 12)] == 1.0);
  // Midpoint cell: max of the two bumps, not their sum.
  double b1 = std::exp(-((3.5 - 2) * (3.5 - 2) + (7 - 2) * (7 - 2)) / 18.0);
  double b2 = std::exp(-((3.5 - 5) * (3.5 - 5) + (7 - 12) * (7 - 12)) / 18.0);
  // Grid cell (3, 7) is close to the geometric midpoint (3.5, 7).
  double g1 = std::exp(-((3.0 - 2) * (3.0 - 2) + (7 - 2) * (7 - 2)) / 18.0);
  double g2 = std::exp(-((3.0 - 5) * (3.0 - 5) + (7 - 12) * (7 - 12)) / 18.0);
  (void)b1;
  (void)b2;
  CHECK(tg.heatmap.data[static_cast<size_t>(3 * w + 7)] ==
        doctest::Approx(std::max(g1, g2)).epsilon(1e-12));
}

TEST_CASE("downscale_idmap samples block centers") {
  // 4x4 -> 2x2 with factor 2 picks cells (1,1), (1,3), (3,1), (3,3).
  std::vector<int> m = {0, 1, 2, 3,
                        4, 5, 6, 7,
                        8, 9, 10, 11,
                        12, 13, 14, 15};
  auto d = downscale_idmap(m, 4, 4, 2);
  CHECK(d == std::vector<int>{5, 7, 13, 15});
  CHECK_THROWS_AS(downscale_idmap(m, 4, 4, 8), std::invalid_argument);
}

TEST_CASE("pyramid targets: levels at 1/16, 1/8, 1/4 resolution") {
  const int64_t h = 64, w = 64;
  std::vector<int> inst(static_cast<size_t>(h * w), 0);
  for (int64_t r = 20; r < 40; ++r)
    for (int64_t c = 20; c < 40; ++c) inst[static_cast<size_t>(r * w + c)] = 3;

  auto pyr = pyramid_targets<double>(inst, h, w, 8.0, 3);
  REQUIRE(pyr.size() == 3);
  CHECK(pyr[0].heatmap.shape == std::vector<int64_t>{1, 4, 4});
  CHECK(pyr[1].heatmap.shape == std::vector<int64_t>{1, 8, 8});
  CHECK(pyr[2].heatmap.shape == std::vector<int64_t>{1, 16, 16});
  // Offsets are expressed in level pixels: the same physical displacement
  // shrinks with the level factor, and sigma scales alongside.
  for (const auto& lv : pyr) CHECK(lv.centroids.count(3) == 1);
  // Finest level: factor 4, instance spans rows 5..9, centroid ~7.25.
  auto [r2, c2] = pyr[2].centroids.at(3);
  CHECK(r2 == doctest::Approx(7.0).epsilon(0.1));
  CHECK(c2 == doctest::Approx(7.0).epsilon(0.1));

  // A single-level pyramid sits at full resolution.
  auto one = pyramid_targets<double>(inst, h, w, 8.0, 1);
  CHECK(one[0].heatmap.shape == std::vector<int64_t>{1, 64, 64});
}

TEST_CASE("orientation targets: unit vectors at labeled thing pixels only") {
  const int64_t h = 2, w = 3;
  std::vector<int> inst = {0, 1, 1, 2, 2, 0};
  std::map<int, double> orient = {{1, 30.0}};  // id 2 carries no label
  auto [tg, mask] = encode_orientation_targets<double>(inst, h, w, orient);
  double c30 = std::cos(30.0 * M_PI / 180.0), s30 = std::sin(30.0 * M_PI / 180.0);
  CHECK(mask.data == std::vector<double>{0, 1, 1, 0, 0, 0});
  CHECK(tg.data[1] == doctest::Approx(c30).epsilon(1e-12));
  CHECK(tg.data[static_cast<size_t>(h * w) + 1] ==
        doctest::Approx(s30).epsilon(1e-12));
  CHECK(tg.data[3] == 0.0);  // unlabeled instance stays zero and unmasked
}

TEST_CASE("scene head: linear layer over global average pooling") {
  ParamStore<double> ps;
  std::mt19937_64 rng(2);
  scene_head_init(ps, 3, 4, rng);
  // With identity-like weights the logits equal per-channel spatial means.
  auto& w = ps.at("scene.fc.w");
  std::fill(w.data.begin(), w.data.end(), 0.0);
  for (int i = 0; i < 3; ++i) w.data[static_cast<size_t>(i * 4 + i)] = 1.0;
  ps.at("scene.fc.b").data = {0.5, 0.0, -0.5};

  Tape<double> t;
  Binding<double> b(t, ps, false);
  Tensor<double> x({1, 4, 2, 2});
  for (int i = 0; i < 16; ++i) x.data[static_cast<size_t>(i)] = i;
  int logits = scene_head(b, t.leaf(x));
  CHECK(t.val(logits).shape == std::vector<int64_t>{1, 3});
  CHECK(t.val(logits).data[0] == doctest::Approx(1.5 + 0.5).epsilon(1e-12));
  CHECK(t.val(logits).data[1] == doctest::Approx(5.5).epsilon(1e-12));
  CHECK(t.val(logits).data[2] == doctest::Approx(9.5 - 0.5).epsilon(1e-12));
}

TEST_CASE("losses: perfect predictions reach the analytic minimum") {
  Tape<double> t;
  // Semantic: one-hot-by-a-mile logits give near-zero cross entropy.
  Tensor<double> logits({1, 2, 1, 2}, {50.0, -50.0, -50.0, 50.0});
  int lid = t.leaf(logits);
  CHECK(t.val(semantic_loss(t, lid, {0, 1}, 255)).data[0] ==
        doctest::Approx(0.0).epsilon(1e-9));

  // Center: matching heatmap gives zero MSE.
  Tensor<double> hm({1, 1, 2, 2}, {0.0, 0.5, 1.0, 0.25});
  int hid = t.leaf(hm);
  CHECK(t.val(center_loss(t, hid, hm)).data[0] == 0.0);

  // Offset: matching offsets give zero MAE over the mask.
  Tensor<double> of({1, 2, 1, 2}, {1.0, -2.0, 0.5, 0.0});
  Tensor<double> m({1, 1, 1, 2}, {1.0, 1.0});
  int oid = t.leaf(of);
  CHECK(t.val(offset_loss(t, oid, of, m)).data[0] == 0.0);

  // Orientation: aligned unit vectors give exactly zero.
  Tensor<double> unit({1, 2, 1, 1}, {0.6, 0.8});
  int uid = t.leaf(unit);
  CHECK(t.val(orientation_loss(t, uid, unit, Tensor<double>({1, 1, 1, 1}, {1.0}),
                               5.0))
            .data[0] == doctest::Approx(0.0).epsilon(1e-12));

  // Scene: uniform logits cost log(C).
  Tensor<double> sc({1, 4}, {0.0, 0.0, 0.0, 0.0});
  int sid = t.leaf(sc);
  CHECK(t.val(scene_loss(t, sid, {2})).data[0] ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("task name order is se, ce, of, or, sc") {
  CHECK(std::string(kTaskNames[0]) == "se");
  CHECK(std::string(kTaskNames[1]) == "ce");
  CHECK(std::string(kTaskNames[2]) == "of");
  CHECK(std::string(kTaskNames[3]) == "or");
  CHECK(std::string(kTaskNames[4]) == "sc");
}
