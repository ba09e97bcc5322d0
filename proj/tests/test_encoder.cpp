#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <numeric>
#include <random>

#include "mtsu/encoder.hpp"

using namespace mtsu;

namespace {

Tensor<double> randn(std::vector<int64_t> shape, uint64_t seed) {
  Tensor<double> t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  for (auto& v : t.data) v = d(rng);
  return t;
}

}  // namespace

TEST_CASE("encoder: config validation") {
  EncoderConfig cfg;
  CHECK(cfg.split_channels(16) == 4);
  CHECK_NOTHROW(cfg.validate());
  cfg.split_ratio = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.split_ratio = 0.25;
  cfg.widths[0] = 1;  // split of 1 channel at ratio 1/4 rounds to zero
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("encoder: partial conv passes trailing channels through bit-exactly") {
  ParamStore<double> ps;
  std::mt19937_64 rng(3);
  add_conv(ps, "pc", 2, 2, 3, 3, rng);  // convolve the leading 2 of 8 channels

  Tape<double> t;
  Binding<double> b(t, ps, false);
  Tensor<double> x = randn({1, 8, 6, 6}, 4);
  int xid = t.leaf(x);
  int y = partial_conv(b, "pc.w", xid, 2);
  const auto& yv = t.val(y);
  REQUIRE(yv.shape == std::vector<int64_t>{1, 8, 6, 6});
  // Channels 2..7 are untouched: identical bit patterns, not just close.
  for (int64_t c = 2; c < 8; ++c)
    for (int64_t i = 0; i < 36; ++i)
      CHECK(yv.data[static_cast<size_t>(c * 36 + i)] ==
            x.data[static_cast<size_t>(c * 36 + i)]);
  // The leading channels are convolved, so at least one differs.
  bool changed = false;
  for (int64_t i = 0; i < 2 * 36; ++i)
    changed = changed || yv.data[static_cast<size_t>(i)] != x.data[static_cast<size_t>(i)];
  CHECK(changed);
}

TEST_CASE("encoder: partial-conv MAC cost is exactly 1/16 of full at 1/4 split") {
  // Per 3x3 layer at any spatial extent: (C/4)^2 over C^2 = 1/16.
  for (int64_t c : {16, 32, 64, 128}) {
    int64_t partial = partial_conv_macs(10, 10, 3, c / 4);
    int64_t full = conv_macs(10, 10, 3, c, c);
    CHECK(partial * 16 == full);
  }
  // And aggregated over every fusion block of the default encoder.
  EncoderConfig cfg;
  int64_t partial_total = 0, full_total = 0;
  int64_t h = 64, w = 64;
  for (int s = 0; s < 4; ++s) {
    int64_t k = s == 0 ? 4 : 2;
    h /= k;
    w /= k;
    int64_t c = cfg.widths[static_cast<size_t>(s)];
    for (int bi = 0; bi < cfg.depths[static_cast<size_t>(s)]; ++bi) {
      partial_total += partial_conv_macs(h, w, 3, cfg.split_channels(static_cast<int>(c)));
      full_total += conv_macs(h, w, 3, c, c);
    }
  }
  CHECK(partial_total * 16 == full_total);
}

TEST_CASE("encoder: forward shapes at 1/4, 1/8, 1/16, 1/32 resolution") {
  EncoderConfig cfg;
  cfg.widths = {8, 8, 16, 16};
  cfg.depths = {1, 1, 1, 1};
  ParamStore<double> ps;
  std::mt19937_64 rng(9);
  encoder_init(ps, cfg, rng);

  Tape<double> t;
  Binding<double> b(t, ps, false);
  int x = t.leaf(randn({2, 4, 64, 96}, 1));
  auto feats = encoder_forward(b, cfg, x, true);
  CHECK(t.val(feats[0]).shape == std::vector<int64_t>{2, 8, 16, 24});
  CHECK(t.val(feats[1]).shape == std::vector<int64_t>{2, 8, 8, 12});
  CHECK(t.val(feats[2]).shape == std::vector<int64_t>{2, 16, 4, 6});
  CHECK(t.val(feats[3]).shape == std::vector<int64_t>{2, 16, 2, 3});
  for (int i = 0; i < 4; ++i) CHECK(t.val(feats[static_cast<size_t>(i)]).all_finite());

  Tape<double> t2;
  Binding<double> b2(t2, ps, false);
  int bad = t2.leaf(randn({1, 4, 60, 64}, 2));  // 60 not divisible by 32
  CHECK_THROWS_AS(encoder_forward(b2, cfg, bad, true), std::invalid_argument);
  int bad_c = t2.leaf(randn({1, 3, 64, 64}, 3));
  CHECK_THROWS_AS(encoder_forward(b2, cfg, bad_c, true), std::invalid_argument);
}

TEST_CASE("encoder: seed_depth_weights sets D = (R+G+B)/2") {
  Tensor<double> rgb = randn({5, 3, 3, 3}, 12);
  auto rgbd = seed_depth_weights(rgb);
  REQUIRE(rgbd.shape == std::vector<int64_t>{5, 4, 3, 3});
  for (int64_t f = 0; f < 5; ++f)
    for (int64_t i = 0; i < 9; ++i) {
      double r = rgb.data[static_cast<size_t>((f * 3 + 0) * 9 + i)];
      double g = rgb.data[static_cast<size_t>((f * 3 + 1) * 9 + i)];
      double bl = rgb.data[static_cast<size_t>((f * 3 + 2) * 9 + i)];
      CHECK(rgbd.data[static_cast<size_t>((f * 4 + 0) * 9 + i)] == r);
      CHECK(rgbd.data[static_cast<size_t>((f * 4 + 1) * 9 + i)] == g);
      CHECK(rgbd.data[static_cast<size_t>((f * 4 + 2) * 9 + i)] == bl);
      CHECK(rgbd.data[static_cast<size_t>((f * 4 + 3) * 9 + i)] ==
            doctest::Approx((r + g + bl) / 2.0).epsilon(1e-15));
    }
  CHECK_THROWS_AS(seed_depth_weights(randn({5, 4, 3, 3}, 1)),
                  std::invalid_argument);
}

TEST_CASE("encoder: flops_report matches hand-computed stage-1 MACs") {
  EncoderConfig cfg;  // widths 16/32/64/128, depths 1/1/2/1
  auto rows = flops_report(cfg, 64, 64);
  // stage1.merge: 16x16 output, 4x4 kernel, 4 -> 16 channels.
  REQUIRE(rows[0].layer == "stage1.merge");
  CHECK(rows[0].macs == 16 * 16 * 4 * 4 * 4 * 16);
  REQUIRE(rows[1].layer == "stage1.block0.pconv");
  CHECK(rows[1].macs == 16 * 16 * 9 * 4 * 4);
  REQUIRE(rows[2].layer == "stage1.block0.pw1");
  CHECK(rows[2].macs == 16 * 16 * 1 * 16 * 32);
  // Stage 3 has depth 2: a pconv row appears twice at 4x4 extent.
  int stage3_pconvs = 0;
  for (const auto& r : rows)
    if (r.layer == "stage3.block0.pconv" || r.layer == "stage3.block1.pconv") {
      CHECK(r.macs == 4 * 4 * 9 * 16 * 16);
      ++stage3_pconvs;
    }
  CHECK(stage3_pconvs == 2);
}

TEST_CASE("encoder: fusion block is identity-plus-residual at zero weights") {
  // With pw2 weights zeroed the block must return its input exactly.
  EncoderConfig cfg;
  cfg.widths = {8, 8, 8, 8};
  cfg.depths = {1, 0, 0, 0};
  ParamStore<double> ps;
  std::mt19937_64 rng(5);
  encoder_init(ps, cfg, rng);
  auto& pw2 = ps.at("enc.s1.b0.pw2.w");
  std::fill(pw2.data.begin(), pw2.data.end(), 0.0);

  Tape<double> t;
  Binding<double> b(t, ps, false);
  int x = t.leaf(randn({1, 8, 6, 6}, 6));
  int y = fusion_block(b, "enc.s1.b0", x, cfg.split_channels(8), true);
  CHECK(t.val(y).data == t.val(x).data);
}
