#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "mtsu/instance_decoder.hpp"
#include "mtsu/semantic_decoder.hpp"

using namespace mtsu;

namespace {

Tensor<double> randn(std::vector<int64_t> shape, uint64_t seed) {
  Tensor<double> t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  for (auto& v : t.data) v = d(rng);
  return t;
}

// A small encoder + decoder parameter set shared by several cases.
struct Rig {
  EncoderConfig enc;
  SemanticDecoderConfig sem;
  InstanceDecoderConfig ins;
  ParamStore<double> ps;

  explicit Rig(CfilPosition pos = CfilPosition::kSemantic, uint64_t seed = 42) {
    enc.widths = {8, 8, 16, 16};
    enc.depths = {1, 1, 1, 1};
    sem.embed_dim = 8;
    sem.num_classes = 4;
    sem.cfil_position = pos;
    ins.layer_widths = {16, 8, 8};
    ins.blocks_per_layer = 1;
    ins.cfil_position = pos;
    // Draw the CFIL parameters from an independent stream so every shared
    // parameter name holds identical values across placements.
    std::mt19937_64 rng(seed), cfil_rng(seed + 1000);
    encoder_init(ps, enc, rng);
    SemanticDecoderConfig sem_plain = sem;
    sem_plain.cfil_position = CfilPosition::kNone;
    InstanceDecoderConfig ins_plain = ins;
    ins_plain.cfil_position = CfilPosition::kNone;
    semantic_decoder_init(ps, sem_plain, enc, rng);
    instance_decoder_init(ps, ins_plain, enc, rng);
    if (cfil_at_encoder(pos))
      cfil_init(ps, "enc.cfil", enc.widths[3], sem.cfil_kernel, cfil_rng);
    if (cfil_at_semantic(pos))
      cfil_init(ps, "sem.cfil", sem.embed_dim, sem.cfil_kernel, cfil_rng);
    if (cfil_at_instance(pos))
      cfil_init(ps, "ins.cfil", ins.layer_widths[0], ins.cfil_kernel, cfil_rng);
  }

  // Forward both decoders on a 160x160 input (stage-4 extent 5, the CFIL
  // minimum), recording activations.
  void forward(ActivationTrace& tr, Tape<double>& t, uint64_t in_seed = 7) {
    Binding<double> b(t, ps, false);
    int x = t.leaf(randn({1, 4, 160, 160}, in_seed));
    auto feats = encoder_forward(b, enc, x, false);
    if (cfil_at_encoder(sem.cfil_position))
      feats[3] = cfil(b, "enc.cfil", feats[3], sem.cfil_kernel);
    for (int s = 0; s < 4; ++s)
      trace_put(&tr, "enc.s" + std::to_string(s + 1) + ".out",
                feats[static_cast<size_t>(s)]);
    int logits = semantic_decode(b, sem, feats, 64, 64, false, &tr);
    trace_put(&tr, "sem.logits", logits);
    auto io = instance_decode(b, ins, feats, false, &tr);
    trace_put(&tr, "ins.center2", io.center[2]);
  }
};

}  // namespace

TEST_CASE("nfcl: channel weights are |gamma| normalized to sum 1") {
  ParamStore<double> ps;
  std::mt19937_64 rng(1);
  nfcl_init(ps, "n", 6, rng);
  auto& gamma = ps.at("n.bn.gamma");
  gamma.data = {0.5, -1.5, 2.0, -0.25, 0.5, 0.25};  // sum of |.| = 5

  // Verify through the op graph: abs(gamma) / sum(abs(gamma)).
  Tape<double> t;
  int g = t.leaf(gamma);
  int w = div_by_scalar(t, abs_op(t, g), sum(t, abs_op(t, g)));
  const auto& wv = t.val(w);
  double s = 0;
  for (double v : wv.data) s += v;
  CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(wv.data[2] == doctest::Approx(0.4).epsilon(1e-12));

  // An all-zero gamma leaves the weights undefined and must be rejected.
  std::fill(gamma.data.begin(), gamma.data.end(), 0.0);
  Tape<double> t2;
  Binding<double> b(t2, ps, false);
  int x = t2.leaf(randn({1, 6, 4, 4}, 2));
  CHECK_THROWS_AS(nfcl(b, "n", x, true), std::invalid_argument);
}

TEST_CASE("nfcl: output shape matches input and gate stays in (0,1)") {
  ParamStore<double> ps;
  std::mt19937_64 rng(3);
  nfcl_init(ps, "n", 6, rng);
  Tape<double> t;
  Binding<double> b(t, ps, false);
  Tensor<double> x = randn({2, 6, 5, 5}, 4);
  int xid = t.leaf(x);
  int y = nfcl(b, "n", xid, true);
  REQUIRE(t.val(y).shape == x.shape);
  // Gate in (0,1) implies |y| < |x| elementwise (x != 0 a.s.).
  for (size_t i = 0; i < x.data.size(); ++i)
    CHECK(std::abs(t.val(y).data[i]) < std::abs(x.data[i]) + 1e-15);
}

TEST_CASE("cfil: shape preservation and extent guard") {
  ParamStore<double> ps;
  std::mt19937_64 rng(5);
  cfil_init(ps, "c", 8, 3, rng);
  Tape<double> t;
  Binding<double> b(t, ps, false);
  int x = t.leaf(randn({2, 8, 6, 7}, 6));
  int y = cfil(b, "c", x, 3);
  CHECK(t.val(y).shape == std::vector<int64_t>{2, 8, 6, 7});

  int small = t.leaf(randn({1, 8, 4, 8}, 7));  // 5x5 pooling impossible
  CHECK_THROWS_AS(cfil(b, "c", small, 3), std::invalid_argument);
  CHECK_THROWS_AS(cfil_init(ps, "odd", 7, 3, rng), std::invalid_argument);
}

TEST_CASE("nb1d: factorized parameter count is exactly 2/3 of a 3x3 block") {
  ParamStore<double> ps;
  std::mt19937_64 rng(8);
  const int c = 12;
  non_bottleneck_1d_init(ps, "nb", c, rng);
  int64_t factorized = 0;
  for (const char* n : {"nb.v1.w", "nb.h1.w", "nb.v2.w", "nb.h2.w"})
    factorized += ps.at(n).numel();
  int64_t full = 2 * static_cast<int64_t>(c) * c * 3 * 3;  // two 3x3 convs
  CHECK(factorized * 3 == full * 2);
  CHECK(param_savings(3) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK_THROWS_AS(param_savings(0), std::invalid_argument);
}

TEST_CASE("nb1d: residual identity at zeroed second pair") {
  ParamStore<double> ps;
  std::mt19937_64 rng(9);
  non_bottleneck_1d_init(ps, "nb", 4, rng);
  // Zero h2 weights and bias; bn2 with gamma 1, beta 0 on an all-zero map is
  // zero, so the block reduces to relu(x + 0) = x for positive inputs.
  std::fill(ps.at("nb.h2.w").data.begin(), ps.at("nb.h2.w").data.end(), 0.0);
  std::fill(ps.at("nb.h2.b").data.begin(), ps.at("nb.h2.b").data.end(), 0.0);
  Tape<double> t;
  Binding<double> b(t, ps, false);
  Tensor<double> x({1, 4, 3, 3});
  std::mt19937_64 r2(10);
  std::uniform_real_distribution<double> d(0.1, 1.0);  // strictly positive
  for (auto& v : x.data) v = d(r2);
  int y = non_bottleneck_1d(b, "nb", t.leaf(x), true);
  for (size_t i = 0; i < x.data.size(); ++i)
    CHECK(t.val(y).data[i] == doctest::Approx(x.data[i]).epsilon(1e-9));
}

TEST_CASE("semantic decoder: logits at requested resolution, all finite") {
  Rig rig;
  Tape<double> t;
  Binding<double> b(t, rig.ps, false);
  int x = t.leaf(randn({2, 4, 64, 64}, 11));
  auto feats = encoder_forward(b, rig.enc, x, true);
  int logits = semantic_decode(b, rig.sem, feats, 64, 64, true);
  CHECK(t.val(logits).shape == std::vector<int64_t>{2, 4, 64, 64});
  CHECK(t.val(logits).all_finite());
}

TEST_CASE("instance decoder: pyramid shapes coarse to fine") {
  Rig rig;
  Tape<double> t;
  Binding<double> b(t, rig.ps, false);
  int x = t.leaf(randn({1, 4, 64, 64}, 12));
  auto feats = encoder_forward(b, rig.enc, x, true);
  auto io = instance_decode(b, rig.ins, feats, true);
  // Levels at 1/16, 1/8, 1/4 resolution of a 64x64 input.
  const int64_t ext[3] = {4, 8, 16};
  for (int l = 0; l < 3; ++l) {
    auto sl = static_cast<size_t>(l);
    CHECK(t.val(io.center[sl]).shape == std::vector<int64_t>{1, 1, ext[l], ext[l]});
    CHECK(t.val(io.offset[sl]).shape == std::vector<int64_t>{1, 2, ext[l], ext[l]});
    CHECK(t.val(io.orientation[sl]).shape ==
          std::vector<int64_t>{1, 2, ext[l], ext[l]});
    for (double v : t.val(io.center[sl]).data) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }
}

TEST_CASE("cfil position parsing covers every placement") {
  CHECK(parse_cfil_position("none") == CfilPosition::kNone);
  CHECK(parse_cfil_position("encoder") == CfilPosition::kEncoder);
  CHECK(parse_cfil_position("instance") == CfilPosition::kInstance);
  CHECK(parse_cfil_position("both-decoders") == CfilPosition::kBothDecoders);
  CHECK(parse_cfil_position("encoder+semantic") == CfilPosition::kEncoderSemantic);
  CHECK(parse_cfil_position("semantic") == CfilPosition::kSemantic);
  CHECK_THROWS_AS(parse_cfil_position("elsewhere"), std::invalid_argument);
}

TEST_CASE("ablation: cfil placement changes only the intended activations") {
  // Shared seed: identical parameters for shared names, identical input.
  ActivationTrace tr_sem, tr_none, tr_enc, tr_ins;
  Tape<double> t1, t2, t3, t4;
  Rig(CfilPosition::kSemantic).forward(tr_sem, t1);
  Rig(CfilPosition::kNone).forward(tr_none, t2);
  Rig(CfilPosition::kEncoder).forward(tr_enc, t3);
  Rig(CfilPosition::kInstance).forward(tr_ins, t4);

  auto same = [](Tape<double>& ta, const ActivationTrace& a, Tape<double>& tb,
                 const ActivationTrace& b, const std::string& k) {
    return ta.val(a.at(k)).data == tb.val(b.at(k)).data;
  };

  // Encoder activations never depend on decoder-side CFIL placement.
  for (int s = 1; s <= 4; ++s) {
    std::string k = "enc.s" + std::to_string(s) + ".out";
    CHECK(same(t1, tr_sem, t2, tr_none, k));
    CHECK(same(t1, tr_sem, t4, tr_ins, k));
  }
  // Encoder placement rewrites the stage-4 feature...
  CHECK_FALSE(same(t1, tr_sem, t3, tr_enc, "enc.s4.out"));
  // ...but stages 1-3 stay identical (CFIL sits after the encoder).
  for (int s = 1; s <= 3; ++s)
    CHECK(same(t1, tr_sem, t3, tr_enc, "enc.s" + std::to_string(s) + ".out"));

  // Toggling semantic CFIL changes the post-fusion map and only that side:
  // the pre-fusion map and the instance pyramid are untouched.
  CHECK(same(t1, tr_sem, t2, tr_none, "sem.fused.pre"));
  CHECK_FALSE(same(t1, tr_sem, t2, tr_none, "sem.fused.post"));
  CHECK(same(t1, tr_sem, t2, tr_none, "ins.l0.out"));
  CHECK(same(t1, tr_sem, t2, tr_none, "ins.l2.out"));

  // Instance placement leaves the semantic path identical to "none" and
  // rewrites the instance pyramid from the first layer on.
  CHECK(same(t2, tr_none, t4, tr_ins, "sem.fused.post"));
  CHECK(same(t2, tr_none, t4, tr_ins, "sem.logits"));
  CHECK_FALSE(same(t2, tr_none, t4, tr_ins, "ins.l0.out"));
  CHECK_FALSE(same(t2, tr_none, t4, tr_ins, "ins.l2.out"));
}
