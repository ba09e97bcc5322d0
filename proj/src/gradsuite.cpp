#include "mtsu/gradsuite.hpp"

#include <iomanip>
#include <random>
#include <sstream>

#include "mtsu/model.hpp"
#include "mtsu/ops.hpp"

namespace mtsu {

namespace {

using D = double;
using Build = std::function<int(Tape<D>&, const std::vector<int>&)>;

Tensor<D> rand_tensor(std::vector<int64_t> shape, std::mt19937_64& rng,
                      double lo = -1.0, double hi = 1.0) {
  Tensor<D> t = Tensor<D>::zeros(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (D& v : t.data) v = dist(rng);
  return t;
}

void merge(GradCheckReport& into, const GradCheckReport& r) {
  into.max_rel_err = std::max(into.max_rel_err, r.max_rel_err);
  into.checked += r.checked;
  into.below_floor += r.below_floor;
  into.nondiff += r.nondiff;
}

// ---------------------------------------------------------------------------
// Per-op checks. Outputs are scalarized as sum(op(x) * probe) so every
// coordinate sees a nontrivial upstream gradient.
// ---------------------------------------------------------------------------

GradCheckReport check_op(const std::string& name, uint64_t seed) {
  std::mt19937_64 rng(seed * 1315423911ULL + 17);
  auto probe_sum = [](Tape<D>& t, int y, int probe) {
    return sum(t, mul(t, y, probe));
  };

  if (name == "relu" || name == "sigmoid" || name == "exp" || name == "abs") {
    std::vector<Tensor<D>> in{rand_tensor({2, 3, 4, 4}, rng),
                              rand_tensor({2, 3, 4, 4}, rng)};
    Build b = [&, name](Tape<D>& t, const std::vector<int>& id) {
      int y = name == "relu"      ? relu(t, id[0])
              : name == "sigmoid" ? sigmoid(t, id[0])
              : name == "exp"     ? exp_op(t, id[0])
                                  : abs_op(t, id[0]);
      return probe_sum(t, y, id[1]);
    };
    return grad_check<D>(b, in);
  }
  if (name == "add" || name == "mul") {
    std::vector<Tensor<D>> in{rand_tensor({3, 5}, rng),
                              rand_tensor({3, 5}, rng),
                              rand_tensor({3, 5}, rng)};
    Build b = [&, name](Tape<D>& t, const std::vector<int>& id) {
      int y = name == "add" ? add(t, id[0], id[1]) : mul(t, id[0], id[1]);
      return probe_sum(t, y, id[2]);
    };
    return grad_check<D>(b, in);
  }
  if (name == "scale_sum_mean") {
    std::vector<Tensor<D>> in{rand_tensor({4, 6}, rng)};
    Build b = [](Tape<D>& t, const std::vector<int>& id) {
      return add(t, mean(t, scale(t, id[0], 1.7)), sum(t, id[0]));
    };
    return grad_check<D>(b, in);
  }
  if (name == "div_by_scalar") {
    std::vector<Tensor<D>> in{rand_tensor({8}, rng),
                              rand_tensor({3}, rng, 0.5, 1.5)};
    Build b = [](Tape<D>& t, const std::vector<int>& id) {
      int s = sum(t, abs_op(t, id[1]));
      return sum(t, div_by_scalar(t, id[0], s));
    };
    return grad_check<D>(b, in);
  }
  if (name == "weighted_sum_scalars") {
    std::vector<Tensor<D>> in{rand_tensor({5}, rng), rand_tensor({7}, rng)};
    Build b = [](Tape<D>& t, const std::vector<int>& id) {
      return weighted_sum_scalars(t, {sum(t, id[0]), mean(t, id[1])},
                                  {0.3, 1.2});
    };
    return grad_check<D>(b, in);
  }
  if (name == "concat_slice") {
    std::vector<Tensor<D>> in{rand_tensor({2, 2, 3, 3}, rng),
                              rand_tensor({2, 3, 3, 3}, rng),
                              rand_tensor({2, 2, 3, 3}, rng)};
    Build b = [](Tape<D>& t, const std::vector<int>& id) {
      int cat = concat_channels(t, {id[0], id[1]});
      return sum(t, mul(t, slice_channels(t, cat, 1, 3), id[2]));
    };
    return grad_check<D>(b, in);
  }
  if (name == "channel_scale") {
    std::vector<Tensor<D>> in{rand_tensor({2, 3, 4, 4}, rng),
                              rand_tensor({3}, rng),
                              rand_tensor({2, 3, 4, 4}, rng)};
    Build b = [&](Tape<D>& t, const std::vector<int>& id) {
      return probe_sum(t, channel_scale(t, id[0], id[1]), id[2]);
    };
    return grad_check<D>(b, in);
  }
  if (name == "conv2d") {
    std::vector<Tensor<D>> in{rand_tensor({2, 3, 9, 9}, rng),
                              rand_tensor({4, 3, 3, 3}, rng),
                              rand_tensor({4}, rng),
                              rand_tensor({2, 4, 5, 5}, rng)};
    Build b = [&](Tape<D>& t, const std::vector<int>& id) {
      return probe_sum(t, conv2d(t, id[0], id[1], id[2], 2, 2, 1, 1), id[3]);
    };
    return grad_check<D>(b, in);
  }
  if (name == "conv2d_1x1_nobias") {
    std::vector<Tensor<D>> in{rand_tensor({2, 3, 5, 5}, rng),
                              rand_tensor({2, 3, 1, 1}, rng),
                              rand_tensor({2, 2, 5, 5}, rng)};
    Build b = [&](Tape<D>& t, const std::vector<int>& id) {
      return probe_sum(t, conv2d(t, id[0], id[1], -1, 1, 1, 0, 0), id[2]);
    };
    return grad_check<D>(b, in);
  }
  if (name == "batch_norm") {
    std::vector<Tensor<D>> in{rand_tensor({3, 4, 4, 4}, rng),
                              rand_tensor({4}, rng, 0.5, 1.5),
                              rand_tensor({4}, rng),
                              rand_tensor({3, 4, 4, 4}, rng)};
    Build b = [&](Tape<D>& t, const std::vector<int>& id) {
      Tensor<D> rm = Tensor<D>::zeros({4});
      Tensor<D> rv = Tensor<D>::full({4}, 1.0);
      int y = batch_norm(t, id[0], id[1], id[2], &rm, &rv, /*training=*/true,
                         1e-5, 0.1);
      return probe_sum(t, y, id[3]);
    };
    return grad_check<D>(b, in);
  }
  if (name == "adaptive_avg_pool") {
    std::vector<Tensor<D>> in{rand_tensor({1, 2, 7, 7}, rng),
                              rand_tensor({1, 2, 3, 3}, rng)};
    Build b = [&](Tape<D>& t, const std::vector<int>& id) {
      return probe_sum(t, adaptive_avg_pool(t, id[0], 3, 3), id[1]);
    };
    return grad_check<D>(b, in);
  }
  if (name == "bilinear_upsample") {
    std::vector<Tensor<D>> in{rand_tensor({1, 2, 4, 5}, rng),
                              rand_tensor({1, 2, 9, 7}, rng)};
    Build b = [&](Tape<D>& t, const std::vector<int>& id) {
      return probe_sum(t, bilinear_upsample(t, id[0], 9, 7), id[1]);
    };
    return grad_check<D>(b, in);
  }
  if (name == "linear") {
    std::vector<Tensor<D>> in{rand_tensor({3, 4}, rng),
                              rand_tensor({5, 4}, rng), rand_tensor({5}, rng),
                              rand_tensor({3, 5}, rng)};
    Build b = [&](Tape<D>& t, const std::vector<int>& id) {
      return probe_sum(t, linear(t, id[0], id[1], id[2]), id[3]);
    };
    return grad_check<D>(b, in);
  }
  if (name == "global_avg_pool") {
    std::vector<Tensor<D>> in{rand_tensor({2, 3, 4, 5}, rng),
                              rand_tensor({2, 3}, rng)};
    Build b = [&](Tape<D>& t, const std::vector<int>& id) {
      return probe_sum(t, global_avg_pool(t, id[0]), id[1]);
    };
    return grad_check<D>(b, in);
  }
  if (name == "log_softmax" || name == "softmax") {
    std::vector<Tensor<D>> in{rand_tensor({2, 5, 3}, rng),
                              rand_tensor({2, 5, 3}, rng)};
    Build b = [&, name](Tape<D>& t, const std::vector<int>& id) {
      int y = name == "softmax" ? softmax(t, id[0]) : log_softmax(t, id[0]);
      return probe_sum(t, y, id[1]);
    };
    return grad_check<D>(b, in);
  }
  if (name == "nll_mean") {
    std::vector<Tensor<D>> in{rand_tensor({2, 4, 6}, rng)};
    std::vector<int> labels(12);
    for (size_t i = 0; i < labels.size(); ++i)
      labels[i] = i % 5 == 0 ? 255 : static_cast<int>(rng() % 4);
    Build b = [labels](Tape<D>& t, const std::vector<int>& id) {
      return nll_mean(t, log_softmax(t, id[0]), labels, 255);
    };
    return grad_check<D>(b, in);
  }
  if (name == "mse_to_const") {
    std::mt19937_64 r2(seed + 99);
    Tensor<D> target = rand_tensor({2, 1, 4, 4}, r2);
    std::vector<Tensor<D>> in{rand_tensor({2, 1, 4, 4}, rng)};
    Build b = [target](Tape<D>& t, const std::vector<int>& id) {
      return mse_to_const(t, id[0], target);
    };
    return grad_check<D>(b, in);
  }
  if (name == "masked_mae_to_const") {
    std::mt19937_64 r2(seed + 7);
    Tensor<D> target = rand_tensor({1, 2, 4, 4}, r2);
    Tensor<D> mask = Tensor<D>::zeros({1, 1, 4, 4});
    for (size_t i = 0; i < mask.data.size(); ++i) mask.data[i] = i % 3 ? 1 : 0;
    std::vector<Tensor<D>> in{rand_tensor({1, 2, 4, 4}, rng)};
    Build b = [target, mask](Tape<D>& t, const std::vector<int>& id) {
      return masked_mae_to_const(t, id[0], target, mask);
    };
    return grad_check<D>(b, in);
  }
  if (name == "orientation_loss") {
    std::mt19937_64 r2(seed + 3);
    Tensor<D> target = Tensor<D>::zeros({1, 2, 3, 3});
    Tensor<D> mask = Tensor<D>::zeros({1, 1, 3, 3});
    std::uniform_real_distribution<double> ang(0.0, 2 * 3.14159265358979);
    for (int64_t i = 0; i < 9; ++i) {
      double a = ang(r2);
      target.data[static_cast<size_t>(i)] = std::cos(a);
      target.data[static_cast<size_t>(9 + i)] = std::sin(a);
      mask.data[static_cast<size_t>(i)] = i % 4 ? 1 : 0;
    }
    std::vector<Tensor<D>> in{rand_tensor({1, 2, 3, 3}, rng, 0.3, 1.0)};
    Build b = [target, mask](Tape<D>& t, const std::vector<int>& id) {
      return orientation_loss_op(t, id[0], target, mask, 1.0);
    };
    return grad_check<D>(b, in);
  }
  throw std::invalid_argument("unknown grad check: " + name);
}

// ---------------------------------------------------------------------------
// Sub-network checks: finite differences over every trainable parameter plus
// the input, probing a seeded coordinate subset. BN running buffers mutate
// during training-mode forwards, so each evaluation works on a store copy.
// ---------------------------------------------------------------------------

ModelConfig tiny_model() {
  ModelConfig mc;
  mc.encoder.widths = {4, 4, 8, 8};
  mc.encoder.depths = {1, 1, 1, 1};
  mc.semantic.embed_dim = 8;
  mc.semantic.num_classes = 3;
  mc.semantic.cfil_position = CfilPosition::kSemantic;
  mc.instance.layer_widths = {8, 4, 4};
  mc.instance.blocks_per_layer = 1;
  mc.instance.cfil_position = CfilPosition::kSemantic;
  mc.scene_classes = 3;
  return mc;
}

GradCheckReport check_subnet(
    uint64_t seed, int64_t max_coords,
    const std::function<int(Tape<D>&, Binding<D>&, int)>& build_loss) {
  ModelConfig mc = tiny_model();
  ParamStore<D> store = build_model_params<D>(mc, seed);
  std::mt19937_64 rng(seed ^ 0xabcdef12345ULL);
  Tensor<D> input = rand_tensor({2, 4, 32, 32}, rng, 0.0, 1.0);

  auto eval = [&](const ParamStore<D>& s, const Tensor<D>& x) -> double {
    ParamStore<D> copy = s;  // keep BN buffers of the original pristine
    Tape<D> tape;
    Binding<D> bind(tape, copy, /*grads=*/false);
    int xid = tape.leaf(x, false);
    int out = build_loss(tape, bind, xid);
    return tape.val(out).data[0];
  };

  // Analytic pass.
  std::unordered_map<std::string, Tensor<D>> analytic;
  Tensor<D> analytic_x;
  {
    ParamStore<D> copy = store;
    Tape<D> tape;
    Binding<D> bind(tape, copy, /*grads=*/true);
    int xid = tape.leaf(input, true);
    int out = build_loss(tape, bind, xid);
    tape.backward(out);
    for (const auto& [name, id] : bind.ids)
      if (copy.trainable(name)) analytic[name] = tape.grad(id);
    analytic_x = tape.grad(xid);
  }

  // Candidate coordinates: (tensor, index) over used trainables + the input.
  std::vector<std::pair<std::string, int64_t>> coords;
  for (const auto& [name, g] : analytic)
    for (int64_t i = 0; i < g.numel(); ++i) coords.push_back({name, i});
  for (int64_t i = 0; i < input.numel(); ++i) coords.push_back({"", i});
  std::shuffle(coords.begin(), coords.end(), rng);
  if (static_cast<int64_t>(coords.size()) > max_coords)
    coords.resize(static_cast<size_t>(max_coords));

  GradCheckReport rep;
  // Central differences on a composite network lose ~|f|*2^-52/h to
  // cancellation, so gradients below the floor carry no usable signal and
  // are counted rather than compared.
  const double eps = 1e-4, floor = 1e-4;
  for (const auto& [name, i] : coords) {
    D* slot = name.empty() ? &input.data[static_cast<size_t>(i)]
                           : &store.at(name).data[static_cast<size_t>(i)];
    double a = name.empty()
                   ? analytic_x.data[static_cast<size_t>(i)]
                   : analytic.at(name).data[static_cast<size_t>(i)];
    D orig = *slot;
    double h = eps * std::max(1.0, std::abs(orig));
    auto fd = [&](double step) {
      *slot = orig + step;
      double fp = eval(store, input);
      *slot = orig - step;
      double fm = eval(store, input);
      *slot = orig;
      return (fp - fm) / (2 * step);
    };
    // Richardson extrapolation cancels the h^2 truncation term, which
    // dominates around batch-norm statistics over tiny reductions. Two
    // extrapolated estimates at different steps converge (to ~h^4) only
    // where f is smooth; disagreement marks a kink (relu/abs crossing
    // inside the probing interval) too small for a slope test to see.
    double d1 = fd(h), d2 = fd(h / 2), d3 = fd(h / 4);
    double r1 = (4 * d2 - d1) / 3, r2 = (4 * d3 - d2) / 3;
    if (std::abs(r1 - r2) > 1e-4 * (std::abs(r1) + std::abs(r2)) + 1e-9) {
      ++rep.nondiff;
      continue;
    }
    double numeric = r2;
    double denom = std::abs(a) + std::abs(numeric);
    ++rep.checked;
    if (denom < floor) {
      ++rep.below_floor;
      continue;
    }
    rep.max_rel_err = std::max(rep.max_rel_err, std::abs(a - numeric) / denom);
  }
  return rep;
}

GradCheckReport check_encoder(uint64_t seed, int64_t max_coords) {
  ModelConfig mc = tiny_model();
  std::mt19937_64 prng(seed + 5);
  Tensor<D> probe = rand_tensor({2, 8, 1, 1}, prng);
  return check_subnet(seed, max_coords,
                      [&](Tape<D>& t, Binding<D>& b, int x) {
                        auto f = encoder_forward(b, mc.encoder, x, true);
                        int p = t.leaf(probe, false);
                        return sum(t, mul(t, f[3], p));
                      });
}

GradCheckReport check_semantic_path(uint64_t seed, int64_t max_coords) {
  ModelConfig mc = tiny_model();
  std::mt19937_64 lrng(seed + 11);
  std::vector<int> labels(2 * 32 * 32);
  for (int& l : labels) l = static_cast<int>(lrng() % 3);
  return check_subnet(seed, max_coords,
                      [&](Tape<D>& t, Binding<D>& b, int x) {
                        auto f = encoder_forward(b, mc.encoder, x, true);
                        int logits =
                            semantic_decode(b, mc.semantic, f, 32, 32, true);
                        return semantic_loss(t, logits, labels, 255);
                      });
}

GradCheckReport check_instance_path(uint64_t seed, int64_t max_coords) {
  ModelConfig mc = tiny_model();
  std::mt19937_64 trng(seed + 13);
  Tensor<D> heat = rand_tensor({2, 1, 8, 8}, trng, 0.0, 1.0);
  // Offset targets keep a margin from the untrained predictions (|pred| ~ 1)
  // so the absolute-error loss has no kink inside the probing interval.
  Tensor<D> offs = rand_tensor({2, 2, 8, 8}, trng, 2.0, 4.0);
  Tensor<D> mask = Tensor<D>::zeros({2, 1, 8, 8});
  Tensor<D> orient = Tensor<D>::zeros({2, 2, 8, 8});
  for (int64_t i = 0; i < 2 * 8 * 8; ++i) {
    mask.data[static_cast<size_t>(i)] = i % 2;
    double a = (trng() % 360) * 3.14159265358979 / 180.0;
    orient.data[static_cast<size_t>((i / 64) * 128 + i % 64)] = std::cos(a);
    orient.data[static_cast<size_t>((i / 64) * 128 + 64 + i % 64)] =
        std::sin(a);
  }
  return check_subnet(
      seed, max_coords, [&](Tape<D>& t, Binding<D>& b, int x) {
        auto f = encoder_forward(b, mc.encoder, x, true);
        InstanceOutputs out = instance_decode(b, mc.instance, f, true);
        int ce = center_loss(t, out.center[2], heat);
        int of = offset_loss(t, out.offset[2], offs, mask);
        int orl = orientation_loss(t, out.orientation[2], orient, mask, 1.0);
        return weighted_sum_scalars(t, {ce, of, orl}, {1.0, 1.0, 1.0});
      });
}

}  // namespace

std::vector<GradSuiteRow> run_grad_suite(int num_seeds, int64_t subnet_coords,
                                         double tolerance) {
  const char* ops[] = {
      "relu",          "sigmoid",       "exp",
      "abs",           "add",           "mul",
      "scale_sum_mean", "div_by_scalar", "weighted_sum_scalars",
      "concat_slice",  "channel_scale", "conv2d",
      "conv2d_1x1_nobias", "batch_norm", "adaptive_avg_pool",
      "bilinear_upsample", "linear",    "global_avg_pool",
      "log_softmax",   "softmax",       "nll_mean",
      "mse_to_const",  "masked_mae_to_const", "orientation_loss"};
  std::vector<GradSuiteRow> rows;
  for (const char* op : ops) {
    GradSuiteRow row;
    row.name = std::string("op.") + op;
    for (int s = 0; s < num_seeds; ++s)
      merge(row.rep, check_op(op, static_cast<uint64_t>(s) + 1));
    row.pass = row.rep.max_rel_err < tolerance && row.rep.checked > 0;
    rows.push_back(row);
  }
  struct Net {
    const char* name;
    GradCheckReport (*fn)(uint64_t, int64_t);
  } nets[] = {{"net.encoder", check_encoder},
              {"net.semantic", check_semantic_path},
              {"net.instance", check_instance_path}};
  for (const Net& n : nets) {
    GradSuiteRow row;
    row.name = n.name;
    for (int s = 0; s < num_seeds; ++s)
      merge(row.rep, n.fn(static_cast<uint64_t>(s) + 1, subnet_coords));
    row.pass = row.rep.max_rel_err < tolerance && row.rep.checked > 0;
    rows.push_back(row);
  }
  return rows;
}

bool grad_suite_passed(const std::vector<GradSuiteRow>& rows) {
  for (const auto& r : rows)
    if (!r.pass) return false;
  return !rows.empty();
}

std::string format_grad_suite(const std::vector<GradSuiteRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(26) << "check" << std::right << std::setw(13)
     << "max_rel_err" << std::setw(9) << "coords" << std::setw(7) << "kinks"
     << "  status\n";
  for (const auto& r : rows) {
    os << std::left << std::setw(26) << r.name << std::right << std::setw(13)
       << std::scientific << std::setprecision(3) << r.rep.max_rel_err
       << std::setw(9) << r.rep.checked << std::setw(7) << r.rep.nondiff
       << "  " << (r.pass ? "pass" : "FAIL") << "\n";
  }
  return os.str();
}

}  // namespace mtsu
