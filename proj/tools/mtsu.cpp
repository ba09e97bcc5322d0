#include <CLI11.hpp>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>

#include "mtsu/data.hpp"
#include "mtsu/gradsuite.hpp"
#include "mtsu/scheduler.hpp"
#include "mtsu/trainer.hpp"

namespace {

using namespace mtsu;

Config load_config(const std::string& path) {
  return path.empty() ? Config{} : parse_config_file(path);
}

GenConfig gen_config(const Config& c) {
  GenConfig g;
  g.h = c.gen_height;
  g.w = c.gen_width;
  g.stuff_classes = c.gen_stuff_classes;
  g.thing_classes = c.gen_thing_classes;
  g.scene_classes = c.gen_scene_classes;
  g.min_objects = c.gen_min_objects;
  g.max_objects = c.gen_max_objects;
  g.sensor_noise = c.gen_sensor_noise;
  return g;
}

DatasetManifest make_manifest(const Config& c, int64_t count) {
  DatasetManifest m;
  m.count = count;
  m.stuff_classes = c.gen_stuff_classes;
  for (int i = 0; i < c.gen_stuff_classes; ++i)
    m.semantic_names.push_back("stuff" + std::to_string(i));
  for (int i = 0; i < c.gen_thing_classes; ++i)
    m.semantic_names.push_back("thing" + std::to_string(i));
  for (int i = 0; i < c.gen_scene_classes; ++i)
    m.scene_names.push_back("scene" + std::to_string(i));
  return m;
}

std::set<int> thing_set(const Config& c) {
  std::set<int> things;
  for (int i = c.gen_stuff_classes;
       i < c.gen_stuff_classes + c.gen_thing_classes; ++i)
    things.insert(i);
  return things;
}

int cmd_gen(const std::string& config, const std::string& out, int count,
            uint64_t seed) {
  Config cfg = load_config(config);
  GenConfig gc = gen_config(cfg);
  std::vector<SceneSample> samples;
  for (int i = 0; i < count; ++i)
    samples.push_back(generate_scene(seed + static_cast<uint64_t>(i), gc));
  write_dataset(out, samples, make_manifest(cfg, count));
  std::cout << "wrote " << count << " samples to " << out << "\n";
  return 0;
}

int cmd_train(const std::string& config, const std::string& data,
              const std::string& out, std::string log_path) {
  Config cfg = load_config(config);
  std::vector<SceneSample> samples = load_dataset(data);
  ParamStore<float> params =
      build_model_params<float>(ModelConfig::from(cfg), cfg.train_seed);
  TrainResult res = train(cfg, samples, params);
  save_checkpoint(out, params);
  if (log_path.empty()) log_path = out + ".log";
  atomic_write_text(log_path, format_log(res.log));
  std::cout << "checkpoint: " << out << "\nlog: " << log_path << "\nfinal total "
            << res.log.back().total << "\n";
  return 0;
}

int cmd_eval(const std::string& config, const std::string& checkpoint,
             const std::string& data, const std::string& out) {
  Config cfg = load_config(config);
  std::vector<SceneSample> samples = load_dataset(data);
  DatasetManifest m = read_manifest(data);
  ParamStore<float> params =
      build_model_params<float>(ModelConfig::from(cfg), cfg.train_seed);
  if (static_cast<int>(m.semantic_names.size()) != cfg.semantic_num_classes)
    throw std::invalid_argument(
        "eval: dataset has " + std::to_string(m.semantic_names.size()) +
        " semantic classes, config expects " +
        std::to_string(cfg.semantic_num_classes));
  load_checkpoint(checkpoint, params);
  MetricReport rep = evaluate(cfg, params, samples, m.stuff_classes);
  atomic_write_text(out, rep.to_table());
  atomic_write_text(out + ".kv", rep.to_kv());
  std::cout << rep.to_table();
  return 0;
}

int cmd_infer(const std::string& config, const std::string& checkpoint,
              const std::string& sample_dir, const std::string& out) {
  Config cfg = load_config(config);
  // A single-sample directory is a one-entry dataset rooted at its parent.
  std::filesystem::path sp(sample_dir);
  SceneSample s;
  s.rgb = read_tensor(sp / "rgb.mt");
  s.depth = read_tensor(sp / "depth.mt");
  s.h = s.rgb.shape[1];
  s.w = s.rgb.shape[2];
  s.semantic.assign(static_cast<size_t>(s.h * s.w), 0);
  s.instance.assign(static_cast<size_t>(s.h * s.w), 0);

  ParamStore<float> params =
      build_model_params<float>(ModelConfig::from(cfg), cfg.train_seed);
  load_checkpoint(checkpoint, params);
  InferenceResult res = infer(cfg, params, s, thing_set(cfg));

  std::filesystem::create_directories(out);
  Tensor<float> cat = Tensor<float>::zeros({1, s.h, s.w});
  Tensor<float> inst = Tensor<float>::zeros({1, s.h, s.w});
  for (size_t i = 0; i < res.panoptic.category.size(); ++i) {
    cat.data[i] = static_cast<float>(res.panoptic.category[i]);
    inst.data[i] = static_cast<float>(res.panoptic.instance[i]);
  }
  write_tensor(std::filesystem::path(out) / "category.mt", cat);
  write_tensor(std::filesystem::path(out) / "instance.mt", inst);
  std::ostringstream orient;
  for (const auto& [id, o] : res.panoptic.orientations)
    if (o.defined) orient << id << "\t" << o.degrees << "\n";
  atomic_write_text(std::filesystem::path(out) / "orientations.txt",
                    orient.str());
  atomic_write_text(std::filesystem::path(out) / "scene.txt",
                    std::to_string(res.scene_class) + "\n");
  std::cout << "wrote panoptic outputs to " << out << "\n";
  return 0;
}

int cmd_gradcheck(int seeds, int64_t coords) {
  std::vector<GradSuiteRow> rows = run_grad_suite(seeds, coords);
  std::cout << format_grad_suite(rows);
  return grad_suite_passed(rows) ? 0 : 1;
}

int cmd_report(const std::string& config, int64_t h, int64_t w,
               const std::string& out) {
  Config cfg = load_config(config);
  ModelConfig mc = ModelConfig::from(cfg);
  std::ostringstream os;

  os << "encoder MACs at " << h << "x" << w << "\n";
  os << std::left << std::setw(24) << "layer" << std::right << std::setw(14)
     << "MACs" << "\n";
  int64_t partial_total = 0, full_total = 0;
  for (const FlopRow& r : flops_report(mc.encoder, h, w))
    os << std::left << std::setw(24) << r.layer << std::right << std::setw(14)
       << r.macs << "\n";
  // Partial vs full 3x3 convolution at every stage extent.
  int64_t ch = h, cw = w;
  for (int s = 0; s < 4; ++s) {
    ch /= (s == 0 ? 4 : 2);
    cw /= (s == 0 ? 4 : 2);
    int64_t c = mc.encoder.widths[static_cast<size_t>(s)];
    int64_t cp = mc.encoder.split_channels(static_cast<int>(c));
    partial_total += partial_conv_macs(ch, cw, 3, cp);
    full_total += conv_macs(ch, cw, 3, c, c);
  }
  int64_t g = std::gcd(partial_total, full_total);
  os << "\npartial_conv_macs = " << partial_total << "\n";
  os << "full_conv_macs = " << full_total << "\n";
  os << "partial_over_full = " << partial_total / g << "/" << full_total / g
     << " = " << static_cast<double>(partial_total) / full_total << "\n";

  // Factorized-block parameter accounting, from the actual tensors.
  ParamStore<float> params = build_model_params<float>(mc, cfg.train_seed);
  int64_t nb_weights = 0;
  for (const std::string& name : params.order) {
    if (name.find(".nb") == std::string::npos) continue;
    if (name.ends_with(".v1.w") || name.ends_with(".h1.w") ||
        name.ends_with(".v2.w") || name.ends_with(".h2.w"))
      nb_weights += params.at(name).numel();
  }
  // Each factorized pair replaces one kxk convolution of equal width.
  int64_t full_weights = 0;
  for (const std::string& name : params.order)
    if (name.find(".nb") != std::string::npos && name.ends_with(".v1.w")) {
      int64_t c = params.at(name).shape[0];
      full_weights += 2 * c * c * 9;  // two 3x3 convs per block
    }
  int64_t g2 = std::gcd(nb_weights, full_weights);
  os << "\nfactorized_weights = " << nb_weights << "\n";
  os << "full_3x3_weights = " << full_weights << "\n";
  os << "factorized_over_full = " << nb_weights / g2 << "/"
     << full_weights / g2 << " = "
     << static_cast<double>(nb_weights) / full_weights << "\n";
  os << "total_trainable_params = " << params.trainable_count() << "\n";

  std::cout << os.str();
  if (!out.empty()) atomic_write_text(out, os.str());
  return 0;
}

int cmd_bench_scheduler(const std::string& config, int num_seeds, int epochs,
                        const std::string& out) {
  Config cfg = load_config(config);
  SchedulerState proto;
  proto.base_weights = cfg.scheduler_base_weights;
  proto.alpha = cfg.scheduler_alpha;
  proto.w_min = cfg.scheduler_w_min;
  proto.window = static_cast<size_t>(cfg.scheduler_window);
  proto.reset_weights();
  StreamSpec spec;
  spec.epochs = epochs;
  std::vector<uint64_t> seeds;
  for (int i = 0; i < num_seeds; ++i)
    seeds.push_back(static_cast<uint64_t>(i) + 1);
  SchedulerBenchReport rep = simulate_scheduler(spec, proto, seeds);

  std::ostringstream os;
  os << "epoch\tfixed_mean\tadaptive_mean\tfixed_var\tadaptive_var\n";
  os.precision(10);
  for (int e = 0; e < epochs; ++e)
    os << e << "\t" << rep.fixed_mean[static_cast<size_t>(e)] << "\t"
       << rep.adaptive_mean[static_cast<size_t>(e)] << "\t"
       << rep.fixed_var[static_cast<size_t>(e)] << "\t"
       << rep.adaptive_var[static_cast<size_t>(e)] << "\n";
  if (!out.empty()) atomic_write_text(out, os.str());
  std::cout << "fixed_final_half_var = " << rep.fixed_final_half_var << "\n";
  std::cout << "adaptive_final_half_var = " << rep.adaptive_final_half_var
            << "\n";
  bool stable = rep.adaptive_final_half_var <= rep.fixed_final_half_var;
  std::cout << "adaptive_no_noisier = " << (stable ? "yes" : "no") << "\n";
  return stable ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-task RGB-D scene understanding toolkit"};
  app.require_subcommand(1);
  app.footer("Config keys (key = value, '#' comments):\n" + config_help());

  std::string config, out, data, checkpoint, sample, log_path;
  int count = 8, seeds = 20, epochs = 60;
  int64_t coords = 150, height = 64, width = 64;
  uint64_t seed = 1;

  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset");
  gen->add_option("--config", config, "Config file");
  gen->add_option("--out", out, "Output dataset directory")->required();
  gen->add_option("--count", count, "Number of samples");
  gen->add_option("--seed", seed, "Base seed");

  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--config", config, "Config file");
  train->add_option("--data", data, "Dataset directory")->required();
  train->add_option("--out", out, "Checkpoint path")->required();
  train->add_option("--log", log_path, "Log path (default <out>.log)");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--config", config, "Config file");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint path")->required();
  eval->add_option("--data", data, "Dataset directory")->required();
  eval->add_option("--out", out, "Report path")->required();

  auto* infer = app.add_subcommand("infer", "Run single-image inference");
  infer->add_option("--config", config, "Config file");
  infer->add_option("--checkpoint", checkpoint, "Checkpoint path")->required();
  infer->add_option("--sample", sample, "Sample directory")->required();
  infer->add_option("--out", out, "Output directory")->required();

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  gc->add_option("--config", config, "Config file (accepted, unused)");
  gc->add_option("--seeds", seeds, "Random restarts per check");
  gc->add_option("--coords", coords, "Coordinates per sub-network seed");

  auto* rep = app.add_subcommand("report", "FLOP and parameter accounting");
  rep->add_option("--config", config, "Config file");
  rep->add_option("--height", height, "Input height");
  rep->add_option("--width", width, "Input width");
  rep->add_option("--out", out, "Also write the report here");

  auto* bench = app.add_subcommand("bench-scheduler",
                                   "Loss-stream weighting benchmark");
  bench->add_option("--config", config, "Config file");
  bench->add_option("--seeds", seeds, "Number of stream seeds")
      ->default_val(5);
  bench->add_option("--epochs", epochs, "Stream length");
  bench->add_option("--out", out, "Trace file (tab-delimited)");

  try {
    app.parse(argc, argv);
    if (gen->parsed()) return cmd_gen(config, out, count, seed);
    if (train->parsed()) return cmd_train(config, data, out, log_path);
    if (eval->parsed()) return cmd_eval(config, checkpoint, data, out);
    if (infer->parsed()) return cmd_infer(config, checkpoint, sample, out);
    if (gc->parsed()) return cmd_gradcheck(seeds, coords);
    if (rep->parsed()) return cmd_report(config, height, width, out);
    if (bench->parsed()) return cmd_bench_scheduler(config, seeds, epochs, out);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const mtsu::io_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
