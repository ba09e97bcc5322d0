#include "mtsu/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace mtsu {
namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

int to_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    int r = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return r;
  } catch (...) {
    throw std::invalid_argument(key + ": not an integer: '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return r;
  } catch (...) {
    throw std::invalid_argument(key + ": not a number: '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw std::invalid_argument(key + ": not a boolean: '" + v + "'");
}

struct KeyDef {
  const char* name;
  const char* def;
  const char* doc;
  std::function<void(Config&, const std::string&)> set;
  std::function<std::string(const Config&)> get;
};

template <size_t N, typename T>
void set_array(std::array<T, N>& dst, const std::string& key,
               const std::string& v,
               T (*conv)(const std::string&, const std::string&)) {
  auto items = split_csv(v);
  if (items.size() != N)
    throw std::invalid_argument(key + ": expected " + std::to_string(N) +
                                " comma-separated values");
  for (size_t i = 0; i < N; ++i) dst[i] = conv(key, items[i]);
}

template <size_t N, typename T>
std::string arr_str(const std::array<T, N>& a) {
  std::ostringstream os;
  for (size_t i = 0; i < N; ++i) {
    if (i) os << ",";
    os << a[i];
  }
  return os.str();
}

std::string dbl_str(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

const std::vector<KeyDef>& key_defs() {
  static const std::vector<KeyDef> defs = {
      {"encoder.widths", "16,32,64,128", "stage channel counts (4 ints)",
       [](Config& c, const std::string& v) {
         set_array<4, int>(c.encoder_widths, "encoder.widths", v, to_int);
       },
       [](const Config& c) { return arr_str(c.encoder_widths); }},
      {"encoder.depths", "1,1,2,1", "fusion blocks per stage (4 ints)",
       [](Config& c, const std::string& v) {
         set_array<4, int>(c.encoder_depths, "encoder.depths", v, to_int);
       },
       [](const Config& c) { return arr_str(c.encoder_depths); }},
      {"encoder.split_ratio", "0.25",
       "fraction of channels convolved in partial conv",
       [](Config& c, const std::string& v) {
         c.encoder_split_ratio = to_double("encoder.split_ratio", v);
       },
       [](const Config& c) { return dbl_str(c.encoder_split_ratio); }},
      {"encoder.expansion", "2", "pointwise expansion ratio in fusion blocks",
       [](Config& c, const std::string& v) {
         c.encoder_expansion = to_int("encoder.expansion", v);
       },
       [](const Config& c) { return std::to_string(c.encoder_expansion); }},

      {"semantic.embed_dim", "64", "common projection width of the MLP decoder",
       [](Config& c, const std::string& v) {
         c.semantic_embed_dim = to_int("semantic.embed_dim", v);
       },
       [](const Config& c) { return std::to_string(c.semantic_embed_dim); }},
      {"semantic.num_classes", "6", "semantic category count (stuff + things)",
       [](Config& c, const std::string& v) {
         c.semantic_num_classes = to_int("semantic.num_classes", v);
       },
       [](const Config& c) { return std::to_string(c.semantic_num_classes); }},
      {"semantic.nfcl_layers", "1,2,3",
       "encoder stages guarded by NFCL; subset of 1-4, or 'none'",
       [](Config& c, const std::string& v) {
         c.semantic_nfcl_layers.clear();
         if (v == "none" || v.empty()) return;
         for (auto& item : split_csv(v)) {
           int s = to_int("semantic.nfcl_layers", item);
           if (s < 1 || s > 4)
             throw std::invalid_argument(
                 "semantic.nfcl_layers: stage out of range 1-4");
           c.semantic_nfcl_layers.push_back(s);
         }
       },
       [](const Config& c) {
         if (c.semantic_nfcl_layers.empty()) return std::string("none");
         std::string r;
         for (size_t i = 0; i < c.semantic_nfcl_layers.size(); ++i) {
           if (i) r += ",";
           r += std::to_string(c.semantic_nfcl_layers[i]);
         }
         return r;
       }},
      {"semantic.cfil_position", "semantic",
       "none|encoder|instance|both-decoders|encoder+semantic|semantic",
       [](Config& c, const std::string& v) {
         static const char* allowed[] = {"none",          "encoder",
                                         "instance",      "both-decoders",
                                         "encoder+semantic", "semantic"};
         for (auto* a : allowed)
           if (v == a) {
             c.semantic_cfil_position = v;
             return;
           }
         throw std::invalid_argument("semantic.cfil_position: bad value '" +
                                     v + "'");
       },
       [](const Config& c) { return c.semantic_cfil_position; }},
      {"semantic.cfil_kernel", "3", "kernel size of the CFIL output projection",
       [](Config& c, const std::string& v) {
         c.semantic_cfil_kernel = to_int("semantic.cfil_kernel", v);
       },
       [](const Config& c) { return std::to_string(c.semantic_cfil_kernel); }},

      {"instance.width", "0",
       "decoder layer width; 0 mirrors encoder widths in reverse",
       [](Config& c, const std::string& v) {
         c.instance_width = to_int("instance.width", v);
       },
       [](const Config& c) { return std::to_string(c.instance_width); }},
      {"instance.blocks_per_layer", "3",
       "non-bottleneck-1D blocks per decoder layer",
       [](Config& c, const std::string& v) {
         c.instance_blocks_per_layer = to_int("instance.blocks_per_layer", v);
       },
       [](const Config& c) {
         return std::to_string(c.instance_blocks_per_layer);
       }},
      {"instance.pyramid_supervision", "true",
       "supervise every decoder level (else only the finest)",
       [](Config& c, const std::string& v) {
         c.instance_pyramid_supervision =
             to_bool("instance.pyramid_supervision", v);
       },
       [](const Config& c) {
         return std::string(c.instance_pyramid_supervision ? "true" : "false");
       }},

      {"losses.kappa", "1", "orientation loss concentration",
       [](Config& c, const std::string& v) {
         c.losses_kappa = to_double("losses.kappa", v);
       },
       [](const Config& c) { return dbl_str(c.losses_kappa); }},
      {"losses.center_sigma", "8",
       "center heatmap Gaussian sigma in full-resolution pixels",
       [](Config& c, const std::string& v) {
         c.losses_center_sigma = to_double("losses.center_sigma", v);
       },
       [](const Config& c) { return dbl_str(c.losses_center_sigma); }},
      {"losses.ignore_id", "255", "semantic label excluded from the CE loss",
       [](Config& c, const std::string& v) {
         c.losses_ignore_id = to_int("losses.ignore_id", v);
       },
       [](const Config& c) { return std::to_string(c.losses_ignore_id); }},

      {"scheduler.mode", "adaptive", "fixed|adaptive task weighting",
       [](Config& c, const std::string& v) {
         if (v != "fixed" && v != "adaptive")
           throw std::invalid_argument("scheduler.mode: bad value '" + v + "'");
         c.scheduler_mode = v;
       },
       [](const Config& c) { return c.scheduler_mode; }},
      {"scheduler.alpha", "0.01", "weight adjustment sensitivity",
       [](Config& c, const std::string& v) {
         c.scheduler_alpha = to_double("scheduler.alpha", v);
       },
       [](const Config& c) { return dbl_str(c.scheduler_alpha); }},
      {"scheduler.w_min", "0.1", "minimum task weight",
       [](Config& c, const std::string& v) {
         c.scheduler_w_min = to_double("scheduler.w_min", v);
       },
       [](const Config& c) { return dbl_str(c.scheduler_w_min); }},
      {"scheduler.window", "1000", "relative-loss history cap per task",
       [](Config& c, const std::string& v) {
         c.scheduler_window = to_int("scheduler.window", v);
       },
       [](const Config& c) { return std::to_string(c.scheduler_window); }},
      {"scheduler.base_weights", "1,1,1,1,1",
       "base task weights (se,ce,of,or,sc)",
       [](Config& c, const std::string& v) {
         set_array<5, double>(c.scheduler_base_weights,
                              "scheduler.base_weights", v, to_double);
       },
       [](const Config& c) { return arr_str(c.scheduler_base_weights); }},

      {"fusion.center_threshold", "0.1", "minimum center heatmap peak score",
       [](Config& c, const std::string& v) {
         c.fusion_center_threshold = to_double("fusion.center_threshold", v);
       },
       [](const Config& c) { return dbl_str(c.fusion_center_threshold); }},
      {"fusion.nms_kernel", "3", "max-filter window for peak extraction (odd)",
       [](Config& c, const std::string& v) {
         c.fusion_nms_kernel = to_int("fusion.nms_kernel", v);
       },
       [](const Config& c) { return std::to_string(c.fusion_nms_kernel); }},
      {"fusion.top_k", "200", "maximum centers kept per image",
       [](Config& c, const std::string& v) {
         c.fusion_top_k = to_int("fusion.top_k", v);
       },
       [](const Config& c) { return std::to_string(c.fusion_top_k); }},
      {"fusion.min_area", "0", "instances below this pixel area drop to stuff",
       [](Config& c, const std::string& v) {
         c.fusion_min_area = to_int("fusion.min_area", v);
       },
       [](const Config& c) { return std::to_string(c.fusion_min_area); }},

      {"train.lr", "0.03", "SGD learning rate",
       [](Config& c, const std::string& v) {
         c.train_lr = to_double("train.lr", v);
       },
       [](const Config& c) { return dbl_str(c.train_lr); }},
      {"train.momentum", "0.9", "SGD momentum",
       [](Config& c, const std::string& v) {
         c.train_momentum = to_double("train.momentum", v);
       },
       [](const Config& c) { return dbl_str(c.train_momentum); }},
      {"train.weight_decay", "0.0001", "L2 weight decay",
       [](Config& c, const std::string& v) {
         c.train_weight_decay = to_double("train.weight_decay", v);
       },
       [](const Config& c) { return dbl_str(c.train_weight_decay); }},
      {"train.batch_size", "4", "samples per training batch",
       [](Config& c, const std::string& v) {
         c.train_batch_size = to_int("train.batch_size", v);
       },
       [](const Config& c) { return std::to_string(c.train_batch_size); }},
      {"train.iterations", "600", "total training batches",
       [](Config& c, const std::string& v) {
         c.train_iterations = to_int("train.iterations", v);
       },
       [](const Config& c) { return std::to_string(c.train_iterations); }},
      {"train.seed", "1", "seed for parameter init and data order",
       [](Config& c, const std::string& v) {
         c.train_seed = static_cast<unsigned long long>(
             std::stoull(v));
       },
       [](const Config& c) { return std::to_string(c.train_seed); }},
      {"train.cosine_decay", "false", "cosine learning-rate decay toggle",
       [](Config& c, const std::string& v) {
         c.train_cosine_decay = to_bool("train.cosine_decay", v);
       },
       [](const Config& c) {
         return std::string(c.train_cosine_decay ? "true" : "false");
       }},

      {"gen.height", "64", "generated image height",
       [](Config& c, const std::string& v) {
         c.gen_height = to_int("gen.height", v);
       },
       [](const Config& c) { return std::to_string(c.gen_height); }},
      {"gen.width", "64", "generated image width",
       [](Config& c, const std::string& v) {
         c.gen_width = to_int("gen.width", v);
       },
       [](const Config& c) { return std::to_string(c.gen_width); }},
      {"gen.stuff_classes", "2", "background class count",
       [](Config& c, const std::string& v) {
         c.gen_stuff_classes = to_int("gen.stuff_classes", v);
       },
       [](const Config& c) { return std::to_string(c.gen_stuff_classes); }},
      {"gen.thing_classes", "4", "countable object class count",
       [](Config& c, const std::string& v) {
         c.gen_thing_classes = to_int("gen.thing_classes", v);
       },
       [](const Config& c) { return std::to_string(c.gen_thing_classes); }},
      {"gen.scene_classes", "4", "scene category count",
       [](Config& c, const std::string& v) {
         c.gen_scene_classes = to_int("gen.scene_classes", v);
       },
       [](const Config& c) { return std::to_string(c.gen_scene_classes); }},
      {"gen.min_objects", "1", "minimum instances per scene",
       [](Config& c, const std::string& v) {
         c.gen_min_objects = to_int("gen.min_objects", v);
       },
       [](const Config& c) { return std::to_string(c.gen_min_objects); }},
      {"gen.max_objects", "4", "maximum instances per scene",
       [](Config& c, const std::string& v) {
         c.gen_max_objects = to_int("gen.max_objects", v);
       },
       [](const Config& c) { return std::to_string(c.gen_max_objects); }},
      {"gen.sensor_noise", "false", "additive sensor-noise toggle",
       [](Config& c, const std::string& v) {
         c.gen_sensor_noise = to_bool("gen.sensor_noise", v);
       },
       [](const Config& c) {
         return std::string(c.gen_sensor_noise ? "true" : "false");
       }},
  };
  return defs;
}

}  // namespace

void apply_config_key(Config& cfg, const std::string& key,
                      const std::string& value) {
  for (const auto& d : key_defs())
    if (key == d.name) {
      d.set(cfg, value);
      return;
    }
  throw std::invalid_argument("unknown config key: " + key);
}

Config parse_config_text(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected 'key = value'");
    apply_config_key(cfg, trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  return cfg;
}

Config parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string dump_config(const Config& cfg) {
  std::string out;
  for (const auto& d : key_defs()) {
    out += d.name;
    out += " = ";
    out += d.get(cfg);
    out += "\n";
  }
  return out;
}

std::string config_help() {
  std::string out;
  for (const auto& d : key_defs()) {
    std::string line = std::string("  ") + d.name;
    while (line.size() < 32) line += ' ';
    line += "(default ";
    line += d.def;
    line += ") ";
    line += d.doc;
    out += line + "\n";
  }
  return out;
}

}  // namespace mtsu
