#pragma once

#include <array>
#include <string>
#include <vector>

namespace mtsu {

/// Every documented config key with its default. Unknown keys are rejected
/// at parse time.
struct Config {
  // encoder.*
  std::array<int, 4> encoder_widths{16, 32, 64, 128};
  std::array<int, 4> encoder_depths{1, 1, 2, 1};
  double encoder_split_ratio = 0.25;
  int encoder_expansion = 2;

  // semantic.*
  int semantic_embed_dim = 64;
  int semantic_num_classes = 6;
  std::vector<int> semantic_nfcl_layers{1, 2, 3};
  std::string semantic_cfil_position = "semantic";
  int semantic_cfil_kernel = 3;

  // instance.*
  int instance_width = 0;  // 0: mirror encoder stage widths in reverse
  int instance_blocks_per_layer = 3;
  bool instance_pyramid_supervision = true;

  // losses.*
  double losses_kappa = 1.0;
  double losses_center_sigma = 8.0;
  int losses_ignore_id = 255;

  // scheduler.*
  std::string scheduler_mode = "adaptive";
  double scheduler_alpha = 0.01;
  double scheduler_w_min = 0.1;
  int scheduler_window = 1000;
  std::array<double, 5> scheduler_base_weights{1, 1, 1, 1, 1};

  // fusion.*
  double fusion_center_threshold = 0.1;
  int fusion_nms_kernel = 3;
  int fusion_top_k = 200;
  int fusion_min_area = 0;

  // train.*
  double train_lr = 0.03;
  double train_momentum = 0.9;
  double train_weight_decay = 1e-4;
  int train_batch_size = 4;
  int train_iterations = 600;
  unsigned long long train_seed = 1;
  bool train_cosine_decay = false;

  // gen.*
  int gen_height = 64;
  int gen_width = 64;
  int gen_stuff_classes = 2;
  int gen_thing_classes = 4;
  int gen_scene_classes = 4;
  int gen_min_objects = 1;
  int gen_max_objects = 4;
  bool gen_sensor_noise = false;
};

/// Applies one `key = value` pair; throws std::invalid_argument naming the
/// key on unknown keys or malformed values.
void apply_config_key(Config& cfg, const std::string& key,
                      const std::string& value);

/// Parses a line-oriented `key = value` file. Blank lines and lines starting
/// with '#' are skipped.
Config parse_config_file(const std::string& path);
Config parse_config_text(const std::string& text);

/// One `key = value` line per key, current values. Re-parseable.
std::string dump_config(const Config& cfg);

/// Key list with defaults and one-line docs, for --help.
std::string config_help();

}  // namespace mtsu
