#pragma once

#include <array>
#include <string>
#include <vector>

namespace eraw {

struct EncoderConfig {
  std::string preset = "toy";
  std::array<int, 2> face_hw{64, 64};
  std::array<int, 2> scene_hw{96, 160};
  std::vector<int> face_channels{16, 32, 64, 128};
  std::vector<int> face_blocks{2, 2, 2, 2};
  std::vector<int> scene_blocks{2, 2, 2, 2};
  int stem_kernel = 3;
  // Per-channel standardization applied after scaling pixels to [0,1].
  std::array<double, 3> mean{0.485, 0.456, 0.406};
  std::array<double, 3> stddev{0.229, 0.224, 0.225};
};

struct DafConfig {
  bool enabled = true;
  int tile = 8;
  std::string freq_filter = "shared";  // shared | per_bin
  std::vector<int> enabled_levels{1, 2, 3};
  int embed_channels = 16;
};

struct GcsConfig {
  bool enabled = true;
  // dilations[level-1][branch]; empty selects 2^(branch-1).
  std::vector<std::vector<int>> dilations;
};

struct WnetConfig {
  std::string strategy = "wnet";   // wnet | decision | late | hierarchical
  std::string fusion_op = "mhca";  // mhca | add | conv | se | aff
  bool partial_decode = true;
  int heads = 4;
  std::vector<int> patch{2, 2, 1, 1};
  int head_channels = 16;
};

struct ModelConfig {
  EncoderConfig encoder;
  DafConfig daf;
  GcsConfig gcs;
  WnetConfig wnet;
  bool conv_bias = true;  // biases on convolutions that are not followed by a norm
};

inline ModelConfig toy_model_config() { return {}; }

inline ModelConfig paper_model_config() {
  ModelConfig c;
  c.encoder.preset = "paper";
  c.encoder.face_hw = {224, 224};
  c.encoder.scene_hw = {480, 800};
  c.encoder.face_channels = {64, 128, 256, 512};
  c.encoder.face_blocks = {2, 2, 2, 2};
  c.encoder.scene_blocks = {3, 4, 6, 3};
  c.encoder.stem_kernel = 7;
  c.wnet.patch = {4, 2, 1, 1};
  return c;
}

inline int groups_per_level(int level) { return 2 + 2 * ((level - 1) / 2); }

}  // namespace eraw
