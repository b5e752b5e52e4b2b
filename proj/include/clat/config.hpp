#pragma once

#include <string>
#include <vector>

#include "clat/data.hpp"
#include "clat/network.hpp"
#include "clat/trainer.hpp"

namespace clat {

struct LayerConfig {
  LayerKind kind = LayerKind::conv;
  int units = 0;  // conv filters or dense width
  int kernel = 3, stride = 1, pad = 0;
  std::vector<PostOpSpec> post;
};

struct ModelConfig {
  Shape input;  // C,H,W
  int classes = 0;
  std::vector<LayerConfig> layers;
};

struct DataConfig {
  std::string source;  // synth | idx | cifar
  // synth
  int train_samples = 1024;
  int test_samples = 512;
  int image_size = 16;
  float noise = 0.1f;
  uint64_t data_seed = 9001;
  // idx
  std::string train_images, train_labels, test_images, test_labels;
  // cifar
  std::vector<std::string> train_files, test_files;
};

struct OutputConfig {
  std::string dir = "runs/out";
  std::string metrics = "metrics.csv";
};

struct RunConfig {
  ModelConfig model;
  DataConfig data;
  TrainConfig train;  // includes the attack block
  OutputConfig output;
};

/// Parses the `[section]` / `key = value` config format. Strict: unknown
/// sections or keys fail with the offending line number.
RunConfig parse_config_file(const std::string& path);
RunConfig parse_config_text(const std::string& text, const std::string& name);

/// Serializes a config with every default filled in; written next to run
/// outputs for provenance. parse(render(c)) reproduces c.
std::string render_config(const RunConfig& cfg);

/// Builds the configured network with seeded parameter initialization.
Network build_network(const ModelConfig& model, uint64_t init_seed);

/// Loads train and test splits for the configured source.
std::pair<Dataset, Dataset> load_datasets(const DataConfig& data, int classes);

}  // namespace clat
