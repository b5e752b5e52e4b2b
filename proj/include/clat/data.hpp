#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "clat/tensor.hpp"

namespace clat {

enum class Split : uint8_t { train, test };

/// Labeled image set. Pixels are float32 in [0,1], images [N,C,H,W].
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  int classes = 0;
  Split split = Split::train;

  int size() const { return images.empty() ? 0 : images.dim(0); }
  /// Gathers a batch by sample indices, preserving the given order.
  std::pair<Tensor, std::vector<int>> gather(const std::vector<int>& indices) const;
};

/// Reads an IDX image/label file pair (big-endian headers, magic
/// 0x00000803 for images, 0x00000801 for labels). Pixels are scaled by
/// 1/255.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

/// Reads CIFAR-10 style binary batches: each record is one label byte
/// followed by 3072 pixel bytes in R,G,B plane order.
Dataset load_cifar_binary(const std::vector<std::string>& paths);

/// Procedural grating dataset: class c selects an orientation, each sample
/// gets a random phase plus uniform pixel noise. Classes are assigned
/// round-robin so the histogram is balanced within one sample.
Dataset synth_dataset(int classes, int samples, int image_size, uint64_t seed, float noise = 0.1f);

}  // namespace clat
