#include "clat/data.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "clat/error.hpp"

namespace clat {

namespace {

uint32_t read_be32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw FormatError(path + ": truncated header");
  return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

std::ifstream open_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  return in;
}

}  // namespace

std::pair<Tensor, std::vector<int>> Dataset::gather(const std::vector<int>& indices) const {
  const int64_t per = images.numel() / size();
  Shape shape = images.shape();
  shape[0] = static_cast<int>(indices.size());
  Tensor out(shape);
  std::vector<int> y;
  y.reserve(indices.size());
  for (size_t i = 0; i < indices.size(); ++i) {
    const int src = indices[i];
    if (src < 0 || src >= size()) throw UsageError("dataset index out of range");
    std::copy(images.data() + src * per, images.data() + (src + 1) * per,
              out.data() + static_cast<int64_t>(i) * per);
    y.push_back(labels[static_cast<size_t>(src)]);
  }
  return {std::move(out), std::move(y)};
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream imgs = open_binary(images_path);
  const uint32_t img_magic = read_be32(imgs, images_path);
  if (img_magic != 0x00000803u) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "0x%08x", img_magic);
    throw FormatError(images_path + ": bad IDX image magic " + buf);
  }
  const uint32_t n = read_be32(imgs, images_path);
  const uint32_t rows = read_be32(imgs, images_path);
  const uint32_t cols = read_be32(imgs, images_path);

  std::ifstream labs = open_binary(labels_path);
  const uint32_t lab_magic = read_be32(labs, labels_path);
  if (lab_magic != 0x00000801u) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "0x%08x", lab_magic);
    throw FormatError(labels_path + ": bad IDX label magic " + buf);
  }
  const uint32_t n_labels = read_be32(labs, labels_path);
  if (n != n_labels) {
    throw FormatError("IDX image/label count mismatch: " + std::to_string(n) + " images vs " +
                      std::to_string(n_labels) + " labels");
  }

  Dataset ds;
  ds.images = Tensor({static_cast<int>(n), 1, static_cast<int>(rows), static_cast<int>(cols)});
  const int64_t total = ds.images.numel();
  std::vector<unsigned char> raw(static_cast<size_t>(total));
  imgs.read(reinterpret_cast<char*>(raw.data()), total);
  if (!imgs) throw FormatError(images_path + ": truncated pixel data");
  for (int64_t i = 0; i < total; ++i) ds.images[i] = static_cast<float>(raw[static_cast<size_t>(i)]) / 255.0f;

  std::vector<unsigned char> lraw(n);
  labs.read(reinterpret_cast<char*>(lraw.data()), n);
  if (!labs) throw FormatError(labels_path + ": truncated label data");
  int max_label = 0;
  ds.labels.reserve(n);
  for (const unsigned char v : lraw) {
    ds.labels.push_back(v);
    max_label = std::max(max_label, static_cast<int>(v));
  }
  ds.classes = max_label + 1;
  return ds;
}

Dataset load_cifar_binary(const std::vector<std::string>& paths) {
  constexpr int kRecord = 1 + 3 * 32 * 32;
  Dataset ds;
  ds.classes = 10;
  std::vector<unsigned char> raw;
  for (const auto& path : paths) {
    std::ifstream in = open_binary(path);
    in.seekg(0, std::ios::end);
    const std::streamoff len = in.tellg();
    in.seekg(0);
    if (len <= 0 || len % kRecord != 0) {
      throw FormatError(path + ": size " + std::to_string(len) + " is not a multiple of " +
                        std::to_string(kRecord));
    }
    const size_t old = raw.size();
    raw.resize(old + static_cast<size_t>(len));
    in.read(reinterpret_cast<char*>(raw.data() + old), len);
    if (!in) throw FormatError(path + ": short read");
  }
  const int n = static_cast<int>(raw.size()) / kRecord;
  ds.images = Tensor({n, 3, 32, 32});
  ds.labels.reserve(static_cast<size_t>(n));
  for (int s = 0; s < n; ++s) {
    const unsigned char* rec = raw.data() + static_cast<size_t>(s) * kRecord;
    ds.labels.push_back(rec[0]);
    float* img = ds.images.data() + static_cast<int64_t>(s) * 3 * 32 * 32;
    for (int i = 0; i < 3 * 32 * 32; ++i) img[i] = static_cast<float>(rec[1 + i]) / 255.0f;
  }
  return ds;
}

Dataset synth_dataset(int classes, int samples, int image_size, uint64_t seed, float noise) {
  if (classes < 2) throw ConfigError("synth_dataset needs at least 2 classes");
  if (samples < 1 || image_size < 4) throw ConfigError("synth_dataset needs samples >= 1, size >= 4");
  Rng rng(derive_seed(seed, "synth", 0));
  Dataset ds;
  ds.classes = classes;
  ds.images = Tensor({samples, 1, image_size, image_size});
  ds.labels.reserve(static_cast<size_t>(samples));

  constexpr float kPi = 3.14159265358979323846f;
  const float freq = 2.0f;  // cycles across the image
  for (int s = 0; s < samples; ++s) {
    const int c = s % classes;
    ds.labels.push_back(c);
    const float theta = kPi * static_cast<float>(c) / static_cast<float>(classes);
    const float phase = rng.uniform(0.0f, 2.0f * kPi);
    const float cos_t = std::cos(theta), sin_t = std::sin(theta);
    float* img = ds.images.data() + static_cast<int64_t>(s) * image_size * image_size;
    for (int py = 0; py < image_size; ++py) {
      for (int px = 0; px < image_size; ++px) {
        const float proj = (static_cast<float>(px) * cos_t + static_cast<float>(py) * sin_t) /
                           static_cast<float>(image_size);
        float v = 0.5f + 0.35f * std::sin(2.0f * kPi * freq * proj + phase);
        if (noise > 0.0f) v += noise * rng.uniform(-1.0f, 1.0f);
        img[py * image_size + px] = std::min(1.0f, std::max(0.0f, v));
      }
    }
  }
  return ds;
}

}  // namespace clat
