#include "clat/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "clat/error.hpp"

namespace clat {

namespace {

constexpr char kMagic[4] = {'C', 'L', 'T', 'F'};
constexpr uint32_t kVersion = 1;

class Writer {
public:
  void u8(uint8_t v) { bytes_.push_back(v); }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<uint32_t>(v)); }
  void tensor(const Tensor& t) {
    u32(static_cast<uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) u32(static_cast<uint32_t>(t.dim(i)));
    for (int64_t i = 0; i < t.numel(); ++i) f32(t[i]);
  }
  const std::vector<uint8_t>& bytes() const { return bytes_; }

private:
  std::vector<uint8_t> bytes_;
};

class Reader {
public:
  Reader(std::vector<uint8_t> bytes) : bytes_(std::move(bytes)) {}
  uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  Tensor tensor() {
    const uint32_t rank = u32();
    if (rank > 8) throw CorruptionError("checkpoint tensor rank out of bounds");
    Shape shape;
    for (uint32_t i = 0; i < rank; ++i) {
      const uint32_t d = u32();
      if (d == 0 || d > (1u << 28)) throw CorruptionError("checkpoint tensor dimension out of bounds");
      shape.push_back(static_cast<int>(d));
    }
    Tensor t(shape);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = f32();
    return t;
  }
  size_t pos() const { return pos_; }
  size_t size() const { return bytes_.size(); }

private:
  void need(size_t n) {
    if (pos_ + n > bytes_.size()) throw CorruptionError("checkpoint truncated");
  }
  std::vector<uint8_t> bytes_;
  size_t pos_ = 0;
};

uint64_t fnv1a(const uint8_t* data, size_t n) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

void save_checkpoint(const Network& net, const TrainState& state, const std::string& path) {
  Writer w;
  for (const char c : kMagic) w.u8(static_cast<uint8_t>(c));
  w.u32(kVersion);

  const Shape& in = net.input_shape();
  for (const int d : in) w.u32(static_cast<uint32_t>(d));
  w.u32(static_cast<uint32_t>(net.num_classes()));
  w.u32(static_cast<uint32_t>(net.layer_count()));
  for (const auto& l : net.layers()) {
    w.u8(static_cast<uint8_t>(l.kind));
    w.u8(l.frozen ? 1 : 0);
    if (l.kind == LayerKind::conv) {
      w.u32(static_cast<uint32_t>(l.in_channels));
      w.u32(static_cast<uint32_t>(l.out_channels));
      w.u32(static_cast<uint32_t>(l.kernel));
      w.u32(static_cast<uint32_t>(l.stride));
      w.u32(static_cast<uint32_t>(l.pad));
    } else {
      w.u32(static_cast<uint32_t>(l.in_features));
      w.u32(static_cast<uint32_t>(l.out_features));
    }
    w.u32(static_cast<uint32_t>(l.post.size()));
    for (const auto& p : l.post) {
      w.u8(static_cast<uint8_t>(p.op));
      w.u32(static_cast<uint32_t>(p.window));
    }
    w.tensor(l.weight);
    w.tensor(l.bias);
  }

  w.u32(static_cast<uint32_t>(state.completed_epochs));
  w.u64(state.seed);
  w.u32(static_cast<uint32_t>(state.critical.size()));
  for (const int i : state.critical) w.u32(static_cast<uint32_t>(i));
  const bool momentum = !state.vel_w.empty();
  w.u8(momentum ? 1 : 0);
  if (momentum) {
    for (size_t i = 0; i < state.vel_w.size(); ++i) {
      w.tensor(state.vel_w[i]);
      w.tensor(state.vel_b[i]);
    }
  }

  const uint64_t checksum = fnv1a(w.bytes().data(), w.bytes().size());
  w.u64(checksum);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write checkpoint " + path);
  out.write(reinterpret_cast<const char*>(w.bytes().data()),
            static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw FormatError("short write on checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16) throw CorruptionError("checkpoint too small: " + path);

  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError(path + ": not a CLTF checkpoint (bad magic)");
  }
  const uint64_t stored = [&] {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(bytes[bytes.size() - 8 + static_cast<size_t>(i)]) << (8 * i);
    return v;
  }();
  if (fnv1a(bytes.data(), bytes.size() - 8) != stored) {
    throw CorruptionError(path + ": checksum mismatch");
  }

  Reader r(std::move(bytes));
  for (int i = 0; i < 4; ++i) r.u8();
  const uint32_t version = r.u32();
  if (version != kVersion) {
    throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
  }

  Shape input{static_cast<int>(r.u32()), static_cast<int>(r.u32()), static_cast<int>(r.u32())};
  const int classes = static_cast<int>(r.u32());
  const int layer_count = static_cast<int>(r.u32());
  if (layer_count < 1 || layer_count > 4096) throw CorruptionError(path + ": layer count out of bounds");

  Network net(input, classes);
  std::vector<bool> frozen;
  for (int li = 0; li < layer_count; ++li) {
    const auto kind = static_cast<LayerKind>(r.u8());
    frozen.push_back(r.u8() != 0);
    int out_units, kernel = 0, stride = 1, pad = 0;
    if (kind == LayerKind::conv) {
      r.u32();  // in_channels, re-derived by the builder
      out_units = static_cast<int>(r.u32());
      kernel = static_cast<int>(r.u32());
      stride = static_cast<int>(r.u32());
      pad = static_cast<int>(r.u32());
    } else {
      r.u32();  // in_features
      out_units = static_cast<int>(r.u32());
    }
    const uint32_t n_post = r.u32();
    if (n_post > 8) throw CorruptionError(path + ": post-op count out of bounds");
    std::vector<PostOpSpec> post;
    for (uint32_t p = 0; p < n_post; ++p) {
      PostOpSpec spec;
      spec.op = static_cast<PostOp>(r.u8());
      spec.window = static_cast<int>(r.u32());
      post.push_back(spec);
    }
    if (kind == LayerKind::conv) {
      net.add_conv(out_units, kernel, stride, pad, post);
    } else {
      net.add_dense(out_units, post);
    }
    LayerSpec& l = net.layer_mutable(li + 1);
    Tensor weight = r.tensor();
    Tensor bias = r.tensor();
    if (!weight.same_shape(l.weight) || !bias.same_shape(l.bias)) {
      throw CorruptionError(path + ": parameter blob shape mismatch at layer " + std::to_string(li + 1));
    }
    l.weight = std::move(weight);
    l.bias = std::move(bias);
    l.frozen = frozen.back();
  }

  Checkpoint ckpt{std::move(net), TrainState{}};
  ckpt.state.completed_epochs = static_cast<int>(r.u32());
  ckpt.state.seed = r.u64();
  const uint32_t n_critical = r.u32();
  if (n_critical > static_cast<uint32_t>(layer_count)) {
    throw CorruptionError(path + ": critical set size out of bounds");
  }
  for (uint32_t i = 0; i < n_critical; ++i) ckpt.state.critical.push_back(static_cast<int>(r.u32()));
  if (r.u8() != 0) {
    for (int li = 0; li < layer_count; ++li) {
      ckpt.state.vel_w.push_back(r.tensor());
      ckpt.state.vel_b.push_back(r.tensor());
    }
  }
  if (r.pos() != r.size() - 8) throw CorruptionError(path + ": trailing bytes in checkpoint");
  return ckpt;
}

bool same_architecture(const Network& a, const Network& b) {
  if (a.input_shape() != b.input_shape() || a.num_classes() != b.num_classes() ||
      a.layer_count() != b.layer_count()) {
    return false;
  }
  for (int i = 1; i <= a.layer_count(); ++i) {
    const LayerSpec& la = a.layer(i);
    const LayerSpec& lb = b.layer(i);
    if (la.kind != lb.kind || la.post.size() != lb.post.size()) return false;
    for (size_t p = 0; p < la.post.size(); ++p) {
      if (la.post[p].op != lb.post[p].op || la.post[p].window != lb.post[p].window) return false;
    }
    if (la.kind == LayerKind::conv) {
      if (la.in_channels != lb.in_channels || la.out_channels != lb.out_channels ||
          la.kernel != lb.kernel || la.stride != lb.stride || la.pad != lb.pad) {
        return false;
      }
    } else {
      if (la.in_features != lb.in_features || la.out_features != lb.out_features) return false;
    }
  }
  return true;
}

}  // namespace clat
