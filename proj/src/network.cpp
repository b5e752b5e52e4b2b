#include "clat/network.hpp"

#include <algorithm>
#include <cmath>

#include "clat/error.hpp"

namespace clat {

namespace {

Shape apply_post_shape(Shape s, const PostOpSpec& p, int layer_index) {
  switch (p.op) {
    case PostOp::relu:
      return s;
    case PostOp::maxpool:
    case PostOp::avgpool: {
      if (s.size() != 3) {
        throw ConfigError("layer " + std::to_string(layer_index) + ": pooling needs spatial features");
      }
      if (p.window < 1 || s[1] % p.window != 0 || s[2] % p.window != 0) {
        throw ConfigError("layer " + std::to_string(layer_index) + ": pool window " +
                          std::to_string(p.window) + " does not divide " + shape_str(s));
      }
      return Shape{s[0], s[1] / p.window, s[2] / p.window};
    }
    case PostOp::flatten:
      return Shape{static_cast<int>(shape_numel(s))};
  }
  return s;
}

}  // namespace

Network::Network(Shape input_shape, int num_classes)
    : input_shape_(std::move(input_shape)), classes_(num_classes) {
  if (input_shape_.size() != 3) {
    throw ConfigError("network input shape must be [C,H,W], got " + shape_str(input_shape_));
  }
  if (classes_ < 2) throw ConfigError("network needs at least 2 classes");
  current_shape_ = input_shape_;
}

Network& Network::add_conv(int out_channels, int kernel, int stride, int pad,
                           std::vector<PostOpSpec> post) {
  const int index = layer_count() + 1;
  if (current_shape_.size() != 3) {
    throw ConfigError("layer " + std::to_string(index) + ": conv needs spatial input, have " +
                      shape_str(current_shape_));
  }
  if (out_channels < 1 || kernel < 1 || stride < 1 || pad < 0) {
    throw ConfigError("layer " + std::to_string(index) + ": invalid conv geometry");
  }
  const int c = current_shape_[0], h = current_shape_[1], w = current_shape_[2];
  const int num_h = h + 2 * pad - kernel;
  const int num_w = w + 2 * pad - kernel;
  if (num_h < 0 || num_w < 0 || num_h % stride != 0 || num_w % stride != 0) {
    throw ConfigError("layer " + std::to_string(index) + ": conv output size is not a positive integer");
  }
  LayerSpec spec;
  spec.index = index;
  spec.kind = LayerKind::conv;
  spec.in_channels = c;
  spec.out_channels = out_channels;
  spec.kernel = kernel;
  spec.stride = stride;
  spec.pad = pad;
  spec.post = std::move(post);
  spec.weight = Tensor({out_channels, c, kernel, kernel});
  spec.bias = Tensor({out_channels});
  Shape s{out_channels, num_h / stride + 1, num_w / stride + 1};
  for (const auto& p : spec.post) s = apply_post_shape(std::move(s), p, index);
  spec.output_shape = s;
  layers_.push_back(std::move(spec));
  current_shape_ = std::move(s);
  return *this;
}

Network& Network::add_dense(int out_features, std::vector<PostOpSpec> post) {
  const int index = layer_count() + 1;
  if (out_features < 1) throw ConfigError("layer " + std::to_string(index) + ": invalid dense width");
  for (const auto& p : post) {
    if (p.op == PostOp::maxpool || p.op == PostOp::avgpool) {
      throw ConfigError("layer " + std::to_string(index) + ": pooling after dense is not supported");
    }
  }
  LayerSpec spec;
  spec.index = index;
  spec.kind = LayerKind::dense;
  spec.in_features = static_cast<int>(shape_numel(current_shape_));
  spec.out_features = out_features;
  spec.post = std::move(post);
  spec.weight = Tensor({spec.in_features, out_features});
  spec.bias = Tensor({out_features});
  spec.output_shape = Shape{out_features};
  layers_.push_back(std::move(spec));
  current_shape_ = Shape{out_features};
  return *this;
}

void Network::init_params(Rng& rng) {
  for (auto& l : layers_) {
    const int fan_in = l.kind == LayerKind::conv ? l.in_channels * l.kernel * l.kernel : l.in_features;
    const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
    l.weight = Tensor::uniform(l.weight.shape(), -bound, bound, rng);
    l.bias = Tensor(l.bias.shape());
  }
}

void Network::check_layer_index(int index) const {
  if (index < 1 || index > layer_count()) {
    throw UsageError("layer index " + std::to_string(index) + " out of range [1," +
                     std::to_string(layer_count()) + "]");
  }
}

const LayerSpec& Network::layer(int index) const {
  check_layer_index(index);
  return layers_[static_cast<size_t>(index - 1)];
}

LayerSpec& Network::layer_mutable(int index) {
  check_layer_index(index);
  return layers_[static_cast<size_t>(index - 1)];
}

int Network::record_chain(Tape& tape, int input_id, const std::set<int>& taps,
                          std::map<int, int>& tap_ids, std::vector<std::pair<int, int>>& params,
                          bool param_grads, int last_layer) const {
  if (layers_.empty()) throw UsageError("network has no layers");
  for (const int t : taps) check_layer_index(t);
  if (last_layer < 0 || last_layer > layer_count()) {
    throw UsageError("last_layer " + std::to_string(last_layer) + " out of range");
  }
  const int stop = last_layer == 0 ? layer_count() : last_layer;
  const bool reuse_params = !params.empty();
  ++forward_count_;

  int cur = input_id;
  for (const auto& l : layers_) {
    if (l.index > stop) break;
    int wid, bid;
    if (reuse_params) {
      wid = params[static_cast<size_t>(l.index - 1)].first;
      bid = params[static_cast<size_t>(l.index - 1)].second;
    } else {
      const bool wg = param_grads && !l.frozen;
      wid = tape.leaf(l.weight, wg);
      bid = tape.leaf(l.bias, wg);
      params.emplace_back(wid, bid);
    }
    if (l.kind == LayerKind::conv) {
      cur = tape.conv2d(cur, wid, bid, l.stride, l.pad);
    } else {
      if (tape.value(cur).rank() != 2) cur = tape.flatten(cur);
      cur = tape.matmul(cur, wid);
      cur = tape.add_bias(cur, bid);
    }
    for (const auto& p : l.post) {
      switch (p.op) {
        case PostOp::relu: cur = tape.relu(cur); break;
        case PostOp::maxpool: cur = tape.maxpool2d(cur, p.window); break;
        case PostOp::avgpool: cur = tape.avgpool2d(cur, p.window); break;
        case PostOp::flatten: cur = tape.flatten(cur); break;
      }
    }
    if (taps.count(l.index)) tap_ids[l.index] = cur;
  }
  return cur;
}

TapeForward Network::forward_tape(const Tensor& x, const std::set<int>& taps, bool input_grad,
                                  bool param_grads) const {
  if (x.rank() != 4 || Shape(x.shape().begin() + 1, x.shape().end()) != input_shape_) {
    throw ShapeError("input " + shape_str(x.shape()) + " does not match network input " +
                     shape_str(input_shape_));
  }
  TapeForward fwd;
  fwd.input_id = fwd.tape.leaf(x, input_grad);
  fwd.logits_id = record_chain(fwd.tape, fwd.input_id, taps, fwd.tap_ids, fwd.params, param_grads);
  return fwd;
}

Tensor Network::forward(const Tensor& x) const {
  TapeForward fwd = forward_tape(x, {}, false, false);
  return fwd.tape.value(fwd.logits_id);
}

std::pair<Tensor, FeatureTaps> Network::forward_with_taps(const Tensor& x,
                                                          const std::set<int>& taps) const {
  TapeForward fwd = forward_tape(x, taps, false, false);
  FeatureTaps out;
  const int n = x.dim(0);
  for (const auto& [index, id] : fwd.tap_ids) {
    out.features[index] = fwd.tape.value(id);
    out.dims[index] = out.features[index].numel() / n;
  }
  return {fwd.tape.value(fwd.logits_id), std::move(out)};
}

Tensor Network::apply_layer(int index, const Tensor& input) const {
  const LayerSpec& l = layer(index);
  Tape tape;
  int cur = tape.leaf(input, false);
  const int wid = tape.leaf(l.weight, false);
  const int bid = tape.leaf(l.bias, false);
  if (l.kind == LayerKind::conv) {
    cur = tape.conv2d(cur, wid, bid, l.stride, l.pad);
  } else {
    if (input.rank() != 2) cur = tape.flatten(cur);
    cur = tape.matmul(cur, wid);
    cur = tape.add_bias(cur, bid);
  }
  for (const auto& p : l.post) {
    switch (p.op) {
      case PostOp::relu: cur = tape.relu(cur); break;
      case PostOp::maxpool: cur = tape.maxpool2d(cur, p.window); break;
      case PostOp::avgpool: cur = tape.avgpool2d(cur, p.window); break;
      case PostOp::flatten: cur = tape.flatten(cur); break;
    }
  }
  return tape.value(cur);
}

Gradients Network::gradients(const TapeForward& fwd, const BackwardResult& back,
                             const GradientRequest& request) const {
  Gradients out;
  if (request.wrt_input) out.input = back.at(fwd.input_id);
  for (const int index : request.wrt_layers) {
    check_layer_index(index);
    const LayerSpec& l = layer(index);
    if (l.frozen) {
      throw UsageError("layer " + std::to_string(index) + " is frozen; no gradient was computed");
    }
    const auto [wid, bid] = fwd.params[static_cast<size_t>(index - 1)];
    LayerGrads g;
    g.weight = back.has(wid) ? back.at(wid) : Tensor(l.weight.shape());
    g.bias = back.has(bid) ? back.at(bid) : Tensor(l.bias.shape());
    out.layers.emplace(index, std::move(g));
  }
  return out;
}

void Network::set_freeze_mask(const std::vector<int>& critical) {
  if (critical.empty()) {
    throw UsageError("critical set must contain at least one trainable layer");
  }
  for (const int index : critical) check_layer_index(index);
  for (auto& l : layers_) {
    l.frozen = std::find(critical.begin(), critical.end(), l.index) == critical.end();
  }
}

void Network::unfreeze_all() {
  for (auto& l : layers_) l.frozen = false;
}

std::vector<int> Network::trainable_layers() const {
  std::vector<int> out;
  for (const auto& l : layers_) {
    if (!l.frozen) out.push_back(l.index);
  }
  return out;
}

ParamCensus Network::param_census() const {
  ParamCensus census;
  for (const auto& l : layers_) {
    census.total += l.param_count();
    if (!l.frozen) census.trainable += l.param_count();
  }
  census.fraction = census.total > 0 ? static_cast<double>(census.trainable) / static_cast<double>(census.total) : 0.0;
  return census;
}

}  // namespace clat
