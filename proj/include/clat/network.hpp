#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "clat/autograd.hpp"
#include "clat/tensor.hpp"

namespace clat {

enum class LayerKind : uint8_t { conv, dense };
enum class PostOp : uint8_t { relu, maxpool, avgpool, flatten };

struct PostOpSpec {
  PostOp op;
  int window = 0;  // pools only
};

/// One weight-bearing layer together with its fused elementwise/pooling
/// tail. The whole unit is what layer criticality is measured on.
struct LayerSpec {
  int index = 0;  // 1-based
  LayerKind kind = LayerKind::dense;
  // conv geometry
  int in_channels = 0, out_channels = 0, kernel = 0, stride = 1, pad = 0;
  // dense geometry
  int in_features = 0, out_features = 0;
  std::vector<PostOpSpec> post;
  Tensor weight;  // conv: [F,C,k,k]; dense: [in,out]
  Tensor bias;    // conv: [F]; dense: [out]
  bool frozen = false;
  Shape output_shape;  // per-sample shape after all fused post-ops

  int64_t param_count() const { return weight.numel() + bias.numel(); }
  int64_t feature_count() const { return shape_numel(output_shape); }  // N_i
};

/// Hidden features F_i(x) captured during a forward pass, keyed by layer
/// index, with each layer's per-sample feature dimensionality N_i.
struct FeatureTaps {
  std::map<int, Tensor> features;
  std::map<int, int64_t> dims;
};

/// A forward pass recorded on a tape, with handles to everything a caller
/// may differentiate against.
struct TapeForward {
  Tape tape;
  int input_id = -1;
  int logits_id = -1;
  std::map<int, int> tap_ids;            // layer index -> node id
  std::vector<std::pair<int, int>> params;  // per layer: (weight id, bias id)
};

struct ParamCensus {
  int64_t total = 0;
  int64_t trainable = 0;
  double fraction = 0.0;
};

struct LayerGrads {
  Tensor weight;
  Tensor bias;
};

struct Gradients {
  Tensor input;                     // empty unless requested
  std::map<int, LayerGrads> layers; // keyed by 1-based layer index
};

/// Sequential composition F(x) = f_n(...f_1(x)) of weight-bearing layers.
/// Single-writer; concurrent read-only forwards on separate batches are
/// fine apart from the forward-pass counter, which is a plain counter for
/// test instrumentation.
class Network {
public:
  /// input_shape is the per-sample shape [C,H,W].
  Network(Shape input_shape, int num_classes);

  Network& add_conv(int out_channels, int kernel, int stride, int pad,
                    std::vector<PostOpSpec> post = {});
  Network& add_dense(int out_features, std::vector<PostOpSpec> post = {});

  /// He-uniform weights, zero biases, drawn layer by layer in index order.
  void init_params(Rng& rng);

  int layer_count() const { return static_cast<int>(layers_.size()); }
  const LayerSpec& layer(int index) const;  // 1-based
  LayerSpec& layer_mutable(int index);
  const std::vector<LayerSpec>& layers() const { return layers_; }
  const Shape& input_shape() const { return input_shape_; }
  int num_classes() const { return classes_; }

  /// Records f_1..f_n on a tape. `taps` requests hidden features F_i;
  /// `input_grad`/`param_grads` control which leaves participate in
  /// backward. Frozen layers never receive parameter gradients.
  TapeForward forward_tape(const Tensor& x, const std::set<int>& taps, bool input_grad,
                           bool param_grads) const;

  /// Records one forward chain on an existing tape, reusing `params` when
  /// already populated (so two chains can share parameter leaves). Stops
  /// after `last_layer` when positive. Returns the final node id.
  int record_chain(Tape& tape, int input_id, const std::set<int>& taps,
                   std::map<int, int>& tap_ids, std::vector<std::pair<int, int>>& params,
                   bool param_grads, int last_layer = 0) const;

  /// Plain inference: logits only.
  Tensor forward(const Tensor& x) const;

  /// Logits plus requested hidden features. Tapping never perturbs logits.
  std::pair<Tensor, FeatureTaps> forward_with_taps(const Tensor& x, const std::set<int>& taps) const;

  /// Applies the single functional unit f_i (layer + fused post-ops) to a
  /// given activation, for layer-by-layer recomputation.
  Tensor apply_layer(int index, const Tensor& input) const;

  /// Extracts gradients from a differentiated forward. Validates that every
  /// requested layer exists and is trainable.
  Gradients gradients(const TapeForward& fwd, const BackwardResult& back,
                      const GradientRequest& request) const;

  /// Marks exactly the layers outside `critical` as frozen.
  void set_freeze_mask(const std::vector<int>& critical);
  void unfreeze_all();
  std::vector<int> trainable_layers() const;

  ParamCensus param_census() const;

  uint64_t forward_count() const { return forward_count_; }

private:
  void check_layer_index(int index) const;

  Shape input_shape_;
  int classes_ = 0;
  std::vector<LayerSpec> layers_;
  Shape current_shape_;  // build-time shape cursor (per-sample)
  mutable uint64_t forward_count_ = 0;
};

}  // namespace clat
