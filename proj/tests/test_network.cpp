#include <gtest/gtest.h>

#include "clat/error.hpp"
#include "clat/network.hpp"
#include "support/test_utils.hpp"

namespace clat {
namespace {

using clat::testing::random_tensor;
using clat::testing::toy_cnn6;
using clat::testing::toy_mlp;

TEST(Network, TapsDoNotPerturbLogits) {
  Rng rng(41);
  Network net = toy_cnn6(1, 12, 4, 1);
  const Tensor x = random_tensor({3, 1, 12, 12}, rng, 0.0f, 1.0f);
  const Tensor plain = net.forward(x);
  const auto [tapped_none, taps_none] = net.forward_with_taps(x, {});
  EXPECT_TRUE(taps_none.features.empty());
  EXPECT_TRUE(plain.bit_equal(tapped_none));
  const auto [tapped_all, taps_all] = net.forward_with_taps(x, {1, 2, 3, 4, 5, 6});
  EXPECT_TRUE(plain.bit_equal(tapped_all));
  EXPECT_EQ(taps_all.features.size(), 6u);
}

TEST(Network, LastTapEqualsLogits) {
  Rng rng(42);
  Network net = toy_mlp(8, 6, 2, 3, 2);
  const Tensor x = random_tensor({4, 1, 1, 8}, rng, 0.0f, 1.0f);
  const auto [logits, taps] = net.forward_with_taps(x, {net.layer_count()});
  EXPECT_TRUE(logits.bit_equal(taps.features.at(net.layer_count())));
}

TEST(Network, HandComputedConvReluTap) {
  // 4x4 input, one 2x2 conv filter [[1,0],[-1,2]], bias 0.5, then relu.
  Network net({1, 4, 4}, 2);
  net.add_conv(1, 2, 1, 0, {{PostOp::relu, 0}});
  LayerSpec& l = net.layer_mutable(1);
  l.weight = Tensor({1, 1, 2, 2}, {1, 0, -1, 2});
  l.bias = Tensor({1}, {0.5f});

  const Tensor x({1, 1, 4, 4}, {1, 2, 0, 1,  //
                                0, 1, 3, 1,  //
                                2, 0, 1, 0,  //
                                1, 1, 0, 2});
  const auto [logits, taps] = net.forward_with_taps(x, {1});
  (void)logits;
  const Tensor expected({1, 1, 3, 3}, {3.5f, 7.5f, 0.0f,  //
                                       0.0f, 3.5f, 2.5f,  //
                                       3.5f, 0.0f, 5.5f});
  EXPECT_TRUE(taps.features.at(1).bit_equal(expected));
  EXPECT_EQ(taps.dims.at(1), 9);
}

TEST(Network, CompositionIdentityBitLevel) {
  Rng rng(43);
  Network net = toy_cnn6(1, 12, 4, 7);
  const Tensor x = random_tensor({2, 1, 12, 12}, rng, 0.0f, 1.0f);
  std::set<int> all;
  for (int i = 1; i <= net.layer_count(); ++i) all.insert(i);
  const auto [logits, taps] = net.forward_with_taps(x, all);

  Tensor prev = x;
  for (int i = 1; i <= net.layer_count(); ++i) {
    const Tensor recomputed = net.apply_layer(i, prev);
    EXPECT_TRUE(recomputed.bit_equal(taps.features.at(i))) << "layer " << i;
    prev = recomputed;
  }
  EXPECT_TRUE(prev.bit_equal(logits));
}

TEST(Network, FreezeMask) {
  Network net = toy_mlp(6, 5, 2, 3, 3);
  net.set_freeze_mask({1, 2, 3});
  EXPECT_EQ(net.trainable_layers(), (std::vector<int>{1, 2, 3}));

  net.set_freeze_mask({2});
  EXPECT_EQ(net.trainable_layers(), (std::vector<int>{2}));
  EXPECT_TRUE(net.layer(1).frozen);
  EXPECT_FALSE(net.layer(2).frozen);
  EXPECT_TRUE(net.layer(3).frozen);

  EXPECT_THROW(net.set_freeze_mask({}), UsageError);
  EXPECT_THROW(net.set_freeze_mask({7}), UsageError);
}

TEST(Network, SingleCriticalLayerOnElevenLayerNet) {
  Network net = toy_mlp(16, 16, 10, 4, 4);  // 11 layers in total
  ASSERT_EQ(net.layer_count(), 11);
  net.set_freeze_mask({11});
  EXPECT_EQ(net.trainable_layers().size(), 1u);
  const ParamCensus census = net.param_census();
  EXPECT_LT(census.fraction, 0.15);
}

TEST(Network, ParamCensus) {
  Network net = toy_cnn6(1, 12, 4, 5);
  net.unfreeze_all();
  EXPECT_DOUBLE_EQ(net.param_census().fraction, 1.0);

  // Freeze everything except layer 3 and cross-check by summing shapes.
  net.set_freeze_mask({3});
  int64_t expected_total = 0;
  for (int i = 1; i <= net.layer_count(); ++i) {
    const LayerSpec& l = net.layer(i);
    expected_total += shape_numel(l.weight.shape()) + shape_numel(l.bias.shape());
  }
  const ParamCensus census = net.param_census();
  EXPECT_EQ(census.total, expected_total);
  EXPECT_EQ(census.trainable, net.layer(3).param_count());
  EXPECT_DOUBLE_EQ(census.fraction,
                   static_cast<double>(net.layer(3).param_count()) / static_cast<double>(expected_total));

  // All-frozen fraction 0 is only reachable through the layer flags.
  for (int i = 1; i <= net.layer_count(); ++i) net.layer_mutable(i).frozen = true;
  EXPECT_DOUBLE_EQ(net.param_census().fraction, 0.0);
}

TEST(Network, InvalidTapAndInputErrors) {
  Rng rng(44);
  Network net = toy_mlp(4, 4, 1, 2, 6);
  const Tensor x = random_tensor({2, 1, 1, 4}, rng);
  EXPECT_THROW(net.forward_with_taps(x, {9}), UsageError);
  EXPECT_THROW(net.forward(random_tensor({2, 1, 1, 5}, rng)), ShapeError);
}

TEST(Network, GradientRequestValidation) {
  Rng rng(45);
  Network net = toy_mlp(4, 4, 1, 2, 6);
  const Tensor x = random_tensor({2, 1, 1, 4}, rng);
  TapeForward fwd = net.forward_tape(x, {}, false, true);
  const BackwardResult back = fwd.tape.backward(fwd.tape.softmax_cross_entropy(fwd.logits_id, {0, 1}));

  GradientRequest bad;
  bad.wrt_layers = {5};
  EXPECT_THROW(net.gradients(fwd, back, bad), UsageError);

  net.set_freeze_mask({1});
  GradientRequest frozen;
  frozen.wrt_layers = {2};
  EXPECT_THROW(net.gradients(fwd, back, frozen), UsageError);
}

}  // namespace
}  // namespace clat
