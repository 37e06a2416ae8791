#include <gtest/gtest.h>

#include "oracles.hpp"
#include "tcsa/common.hpp"
#include "tcsa/fusion_head.hpp"
#include "tcsa/losses.hpp"
#include "tcsa/model.hpp"

using namespace tcsa;
using namespace tcsa::fusion;

namespace {

NetworkConfig tiny_net(int64_t text_dim = 16) {
  NetworkConfig cfg;
  cfg.backbone.name = "tiny";
  cfg.backbone.tiny_width = 4;
  cfg.text_dim = text_dim;
  return cfg;
}

}  // namespace

TEST(GlobalVisual, PoolsToOneToken) {
  GlobalVisual gv;
  EXPECT_EQ(gv->forward(torch::randn({3, 2048, 4, 5})).sizes(), (std::vector<int64_t>{3, 1, 256}));
}

TEST(FuseQuery, ShapeAndNonNegative) {
  FuseQuery fq;
  auto out = fq->forward(torch::randn({2, 1, 256}), torch::randn({5, 256}));
  EXPECT_EQ(out.sizes(), (std::vector<int64_t>{2, 5, 256}));
  EXPECT_GE(out.min().item<float>(), 0.0f);
}

TEST(FuseQuery, WidthMismatchRejected) {
  FuseQuery fq;
  try {
    fq->forward(torch::randn({2, 1, 256}), torch::randn({5, 128}));
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("t_class must be C x 256"), std::string::npos);
  }
}

TEST(MultiHeadAttention, SingleKeyGetsWeightOne) {
  MultiHeadAttention mha(256, 4);
  auto q = torch::randn({2, 5, 256});
  auto kv = torch::randn({2, 1, 256});
  auto out = mha->forward(q, kv, kv);
  EXPECT_EQ(out.weights.sizes(), (std::vector<int64_t>{2, 4, 5, 1}));
  EXPECT_TRUE(torch::equal(out.weights, torch::ones_like(out.weights)));
}

TEST(MultiHeadAttention, ZeroKeyValueGivesProjectedValueBias) {
  MultiHeadAttention mha(256, 4);
  auto zeros = torch::zeros({1, 1, 256});
  auto out = mha->forward(torch::randn({1, 3, 256}), zeros, zeros);
  auto expected = mha->out_proj->forward(mha->v_proj->bias.view({1, 256}));
  for (int64_t c = 0; c < 3; ++c) EXPECT_TRUE(torch::allclose(out.output[0][c], expected[0], 1e-5, 1e-6));
}

TEST(MultiHeadAttention, MatchesReferenceWithSeveralKeys) {
  MultiHeadAttention mha(8, 2);
  mha->to(torch::kDouble);
  torch::manual_seed(4);
  auto q = torch::randn({1, 3, 8}, torch::kDouble);
  auto kv = torch::randn({1, 4, 8}, torch::kDouble);
  auto out = mha->forward(q, kv, kv).output;
  auto Q = mha->q_proj->forward(q)[0], K = mha->k_proj->forward(kv)[0], V = mha->v_proj->forward(kv)[0];
  auto ctx = torch::zeros({3, 8}, torch::kDouble);
  for (int64_t h = 0; h < 2; ++h) {
    auto sl = torch::indexing::Slice(h * 4, h * 4 + 4);
    auto qh = Q.index({torch::indexing::Slice(), sl});
    auto kh = K.index({torch::indexing::Slice(), sl});
    auto vh = V.index({torch::indexing::Slice(), sl});
    for (int64_t i = 0; i < 3; ++i) {
      std::vector<double> s(4);
      double mx = -1e300;
      for (int64_t j = 0; j < 4; ++j) {
        s[j] = (qh[i] * kh[j]).sum().item<double>() / 2.0;
        mx = std::max(mx, s[j]);
      }
      double z = 0;
      for (auto& v : s) z += (v = std::exp(v - mx));
      for (int64_t j = 0; j < 4; ++j) {
        ctx.index_put_({i, sl}, ctx.index({i, sl}) + vh[j] * (s[j] / z));
      }
    }
  }
  auto expected = mha->out_proj->forward(ctx);
  EXPECT_TRUE(torch::allclose(out[0], expected, 1e-10, 1e-12));
}

TEST(TextVisionFusion, WithoutResidualIgnoresText) {
  TextVisionFusion f(4, false);
  auto f_high = torch::randn({2, 2048, 3, 3});
  auto a = f->forward(f_high, torch::randn({5, 256}));
  auto b = f->forward(f_high, torch::randn({5, 256}));
  EXPECT_TRUE(torch::allclose(a.f_fused, b.f_fused, 1e-6, 1e-6));
}

TEST(TextVisionFusion, ResidualMakesTextMatter) {
  TextVisionFusion f(4, true);
  auto f_high = torch::randn({2, 2048, 3, 3});
  auto a = f->forward(f_high, torch::randn({5, 256}));
  auto b = f->forward(f_high, torch::randn({5, 256}));
  EXPECT_GT((a.f_fused - b.f_fused).abs().max().item<float>(), 1e-4f);
  EXPECT_EQ(a.f_fused.sizes(), (std::vector<int64_t>{2, 5, 256}));
}

TEST(DynamicParams, SplitLayout) {
  auto theta = torch::arange(2 * kDynamicParamCount, torch::kDouble).view({2, kDynamicParamCount});
  auto p = split_dynamic_params(theta);
  EXPECT_EQ(kDynamicParamCount, 32896);
  EXPECT_EQ(p.weight.sizes(), (std::vector<int64_t>{2, 128, 256, 1, 1}));
  EXPECT_EQ(p.bias.sizes(), (std::vector<int64_t>{2, 128}));
  EXPECT_EQ(p.weight[1][3][7][0][0].item<double>(), kDynamicParamCount + 3 * 256 + 7);
  EXPECT_EQ(p.bias[0][5].item<double>(), 32768 + 5);
  EXPECT_THROW(split_dynamic_params(torch::zeros({1, 100})), ConfigError);
}

TEST(DynamicConv, MatchesLoopOracle) {
  torch::manual_seed(2);
  auto f_sem = torch::randn({2, 256, 3, 4}, torch::kDouble);
  auto p = split_dynamic_params(torch::randn({2, kDynamicParamCount}, torch::kDouble));
  auto got = dynamic_conv(f_sem, p);
  auto expected = oracle::dynamic_conv(f_sem, p.weight, p.bias);
  EXPECT_LT((got - expected).abs().max().item<double>(), 1e-9);
}

TEST(DynamicConv, SamplesUseTheirOwnKernels) {
  torch::manual_seed(3);
  auto f_sem = torch::randn({2, 256, 2, 2});
  auto theta = torch::randn({2, kDynamicParamCount});
  auto base = dynamic_conv(f_sem, split_dynamic_params(theta));
  auto changed = theta.clone();
  changed[1].add_(1.0);
  auto out = dynamic_conv(f_sem, split_dynamic_params(changed));
  EXPECT_TRUE(torch::equal(out[0], base[0]));
  EXPECT_FALSE(torch::equal(out[1], base[1]));
}

TEST(SegHead, UpsamplesToInput) {
  SegHead head(5);
  EXPECT_EQ(head->forward(torch::randn({1, 128, 4, 4}), 30, 31).sizes(), (std::vector<int64_t>{1, 5, 30, 31}));
}

TEST(FullModel, ChangingTextChangesOutput) {
  SegmentationModel model(tiny_net());
  torch::manual_seed(6);
  auto images = torch::randn({1, 1, 16, 16});
  auto a = model->forward(images, torch::randn({5, 16})).logits;
  auto b = model->forward(images, torch::randn({5, 16})).logits;
  EXPECT_GT((a - b).abs().max().item<float>(), 1e-6f);
}

TEST(FullModel, PermutingTextRowsLeavesOutputUnchanged) {
  // The controller averages over classes, so theta is a symmetric function of the rows.
  SegmentationModel model(tiny_net());
  model->to(torch::kDouble);
  torch::manual_seed(7);
  auto images = torch::randn({1, 1, 16, 16}, torch::kDouble);
  auto text = torch::randn({5, 16}, torch::kDouble);
  auto perm = torch::tensor({3, 1, 4, 0, 2}, torch::kLong);
  auto a = model->forward(images, text).logits;
  auto b = model->forward(images, text.index_select(0, perm)).logits;
  EXPECT_LT((a - b).abs().max().item<double>(), 1e-9);
}

TEST(FullModel, SamplesAreIndependent) {
  SegmentationModel model(tiny_net());
  model->to(torch::kDouble);
  torch::manual_seed(8);
  auto images = torch::randn({3, 1, 16, 16}, torch::kDouble);
  auto text = torch::randn({5, 16}, torch::kDouble);
  auto batched = model->forward(images, text).logits;
  for (int64_t i = 0; i < 3; ++i) {
    auto single = model->forward(images.narrow(0, i, 1), text).logits;
    EXPECT_LT((batched.narrow(0, i, 1) - single).abs().max().item<double>(), 1e-9) << i;
  }
}

TEST(FullModel, FusionGradientsMatchFiniteDifferences) {
  SegmentationModel model(tiny_net());
  model->to(torch::kDouble);
  torch::manual_seed(9);
  auto images = torch::randn({2, 1, 16, 16}, torch::kDouble);
  auto text = torch::randn({5, 16}, torch::kDouble);
  auto labels = torch::randint(0, 5, {2, 16, 16}, torch::kLong);
  auto loss = [&] { return losses::seg_loss(model->forward(images, text).probs(), labels); };
  std::vector<torch::Tensor> params{model->projection->linear->weight, model->fusion->fuse_query->linear->weight,
                                    model->fusion->attention->v_proj->weight,
                                    model->fusion->refine->ptr<torch::nn::LinearImpl>(0)->weight,
                                    model->controller->mlp->ptr<torch::nn::LinearImpl>(2)->bias};
  uint64_t seed = 0;
  for (auto& p : params) {
    auto samples = oracle::gradient_samples(loss, p, 4, seed++, 1e-6);
    double worst = 0;
    EXPECT_TRUE(oracle::gradients_match(samples, 1e-4, 1e-10, &worst)) << "param " << seed - 1 << " worst " << worst;
  }
}
