#include "emo/errors.h"
#include "emo/nn.h"
#include "support/gradcheck.h"
#include "support/oracles.h"

#include <gtest/gtest.h>

using namespace emo;
using ag::Mat;
using ag::Var;

TEST(Linear, AdapterStartsAsIdentityOfBase) {
    nn::Rng rng(1);
    nn::Linear lin(16, 16, rng);
    Var x = Var::constant(nn::randn(5, 16, 1.0, rng));
    Mat before = lin.forward(x).value();
    lin.attach_adapter(4, 8.0, rng);
    Mat after = lin.forward(x).value();
    EXPECT_LT((before - after).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Linear, AdapterParameterCount) {
    nn::Rng rng(2);
    nn::Linear lin(16, 16, rng);
    lin.attach_adapter(4, 8.0, rng);
    nn::ParamList ps;
    lin.collect_adapter(ps, "lin");
    EXPECT_EQ(nn::parameter_count(ps), 2u * 4u * 16u);
}

TEST(Linear, AdapterRankAboveWeightDimensionIsConfigError) {
    nn::Rng rng(3);
    nn::Linear lin(8, 16, rng);
    EXPECT_THROW(lin.attach_adapter(9, 8.0, rng), ConfigError);
    EXPECT_THROW(lin.attach_adapter(0, 8.0, rng), ConfigError);
    EXPECT_NO_THROW(lin.attach_adapter(8, 8.0, rng));
}

TEST(Linear, AdapterForwardMatchesOracleAfterUpdate) {
    nn::Rng rng(4);
    nn::Linear lin(6, 5, rng);
    lin.attach_adapter(2, 4.0, rng);
    lin.adapter()->b.mutable_value() = nn::randn(5, 2, 1.0, rng);
    Mat x = nn::randn(3, 6, 1.0, rng);
    Mat got = lin.forward(Var::constant(x)).value();
    Mat want = oracle::to_mat(oracle::affine(oracle::to_table(x), lin));
    EXPECT_LT((got - want).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Attention, MatchesLoopOracle) {
    nn::Rng rng(5);
    nn::MultiHeadAttention mha(8, 2, rng);
    Mat q = nn::randn(3, 8, 1.0, rng);
    Mat kv = nn::randn(4, 8, 1.0, rng);
    Mat got = mha.forward(Var::constant(q), Var::constant(kv)).value();
    Mat want = oracle::to_mat(oracle::attention(oracle::to_table(q), oracle::to_table(kv), mha));
    EXPECT_LT((got - want).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Attention, MaskedKeysGetZeroMassAndDoNotMatter) {
    nn::Rng rng(6);
    nn::MultiHeadAttention mha(8, 2, rng);
    Mat q = nn::randn(3, 8, 1.0, rng);
    Mat kv = nn::randn(5, 8, 1.0, rng);
    ag::Mask m = ag::Mask::Constant(3, 5, true);
    m.col(1).setConstant(false);
    m.col(4).setConstant(false);
    nn::AttentionTrace trace;
    Mat a = mha.forward(Var::constant(q), Var::constant(kv), &m, &trace).value();
    for (const auto& p : trace.probs) {
        EXPECT_EQ(p.col(1).cwiseAbs().sum(), 0.0);
        EXPECT_EQ(p.col(4).cwiseAbs().sum(), 0.0);
    }
    kv.row(1).setConstant(1e6);
    kv.row(4) = nn::randn(1, 8, 50.0, rng);
    Mat b = mha.forward(Var::constant(q), Var::constant(kv), &m).value();
    EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Attention, MaskMeanMatchesOracle) {
    nn::Rng rng(7);
    nn::MultiHeadAttention mha(4, 2, rng);
    Mat q = nn::randn(2, 4, 1.0, rng);
    Mat kv = nn::randn(3, 4, 1.0, rng);
    std::vector<ag::Mask> masks(2, ag::Mask::Constant(2, 3, true));
    masks[0](0, 2) = false;
    masks[0](1, 0) = false;
    masks[1](0, 0) = false;
    masks[1](0, 1) = false;
    std::vector<std::vector<std::vector<bool>>> om(2, std::vector<std::vector<bool>>(2, std::vector<bool>(3)));
    for (int m = 0; m < 2; ++m)
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 3; ++j) om[m][i][j] = masks[m](i, j);
    Mat got = mha.forward_mask_mean(Var::constant(q), Var::constant(kv), masks).value();
    Mat want = oracle::to_mat(oracle::attention(oracle::to_table(q), oracle::to_table(kv), mha, om));
    EXPECT_LT((got - want).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Attention, WidthNotDivisibleByHeadsIsConfigError) {
    nn::Rng rng(8);
    EXPECT_THROW(nn::MultiHeadAttention(6, 4, rng), ConfigError);
}

TEST(Attention, GradientCheck) {
    nn::Rng rng(9);
    nn::MultiHeadAttention mha(4, 2, rng);
    Var q(nn::randn(3, 4, 1.0, rng));
    Var kv(nn::randn(2, 4, 1.0, rng));
    Mat w = nn::randn(3, 4, 1.0, rng);
    auto f = [&] { return ag::dot_const(mha.forward(q, kv), w); };
    auto res = testsupport::gradcheck(f, {{"q", q}, {"kv", kv}, {"wq", mha.q().weight()}, {"wo", mha.o().weight()}});
    EXPECT_LT(res.worst_relative_error, 1e-4) << res.worst_name;
}

TEST(Mlp, DepthOneIsSingleAffineMap) {
    nn::Rng rng(10);
    nn::Mlp m({4, 3}, rng);
    ASSERT_EQ(m.layers().size(), 1u);
    Mat x = nn::randn(2, 4, 1.0, rng);
    Mat got = m.forward(Var::constant(x)).value();
    Mat want = x * m.layers()[0].weight().value();
    want.rowwise() += m.layers()[0].bias().value().row(0);
    EXPECT_LT((got - want).cwiseAbs().maxCoeff(), 1e-12);
}
