#include "emo/autograd.h"
#include "emo/errors.h"
#include "emo/nn.h"
#include "support/gradcheck.h"
#include "support/oracles.h"

#include <gtest/gtest.h>

using namespace emo;
using ag::Mat;
using ag::Var;

namespace {

Mat random_mat(int r, int c, std::uint64_t seed, double sd = 1.0) {
    nn::Rng rng(seed);
    return nn::randn(r, c, sd, rng);
}

}  // namespace

TEST(Autograd, SoftmaxRowsSumToOne) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Mat p = ag::softmax_rows(random_mat(5, 7, seed, 3.0));
        for (int r = 0; r < 5; ++r) EXPECT_NEAR(p.row(r).sum(), 1.0, 1e-12);
        EXPECT_GE(p.minCoeff(), 0.0);
    }
}

TEST(Autograd, MaskedSoftmaxGivesExactZero) {
    Mat logits = random_mat(3, 4, 1, 100.0);
    ag::Mask m(3, 4);
    m << true, false, true, false, false, false, false, true, true, true, true, true;
    Mat p = ag::softmax_rows(logits, &m);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c)
            if (!m(r, c)) EXPECT_EQ(p(r, c), 0.0);
    EXPECT_NEAR(p.row(1).sum(), 1.0, 1e-12);
    EXPECT_EQ(p(1, 3), 1.0);
}

TEST(Autograd, SoftmaxStableForHugeLogits) {
    Mat logits = random_mat(4, 6, 2, 1e4);
    EXPECT_TRUE(ag::all_finite(ag::softmax_rows(logits)));
}

TEST(Autograd, FullyMaskedRowIsRejected) {
    ag::Mask m = ag::Mask::Constant(2, 2, false);
    m(0, 0) = true;
    EXPECT_THROW(ag::softmax_rows(Mat::Zero(2, 2), &m), NumericError);
}

TEST(Autograd, LayerNormMatchesLoopOracle) {
    Mat x = random_mat(4, 6, 3);
    nn::LayerNorm ln(6);
    Mat got = ln.forward(Var::constant(x)).value();
    Mat want = oracle::to_mat(oracle::layer_norm(oracle::to_table(x), ln));
    EXPECT_LT((got - want).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Autograd, GradientsOfPrimitiveOps) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Var a(random_mat(3, 4, seed * 10 + 1, 0.5));
        Var b(random_mat(4, 3, seed * 10 + 2, 0.5));
        Var g(random_mat(1, 3, seed * 10 + 3));
        Var beta(random_mat(1, 3, seed * 10 + 4));
        Mat w = random_mat(3, 3, seed * 10 + 5);
        auto f = [&] {
            Var h = ag::gelu(ag::matmul(a, b));
            h = ag::layer_norm(h, g, beta);
            h = ag::softmax_rows(ag::add(h, ag::transpose(ag::matmul_t(h, h))));
            const Var parts[] = {h, ag::mean_rows(h)};
            return ag::dot_const(ag::slice_rows(ag::concat_rows(parts), 1, 3), w);
        };
        auto res = testsupport::gradcheck(f, {{"a", a}, {"b", b}, {"gamma", g}, {"beta", beta}});
        EXPECT_LT(res.worst_relative_error, 1e-4) << res.worst_name;
    }
}

TEST(Autograd, CrossEntropyAndGatherGradients) {
    Var table(random_mat(6, 4, 9));
    Var proj(random_mat(4, 5, 10));
    const std::vector<int> ids{1, 3, 3, 0};
    const std::vector<int> rows{0, 2, 3};
    const std::vector<int> targets{4, 0, 2};
    auto f = [&] { return ag::cross_entropy_rows(ag::matmul(ag::gather_rows(table, ids), proj), rows, targets); };
    auto res = testsupport::gradcheck(f, {{"table", table}, {"proj", proj}});
    EXPECT_LT(res.worst_relative_error, 1e-4) << res.worst_name;
}

TEST(Autograd, ConstantsBuildNoTape) {
    Var a = Var::constant(Mat::Ones(2, 2));
    Var b = ag::matmul(a, a);
    EXPECT_FALSE(b.requires_grad());
    EXPECT_TRUE(b.node()->parents.empty());
}

TEST(Autograd, FlattenIsRowMajor) {
    Mat m(2, 2);
    m << 1, 2, 3, 4;
    Mat f = ag::flatten_row(Var::constant(m)).value();
    ASSERT_EQ(f.cols(), 4);
    EXPECT_EQ(f(0, 1), 2.0);
    EXPECT_EQ(f(0, 2), 3.0);
}
