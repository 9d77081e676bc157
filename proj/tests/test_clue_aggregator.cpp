#include "emo/clue_aggregator.h"
#include "emo/errors.h"
#include "support/gradcheck.h"
#include "support/oracles.h"

#include <gtest/gtest.h>

using namespace emo;
using ag::Mat;
using ag::Var;

namespace {

ClueAggregatorConfig small_config() {
    ClueAggregatorConfig c;
    c.width = 8;
    c.queries = 4;
    c.blocks = 2;
    c.heads = 2;
    c.vocab_size = 12;
    return c;
}

}  // namespace

TEST(ClueAggregator, OutputShape) {
    nn::Rng rng(1);
    ClueAggregatorConfig cfg;
    cfg.vocab_size = 20;
    ClueAggregator agg(cfg, rng);
    const std::vector<int> ids{1, 2, 3};
    Var out = agg.aggregate_queries(agg.embed_instruction(ids), Var::constant(nn::randn(16, 64, 1.0, rng)),
                                    Var::constant(nn::randn(16, 64, 1.0, rng)));
    EXPECT_EQ(out.rows(), 32);
    EXPECT_EQ(out.cols(), 64);
    EXPECT_TRUE(ag::all_finite(out.value()));
}

TEST(ClueAggregator, ZeroBranchOutputsGiveIdentity) {
    nn::Rng rng(2);
    ClueAggregator agg(small_config(), rng);
    agg.zero_branch_outputs();
    const std::vector<int> ids{4, 5};
    Mat out = agg.aggregate_queries(agg.embed_instruction(ids), Var::constant(nn::randn(3, 8, 1.0, rng)),
                                    Var::constant(nn::randn(4, 8, 1.0, rng)))
                  .value();
    EXPECT_EQ((out - agg.queries().value()).cwiseAbs().maxCoeff(), 0.0);
}

TEST(ClueAggregator, InstructionChangesQueries) {
    nn::Rng rng(3);
    ClueAggregator agg(small_config(), rng);
    Var vis = Var::constant(nn::randn(3, 8, 1.0, rng));
    Var fac = Var::constant(nn::randn(4, 8, 1.0, rng));
    const std::vector<int> a{1, 2, 3};
    const std::vector<int> b{7, 8};
    Mat qa = agg.aggregate_queries(agg.embed_instruction(a), vis, fac).value();
    Mat qb = agg.aggregate_queries(agg.embed_instruction(b), vis, fac).value();
    EXPECT_GT((qa - qb).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(ClueAggregator, ChannelMismatchIsConfigError) {
    nn::Rng rng(4);
    ClueAggregator agg(small_config(), rng);
    EXPECT_THROW(agg.aggregate_queries(Var(), Var::constant(Mat::Zero(3, 6)), Var()), ConfigError);
    EXPECT_THROW(agg.aggregate_queries(Var(), Var::constant(Mat::Zero(3, 8)), Var::constant(Mat::Zero(2, 5))),
                 ConfigError);
}

TEST(ContextToken, IdenticalTokensReturnThatToken) {
    nn::Rng rng(5);
    Mat v = nn::randn(1, 6, 1.0, rng);
    Mat x = v.replicate(5, 1);
    Mat out = context_token(Var::constant(nn::randn(3, 6, 1.0, rng)), Var::constant(x)).value();
    EXPECT_LT((out - v).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ContextToken, HandComputedTwoTokenCase) {
    Mat q = Mat::Zero(1, 1);
    Mat x(2, 1);
    x << 1.0, 3.0;
    Mat w;
    Mat out = context_token(Var::constant(q), Var::constant(x), &w).value();
    EXPECT_DOUBLE_EQ(w(0, 0), 0.5);
    EXPECT_DOUBLE_EQ(w(0, 1), 0.5);
    EXPECT_DOUBLE_EQ(out(0, 0), 2.0);
}

TEST(ContextToken, WeightsAreRowStochasticAndOutputInConvexHull) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        nn::Rng rng(seed);
        const int m = 1 + seed % 5, n = 1 + (seed / 5) % 6, c = 1 + seed % 7;
        Mat q = nn::randn(m, c, 2.0, rng);
        Mat x = nn::randn(n, c, 2.0, rng);
        Mat w;
        Mat out = context_token(Var::constant(q), Var::constant(x), &w).value();
        for (int r = 0; r < m; ++r) EXPECT_NEAR(w.row(r).sum(), 1.0, 1e-6);
        for (int j = 0; j < c; ++j) {
            EXPECT_GE(out(0, j), x.col(j).minCoeff() - 1e-5);
            EXPECT_LE(out(0, j), x.col(j).maxCoeff() + 1e-5);
        }
    }
}

TEST(ContextToken, ShiftingEveryLogitLeavesOutputUnchanged) {
    // An extra coordinate of ones in X and a constant in Q adds that constant to every logit.
    nn::Rng rng(6);
    Mat q = nn::randn(3, 4, 1.0, rng);
    Mat x = nn::randn(5, 4, 1.0, rng);
    Mat base = context_token(Var::constant(q), Var::constant(x)).value();
    Mat qs(3, 5), xs(5, 5);
    qs << q, Mat::Constant(3, 1, 37.5);
    xs << x, Mat::Ones(5, 1);
    Mat shifted = context_token(Var::constant(qs), Var::constant(xs)).value();
    EXPECT_LT((shifted.leftCols(4) - base).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(ContextToken, MatchesLoopOracle) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        nn::Rng rng(100 + seed);
        Mat q = nn::randn(1 + seed % 4, 8, 1.0, rng);
        Mat x = nn::randn(1 + (seed / 4) % 4, 8, 1.0, rng);
        Mat got = context_token(Var::constant(q), Var::constant(x)).value();
        Mat want = oracle::to_mat(oracle::context_token(oracle::to_table(q), oracle::to_table(x)));
        EXPECT_LT((got - want).cwiseAbs().maxCoeff(), 1e-6);
    }
}

TEST(ContextToken, EmptyVisualIsInputError) {
    EXPECT_THROW(context_token(Var::constant(Mat::Zero(2, 3)), Var::constant(Mat::Zero(0, 3))), InputError);
}

TEST(ContextToken, GradientCheck) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        nn::Rng rng(200 + seed);
        Var q(nn::randn(3, 4, 1.0, rng));
        Var x(nn::randn(4, 4, 1.0, rng));
        Mat w = nn::randn(1, 4, 1.0, rng);
        auto res = testsupport::gradcheck([&] { return ag::dot_const(context_token(q, x), w); },
                                          {{"Q", q}, {"X", x}});
        EXPECT_LT(res.worst_relative_error, 1e-4) << "seed " << seed << " " << res.worst_name;
    }
}

TEST(ClueAggregator, GradientCheck) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        nn::Rng rng(300 + seed);
        ClueAggregator agg(small_config(), rng);
        Var instr(nn::randn(2, 8, 1.0, rng));
        Var vis(nn::randn(3, 8, 1.0, rng));
        Var fac(nn::randn(2, 8, 1.0, rng));
        Mat w = nn::randn(1, 8, 1.0, rng);
        nn::ParamList ps;
        agg.collect(ps, "agg");
        std::vector<std::pair<std::string, Var>> inputs{
            {"instruction", instr}, {"visual", vis}, {"facial", fac}, {"queries", agg.queries()}};
        for (const auto& p : ps)
            if (p.name.find("block1.vis_attn.q.weight") != std::string::npos ||
                p.name.find("block0.ffn.0.weight") != std::string::npos)
                inputs.emplace_back(p.name, p.var);
        auto f = [&] { return ag::dot_const(context_token(agg.aggregate_queries(instr, vis, fac), vis), w); };
        auto res = testsupport::gradcheck(f, inputs);
        EXPECT_LT(res.worst_relative_error, 1e-4) << "seed " << seed << " " << res.worst_name;
    }
}
