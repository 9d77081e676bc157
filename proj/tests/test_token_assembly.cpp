#include "emo/errors.h"
#include "emo/llm.h"
#include "emo/token_assembly.h"
#include "support/oracles.h"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

using namespace emo;
using ag::Mat;
using ag::Var;

namespace {

std::string golden(const std::string& name) {
    std::ifstream in(std::string(EMO_GOLDEN_DIR) + "/" + name);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

LandmarkSet canonical_landmarks() {
    LandmarkSet lm;
    for (const auto& p : landmarks::canonical_shape()) {
        lm.points.push_back(p);
        lm.visible.push_back(true);
    }
    return lm;
}

Tokenizer small_tokenizer() {
    Tokenizer t;
    const std::vector<std::string> texts{"what is the expression ? happiness sadness anger",
                                         std::string(kAgrPromptPrefix) + " adult , female , group-a .",
                                         "the person looks calm"};
    t.fit(texts);
    return t;
}

FrameTokenTriple frame(double v, int d) {
    return {Var::constant(Mat::Constant(1, d, v)), Var::constant(Mat::Constant(1, d, v + 0.1)),
            Var::constant(Mat::Constant(1, d, v + 0.2))};
}

EmbedFn table_embed(int vocab, int d) {
    auto table = std::make_shared<Mat>(Mat::Zero(vocab, d));
    for (int i = 0; i < vocab; ++i) table->row(i).setConstant(1000.0 + i);
    return [table](std::span<const int> ids) { return ag::gather_rows(Var::constant(*table), ids); };
}

}  // namespace

// --- tokenizer -------------------------------------------------------------------

TEST(Tokenizer, SplitsWordsAndPunctuation) {
    auto w = Tokenizer::split("My choice is: Happiness, group-A isn't.");
    const std::vector<std::string> want{"my", "choice", "is", ":", "happiness", ",", "group-a", "isn't", "."};
    EXPECT_EQ(w, want);
}

TEST(Tokenizer, DecodeAttachesPunctuation) {
    Tokenizer t;
    const std::vector<std::string> texts{"My choice is: happiness."};
    t.fit(texts);
    EXPECT_EQ(t.decode(t.encode("My choice is: happiness.")), "my choice is: happiness.");
}

TEST(Tokenizer, UnknownWordsMapToUnk) {
    Tokenizer t;
    auto ids = t.encode("never seen");
    EXPECT_EQ(ids, (std::vector<int>{Tokenizer::kUnk, Tokenizer::kUnk}));
}

TEST(Tokenizer, SaveLoadKeepsIds) {
    Tokenizer t = small_tokenizer();
    auto path = std::filesystem::temp_directory_path() / "emo_tok.json";
    t.save(path);
    Tokenizer back = Tokenizer::load(path);
    EXPECT_EQ(back.size(), t.size());
    EXPECT_EQ(back.encode("happiness anger"), t.encode("happiness anger"));
}

// --- projectors -----------------------------------------------------------------

TEST(Projector, ZeroWeightsGiveZeroTokens) {
    nn::Rng rng(1);
    ProjectorConfig cfg{8, 8, landmarks::kCount, 6, 2};
    FrameProjector p(cfg, rng);
    for (nn::Mlp* m : {&p.context_mlp(), &p.visual_mlp(), &p.landmark_mlp()})
        for (auto& l : m->layers()) l.zero();
    auto lm = canonical_landmarks();
    auto t = p.project(Var::constant(nn::randn(1, 8, 1.0, rng)), Var::constant(nn::randn(1, 8, 1.0, rng)), &lm);
    for (const Var* v : {&t.context, &t.visual, &t.landmark}) EXPECT_EQ(v->value().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Projector, IdentityProjectionPassesContextThrough) {
    nn::Rng rng(2);
    FrameProjector p(ProjectorConfig{8, 8, landmarks::kCount, 8, 1}, rng);
    p.context_mlp().layers()[0].weight().mutable_value() = Mat::Identity(8, 8);
    p.context_mlp().layers()[0].bias().mutable_value().setZero();
    Mat c = nn::randn(1, 8, 1.0, rng);
    auto t = p.project(Var::constant(c), Var::constant(nn::randn(1, 8, 1.0, rng)), nullptr);
    EXPECT_EQ((t.context.value() - c).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_FALSE(t.landmark.defined());
}

TEST(Projector, MatchesAffineChainOracle) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        nn::Rng rng(10 + seed);
        FrameProjector p(ProjectorConfig{8, 8, landmarks::kCount, 6, 2}, rng);
        Mat c = nn::randn(1, 8, 1.0, rng);
        Mat v = nn::randn(1, 8, 1.0, rng);
        auto lm = canonical_landmarks();
        auto t = p.project(Var::constant(c), Var::constant(v), &lm);
        Mat lm_row(1, 2 * landmarks::kCount);
        for (int i = 0; i < landmarks::kCount; ++i) {
            lm_row(0, 2 * i) = lm.points[i].x;
            lm_row(0, 2 * i + 1) = lm.points[i].y;
        }
        auto want_c = oracle::to_mat(oracle::mlp(oracle::to_table(c), p.context_mlp()));
        auto want_v = oracle::to_mat(oracle::mlp(oracle::to_table(v), p.visual_mlp()));
        auto want_l = oracle::to_mat(oracle::mlp(oracle::to_table(lm_row), p.landmark_mlp()));
        EXPECT_LT((t.context.value() - want_c).cwiseAbs().maxCoeff(), 1e-6);
        EXPECT_LT((t.visual.value() - want_v).cwiseAbs().maxCoeff(), 1e-6);
        EXPECT_LT((t.landmark.value() - want_l).cwiseAbs().maxCoeff(), 1e-6);
    }
}

TEST(Projector, ProjectorsDoNotShareWeights) {
    nn::Rng rng(3);
    FrameProjector p(ProjectorConfig{8, 8, landmarks::kCount, 8, 2}, rng);
    EXPECT_NE(p.context_mlp().layers()[0].weight().node(), p.visual_mlp().layers()[0].weight().node());
    Mat x = nn::randn(1, 8, 1.0, rng);
    auto t = p.project(Var::constant(x), Var::constant(x), nullptr);
    EXPECT_GT((t.context.value() - t.visual.value()).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Projector, DimensionMismatchIsConfigError) {
    nn::Rng rng(4);
    FrameProjector p(ProjectorConfig{8, 8, landmarks::kCount, 8, 2}, rng);
    EXPECT_THROW(p.project(Var::constant(Mat::Zero(1, 7)), Var::constant(Mat::Zero(1, 8)), nullptr), ConfigError);
    LandmarkSet few;
    few.points.resize(5);
    few.visible.resize(5, true);
    EXPECT_THROW(p.project(Var::constant(Mat::Zero(1, 8)), Var::constant(Mat::Zero(1, 8)), &few), ConfigError);
}

// --- attribute prompt ------------------------------------------------------------

TEST(AgrPrompt, GoldenFile) {
    AGRAttributes agr{"adult", "female", "group-A", {1.0, 1.0, 1.0}};
    EXPECT_EQ(build_agr_prompt(agr), golden("agr_prompt_adult_female_group-A.txt"));
}

TEST(AgrPrompt, PrefixIsBitExact) {
    const std::string prefix =
        "According to the specific question, you are allowed to use or partially use the following information:";
    EXPECT_EQ(std::string(kAgrPromptPrefix), prefix);
    for (const auto& age : AgrVocabulary::ages())
        for (const auto& race : AgrVocabulary::races()) {
            auto s = build_agr_prompt({age, "male", race, {0.5, 0.5, 0.5}});
            EXPECT_EQ(s.rfind(prefix, 0), 0u);
            EXPECT_EQ(s.substr(prefix.size()), " " + age + ", male, " + race + ".");
        }
}

TEST(AgrPrompt, DisabledIsEmpty) {
    EXPECT_EQ(build_agr_prompt({"adult", "female", "group-A", {1, 1, 1}}, false), "");
}

// --- sequence assembly -------------------------------------------------------------

TEST(Assembly, FiveFramesGiveFifteenLeadingFramePositions) {
    Tokenizer tok = small_tokenizer();
    std::vector<FrameTokenTriple> frames;
    for (int t = 0; t < 5; ++t) frames.push_back(frame(t, 4));
    auto seq = assemble_sequence(frames, "", "what is the expression ?", std::string("happiness"), tok,
                                 table_embed(tok.size(), 4));
    EXPECT_EQ(seq.count(Segment::Frame), 15);
    for (int i = 0; i < 15; ++i) EXPECT_EQ(seq.segment_map[i], Segment::Frame);
    // Per-frame order is context, visual, landmark, in timestamp order.
    for (int t = 0; t < 5; ++t) {
        EXPECT_DOUBLE_EQ(seq.embeddings.value()(3 * t, 0), t);
        EXPECT_DOUBLE_EQ(seq.embeddings.value()(3 * t + 1, 0), t + 0.1);
        EXPECT_DOUBLE_EQ(seq.embeddings.value()(3 * t + 2, 0), t + 0.2);
    }
    EXPECT_EQ(seq.embeddings.rows(), seq.length());
}

TEST(Assembly, OrderIsFramesPromptQuestionAnswer) {
    Tokenizer tok = small_tokenizer();
    AGRAttributes agr{"adult", "female", "group-A", {1, 1, 1}};
    auto seq = assemble_sequence({frame(0, 4)}, build_agr_prompt(agr), "what is the expression ?",
                                 std::string("happiness"), tok, table_embed(tok.size(), 4));
    std::vector<Segment> order;
    for (auto s : seq.segment_map)
        if (order.empty() || order.back() != s) order.push_back(s);
    EXPECT_EQ(order, (std::vector<Segment>{Segment::Frame, Segment::Prompt, Segment::Question, Segment::Answer}));
    EXPECT_EQ(seq.count(Segment::Answer), 2);  // "happiness" and <eos>
    EXPECT_EQ(seq.token_ids.back(), Tokenizer::kEos);
    for (int i = 0; i < seq.length(); ++i) EXPECT_EQ(seq.answer_mask[i], seq.segment_map[i] == Segment::Answer);
    // Text rows carry the embedding of their token id.
    for (int i = 3; i < seq.length(); ++i) EXPECT_DOUBLE_EQ(seq.embeddings.value()(i, 0), 1000.0 + seq.token_ids[i]);
}

TEST(Assembly, InferenceHasNoAnswerPositions) {
    Tokenizer tok = small_tokenizer();
    auto seq = assemble_sequence({frame(0, 4)}, "", "what is the expression ?", std::nullopt, tok,
                                 table_embed(tok.size(), 4));
    for (bool b : seq.answer_mask) EXPECT_FALSE(b);
}

TEST(Assembly, DescriptionFollowsQuestionAsPrompt) {
    Tokenizer tok = small_tokenizer();
    auto seq = assemble_sequence({frame(0, 4)}, "", "what is the expression ?", std::nullopt, tok,
                                 table_embed(tok.size(), 4), "the person looks calm");
    ASSERT_EQ(seq.segment_map.back(), Segment::Prompt);
    EXPECT_EQ(seq.count(Segment::Prompt), 4);
    EXPECT_EQ(seq.segment_map[seq.length() - 5], Segment::Question);
}

TEST(Assembly, EmptyTrainingAnswerIsInputError) {
    Tokenizer tok = small_tokenizer();
    EXPECT_THROW(assemble_sequence({frame(0, 4)}, "", "what ?", std::string(""), tok, table_embed(tok.size(), 4)),
                 InputError);
    EXPECT_THROW(assemble_sequence({}, "", "what ?", std::nullopt, tok, table_embed(tok.size(), 4)), InputError);
}

TEST(Assembly, MultiTurnMasksEveryAssistantTurn) {
    Tokenizer tok = small_tokenizer();
    std::vector<Turn> turns{{"human", "what is the expression ?"},
                            {"assistant", "happiness"},
                            {"human", "the person ?"},
                            {"assistant", "the person looks calm"}};
    auto seq = assemble_sequence({frame(0, 4)}, "", turns, tok, table_embed(tok.size(), 4));
    EXPECT_EQ(seq.count(Segment::Answer), 2 + 5);
    EXPECT_THROW(assemble_sequence({frame(0, 4)}, "", {{"assistant", "x"}}, tok, table_embed(tok.size(), 4)),
                 InputError);
}

TEST(Assembly, Deterministic) {
    Tokenizer tok = small_tokenizer();
    auto a = assemble_sequence({frame(1, 4), frame(2, 4)}, "", "what ?", std::string("anger"), tok,
                               table_embed(tok.size(), 4));
    auto b = assemble_sequence({frame(1, 4), frame(2, 4)}, "", "what ?", std::string("anger"), tok,
                               table_embed(tok.size(), 4));
    EXPECT_EQ(a.token_ids, b.token_ids);
    EXPECT_EQ((a.embeddings.value() - b.embeddings.value()).cwiseAbs().maxCoeff(), 0.0);
}

// --- loss ----------------------------------------------------------------------------

namespace {

TokenSequence toy_sequence(const std::vector<int>& ids, const std::vector<bool>& answer) {
    TokenSequence s;
    s.token_ids = ids;
    s.answer_mask = answer;
    for (bool a : answer) s.segment_map.push_back(a ? Segment::Answer : Segment::Question);
    return s;
}

}  // namespace

TEST(Loss, UniformLogitsGiveLogVocab) {
    auto seq = toy_sequence({-1, 4, 2, 7}, {false, false, true, true});
    Var logits = Var::constant(Mat::Constant(4, 9, 0.3));
    EXPECT_NEAR(autoregressive_loss(seq, logits).item(), std::log(9.0), 1e-12);
}

TEST(Loss, CertainGoldGivesZero) {
    auto seq = toy_sequence({-1, 5}, {false, true});
    Mat l = Mat::Zero(2, 6);
    l(0, 5) = 60.0;
    EXPECT_NEAR(autoregressive_loss(seq, Var::constant(l)).item(), 0.0, 1e-6);
}

TEST(Loss, TwoAnswerTokensHandComputed) {
    auto seq = toy_sequence({-1, 0, 1, 2}, {false, false, true, true});
    Mat l = Mat::Zero(4, 3);
    l.row(1) << 1.0, 2.0, 0.5;  // predicts position 2 (gold 1)
    l.row(2) << 0.0, -1.0, 3.0;  // predicts position 3 (gold 2)
    const double p1 = std::exp(2.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(0.5));
    const double p2 = std::exp(3.0) / (std::exp(0.0) + std::exp(-1.0) + std::exp(3.0));
    EXPECT_NEAR(autoregressive_loss(seq, Var::constant(l)).item(), -(std::log(p1) + std::log(p2)) / 2.0, 1e-12);
}

TEST(Loss, NonAnswerLogitsDoNotMatter) {
    auto seq = toy_sequence({-1, 3, 1, 2, 0}, {false, false, false, true, false});
    nn::Rng rng(5);
    Mat l = nn::randn(5, 4, 1.0, rng);
    const double base = autoregressive_loss(seq, Var::constant(l)).item();
    Mat perturbed = l;
    for (int r : {0, 1, 3, 4}) perturbed.row(r) = nn::randn(1, 4, 5.0, rng);
    EXPECT_EQ(autoregressive_loss(seq, Var::constant(perturbed)).item(), base);
    Var lv(l, true);
    autoregressive_loss(seq, lv).backward();
    for (int r : {0, 1, 3, 4}) EXPECT_EQ(lv.grad().row(r).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_GT(lv.grad().row(2).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Loss, NoAnswerPositionsIsInputError) {
    auto seq = toy_sequence({-1, 3}, {false, false});
    EXPECT_THROW(autoregressive_loss(seq, Var::constant(Mat::Zero(2, 4))), InputError);
}

// --- language model and adapters -----------------------------------------------------

TEST(Llm, AdapterInjectionKeepsOutputs) {
    LlmConfig cfg;
    cfg.vocab_size = 30;
    cfg.width = 16;
    TinyLlm llm(cfg);
    nn::Rng rng(6);
    Var x = Var::constant(nn::randn(7, 16, 1.0, rng));
    Mat before = llm.forward(x).value();
    llm.inject_adapters({4, 8.0}, rng);
    EXPECT_LT((llm.forward(x).value() - before).cwiseAbs().maxCoeff(), 1e-6);
    nn::ParamList ad;
    llm.collect_adapters(ad, "llm");
    // q, k, v, o are 16x16; up is 16x64 and down 64x16: 2*4*(in+out)/2 per site.
    EXPECT_EQ(nn::parameter_count(ad), 2u * (4 * (4 * 16 + 4 * 16) + (4 * 16 + 4 * 64) + (4 * 64 + 4 * 16)));
}

TEST(Llm, RankAboveWeightSideIsConfigError) {
    LlmConfig cfg;
    cfg.vocab_size = 30;
    cfg.width = 16;
    TinyLlm llm(cfg);
    nn::Rng rng(7);
    EXPECT_THROW(llm.inject_adapters({17, 34.0}, rng), ConfigError);
    EXPECT_FALSE(llm.has_adapters());
}

TEST(Llm, DefaultRankAcceptedWhenWeightsAreLargeEnough) {
    LlmConfig cfg;
    cfg.vocab_size = 30;
    cfg.width = 128;
    cfg.layers = 1;
    TinyLlm llm(cfg);
    nn::Rng rng(8);
    EXPECT_NO_THROW(llm.inject_adapters({128, 256.0}, rng));
}

TEST(Llm, CausalOutputsIgnoreLaterPositions) {
    LlmConfig cfg;
    cfg.vocab_size = 20;
    cfg.width = 8;
    cfg.heads = 2;
    TinyLlm llm(cfg);
    nn::Rng rng(9);
    Mat x = nn::randn(5, 8, 1.0, rng);
    Mat a = llm.forward(Var::constant(x)).value();
    x.row(4) = nn::randn(1, 8, 3.0, rng);
    Mat b = llm.forward(Var::constant(x)).value();
    EXPECT_LT((a.topRows(4) - b.topRows(4)).cwiseAbs().maxCoeff(), 1e-12);
}
