#include "emo/errors.h"
#include "emo/fixtures.h"
#include "emo/instruct_gen.h"
#include "emo/util.h"

#include <gtest/gtest.h>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

using namespace emo;
namespace fs = std::filesystem;

namespace {

MediaRecord image_record(const std::string& id, const std::string& label) {
    return {id, Modality::Image, "images/" + id + ".png", label, "train", false};
}

Image blank() { return Image(8, 8); }

InstructionSample category_sample(const std::string& id, const std::string& label) {
    InstructionSample s;
    s.id = id;
    s.media = "images/" + id + ".png";
    s.label = label;
    s.kind = InstructionKind::Category;
    s.turns = {{"human", "Which one?"}, {"assistant", label}};
    return s;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

class ScriptedClient : public GenerationClient {
public:
    explicit ScriptedClient(std::string text) : text_(std::move(text)) {}
    std::string complete(const GenerationRequest&) override { return text_; }

private:
    std::string text_;
};

class FlakyClient : public GenerationClient {
public:
    explicit FlakyClient(int failures) : failures_(failures) {}
    std::string complete(const GenerationRequest& req) override {
        if (calls_++ < failures_) throw ClientError("temporarily down");
        return MockClient(1).complete(req);
    }
    int calls() const { return calls_; }

private:
    int failures_;
    int calls_ = 0;
};

const std::vector<std::string> kSeven = fixtures::basic_emotions();

}  // namespace

TEST(ParseTurns, AlternatingDialogue) {
    auto t = parse_turns("Human: hi\nAssistant: hello\nthere\n\nHuman: q\nAssistant: a\n");
    ASSERT_EQ(t.size(), 4u);
    EXPECT_EQ(t[1].text, "hello there");
    EXPECT_EQ(t[3].role, "assistant");
}

TEST(ParseTurns, MalformedOutputIsInputError) {
    EXPECT_THROW(parse_turns(""), InputError);
    EXPECT_THROW(parse_turns("preamble\nHuman: hi\nAssistant: x"), InputError);
    EXPECT_THROW(parse_turns("Human: hi"), InputError);
    EXPECT_THROW(parse_turns("Assistant: x\nHuman: hi"), InputError);
    EXPECT_THROW(parse_turns("Human: hi\nAssistant:"), InputError);
}

TEST(MockClient, DeterministicAndLabelConditioned) {
    GenerationRequest r;
    r.media_id = "m1";
    r.label = "anger";
    MockClient a(4), b(4);
    EXPECT_EQ(a.complete(r), b.complete(r));
    EXPECT_NE(a.complete(r).find("anger"), std::string::npos);
    r.label.clear();
    EXPECT_THROW(a.complete(r), ClientError);
}

TEST(ImageInstructions, MockProducesValidConversation) {
    MockClient mock(2);
    auto out = gen_image_instructions(image_record("img1", "fear"), blank(), mock);
    ASSERT_EQ(out.size(), 1u);
    EXPECT_EQ(out[0].kind, InstructionKind::Conversation);
    EXPECT_EQ(validate_sample(out[0], kSeven), "");
    ASSERT_TRUE(out[0].raw_generation.has_value());
}

TEST(ImageInstructions, MalformedGeneratorOutputIsSkippedAndLogged) {
    ScriptedClient bad("I cannot help with that.");
    GenerationLog log;
    EXPECT_TRUE(gen_image_instructions(image_record("img1", "fear"), blank(), bad, &log).empty());
    ASSERT_EQ(log.skipped.size(), 1u);
    EXPECT_EQ(log.skipped[0].first, "img1");
}

TEST(ImageInstructions, EmptyLabelIsInputError) {
    MockClient mock;
    EXPECT_THROW(gen_image_instructions(image_record("img1", ""), blank(), mock), InputError);
}

TEST(ImageInstructions, ClientFailuresAreRetriedThenSkipped) {
    FlakyClient flaky(2);
    EXPECT_EQ(gen_image_instructions(image_record("a", "fear"), blank(), flaky, nullptr, 2).size(), 1u);
    EXPECT_EQ(flaky.calls(), 3);
    FlakyClient dead(100);
    GenerationLog log;
    EXPECT_TRUE(gen_image_instructions(image_record("b", "fear"), blank(), dead, &log, 1).empty());
    EXPECT_EQ(dead.calls(), 2);
    EXPECT_EQ(log.skipped.size(), 1u);
}

TEST(VideoInstructions, CaptionCountFollowsDuration) {
    MockClient mock;
    MediaRecord rec{"v1", Modality::Video, "videos/v1", "sadness", "train", false};
    const std::vector<std::string> three{"second 1: a", "second 2: b", "second 3: c"};
    EXPECT_EQ(gen_video_instructions(rec, blank(), three, mock, nullptr, 2, 3.7).size(), 1u);
    EXPECT_THROW(gen_video_instructions(rec, blank(), three, mock, nullptr, 2, 2.0), InputError);
    EXPECT_EQ(gen_video_instructions(rec, blank(), {"second 1: a"}, mock, nullptr, 2, 0.4).size(), 1u);
    EXPECT_THROW(gen_video_instructions(rec, blank(), {}, mock), InputError);
}

TEST(VideoInstructions, MockAnswerUsesACaption) {
    MockClient mock(9);
    MediaRecord rec{"v1", Modality::Video, "videos/v1", "sadness", "train", false};
    auto out = gen_video_instructions(rec, blank(), {"second 1: the person frowns"}, mock);
    ASSERT_EQ(out.size(), 1u);
    EXPECT_NE(out[0].turns[1].text.find("the person frowns"), std::string::npos);
}

TEST(CategoryInstructions, AnswerIsTheLabelAndPromptListsEveryClass) {
    std::mt19937_64 rng(1);
    for (const auto& label : kSeven) {
        auto s = gen_category_instructions(image_record("x-" + label, label), kSeven, rng);
        EXPECT_EQ(s.turns[1].text, label);
        EXPECT_EQ(validate_sample(s, kSeven), "");
        for (const auto& c : kSeven) EXPECT_NE(s.turns[0].text.find(c), std::string::npos);
    }
    EXPECT_THROW(gen_category_instructions(image_record("x", "joy"), kSeven, rng), InputError);
}

TEST(CategoryInstructions, ReproducibleForASeed) {
    std::mt19937_64 a(5), b(5);
    for (int i = 0; i < 10; ++i) {
        auto rec = image_record("r" + std::to_string(i), kSeven[static_cast<size_t>(i) % 7]);
        EXPECT_EQ(gen_category_instructions(rec, kSeven, a), gen_category_instructions(rec, kSeven, b));
    }
}

TEST(Writer, RejectsInvalidAndCountsTheRest) {
    std::vector<InstructionSample> samples;
    for (int i = 0; i < 12; ++i) samples.push_back(category_sample("s" + std::to_string(i), kSeven[i % 7]));
    auto bad_label = category_sample("bad1", "joy");
    auto bad_answer = category_sample("bad2", "fear");
    bad_answer.turns[1].text = "anger";
    auto bad_turns = category_sample("bad3", "fear");
    bad_turns.turns.pop_back();
    samples.insert(samples.end(), {bad_label, bad_answer, bad_turns});

    const auto dir = fs::temp_directory_path() / ("emo_writer_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    auto m = validate_and_write(samples, kSeven, dir / "out.jsonl");
    EXPECT_EQ(m.written, 12);
    EXPECT_EQ(m.rejected, 3);
    long per_class = 0;
    for (const auto& [k, v] : m.per_class) per_class += v;
    EXPECT_EQ(per_class, m.written);
    auto back = read_instructions(dir / "out.jsonl");
    ASSERT_EQ(back.size(), 12u);
    for (size_t i = 0; i + 1 < back.size(); ++i) EXPECT_LT(back[i].id, back[i + 1].id);
    fs::remove_all(dir);
}

TEST(Writer, DropsDuplicates) {
    auto a = category_sample("a", "fear");
    auto b = a;
    b.id = "b";
    const auto path = fs::temp_directory_path() / ("emo_dups_" + std::to_string(::getpid()) + ".jsonl");
    auto m = validate_and_write({a, b}, kSeven, path);
    EXPECT_EQ(m.written, 1);
    EXPECT_EQ(m.duplicates, 1);
    fs::remove(path);
}

TEST(Writer, SampleJsonRoundTrip) {
    auto s = category_sample("a", "fear");
    s.raw_generation = "Human: x\nAssistant: y";
    EXPECT_EQ(nlohmann::json(s).get<InstructionSample>(), s);
    EXPECT_THROW(nlohmann::json::parse(R"({"id": "x"})").get<InstructionSample>(), InputError);
}

class GenPipeline : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        root_ = fs::temp_directory_path() / ("emo_gen_" + std::to_string(::getpid()));
        fs::remove_all(root_);
        ds_ = fixtures::generate(root_ / "data", fixtures::preset("tiny"));
    }
    static void TearDownTestSuite() { fs::remove_all(root_); }
    static inline fs::path root_;
    static inline DatasetIndex ds_;
};

TEST_F(GenPipeline, ByteIdenticalAcrossRuns) {
    GenOptions o;
    o.seed = 11;
    MockClient m1(11), m2(11);
    validate_and_write(generate_instructions(ds_, m1, o), ds_.classes, root_ / "a.jsonl");
    o.concurrency = 4;  // scheduling must not leak into the output
    validate_and_write(generate_instructions(ds_, m2, o), ds_.classes, root_ / "b.jsonl");
    EXPECT_EQ(slurp(root_ / "a.jsonl"), slurp(root_ / "b.jsonl"));
}

TEST_F(GenPipeline, CategoryOnlySourcesGetNoConversation) {
    MockClient mock;
    auto samples = generate_instructions(ds_, mock, {});
    std::set<std::string> category_only;
    for (const auto& r : ds_.split("train"))
        if (r.category_only) category_only.insert(r.media);
    ASSERT_FALSE(category_only.empty());
    long cats = 0;
    for (const auto& s : samples) {
        if (s.kind == InstructionKind::Conversation) EXPECT_EQ(category_only.count(s.media), 0u) << s.id;
        cats += s.kind == InstructionKind::Category;
    }
    EXPECT_EQ(cats, static_cast<long>(ds_.split("train").size()));
}

TEST_F(GenPipeline, KindsCanBeSelected) {
    MockClient mock;
    GenOptions o;
    o.conversation = false;
    for (const auto& s : generate_instructions(ds_, mock, o)) EXPECT_EQ(s.kind, InstructionKind::Category);
}

TEST_F(GenPipeline, ReplayServesRecordedResponses) {
    MockClient mock(6);
    const auto rec = ds_.split("train").front();
    const Image im = read_image(ds_.media_path(rec));
    GenerationRequest req;
    req.media_id = rec.id;
    req.modality = rec.modality;
    req.label = rec.label;
    req.template_id = "image-conversation-v1";
    req.image_png = encode_png(im);
    ReplayClient::record(root_ / "replay", req, "Human: recorded?\nAssistant: yes, " + rec.label);
    ReplayClient replay(root_ / "replay");
    auto out = gen_image_instructions(rec, im, replay);
    ASSERT_EQ(out.size(), 1u);
    EXPECT_EQ(out[0].turns[0].text, "recorded?");
    GenerationLog log;
    EXPECT_TRUE(gen_image_instructions(ds_.split("train")[1], im, replay, &log, 0).empty());
    EXPECT_EQ(log.skipped.size(), 1u);
}

TEST(HttpClient, PostsJsonRetriesAndSendsKey) {
    httplib::Server svr;
    std::atomic<int> calls{0};
    std::string seen_auth, seen_template;
    bool seen_image = false;
    svr.Post("/gen", [&](const httplib::Request& req, httplib::Response& res) {
        if (calls++ == 0) {
            res.status = 503;
            return;
        }
        auto body = nlohmann::json::parse(req.body);
        seen_auth = req.get_header_value("Authorization");
        seen_template = body.at("template").get<std::string>();
        seen_image = body.at("images").size() == 1 && !body.at("images")[0].get<std::string>().empty();
        res.set_content(nlohmann::json{{"text", "Human: a\nAssistant: b"}}.dump(), "application/json");
    });
    const int port = svr.bind_to_any_port("127.0.0.1");
    std::thread th([&] { svr.listen_after_bind(); });
    svr.wait_until_ready();

    ::setenv("EMO_TEST_GEN_KEY", "secret", 1);
    HttpClientConfig cfg;
    cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/gen";
    cfg.api_key_env = "EMO_TEST_GEN_KEY";
    cfg.backoff_seconds = 0.01;
    cfg.max_requests_per_second = 100;
    HttpClient client(cfg);
    GenerationRequest req;
    req.media_id = "m";
    req.label = "fear";
    req.template_id = "t1";
    req.image_png = {1, 2, 3, 4};
    EXPECT_EQ(client.complete(req), "Human: a\nAssistant: b");
    EXPECT_EQ(calls.load(), 2);
    EXPECT_EQ(seen_auth, "Bearer secret");
    EXPECT_EQ(seen_template, "t1");
    EXPECT_TRUE(seen_image);

    svr.stop();
    th.join();
}

TEST(HttpClient, GivesUpWithClientError) {
    HttpClientConfig cfg;
    cfg.endpoint = "http://127.0.0.1:1/gen";
    cfg.retries = 1;
    cfg.backoff_seconds = 0.01;
    cfg.timeout_seconds = 1;
    HttpClient client(cfg);
    GenerationRequest req;
    req.label = "fear";
    EXPECT_THROW(client.complete(req), ClientError);
    EXPECT_THROW(HttpClient(HttpClientConfig{}), ConfigError);
}
