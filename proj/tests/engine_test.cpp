#include <atomic>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "continuity/continuity.hpp"
#include "test_support.hpp"

namespace continuity {
namespace {

class CountingScorer final : public PairwiseScorer {
public:
    Probability score_pair(std::string_view context, std::string_view current) const override {
        ++calls;
        return inner.score_pair(context, current);
    }
    StubScorer inner;
    mutable std::atomic<int> calls{0};
};

// Only implements score_pair, so batches go through the default mapping.
class PairOnlyScorer final : public PairwiseScorer {
public:
    Probability score_pair(std::string_view context, std::string_view current) const override {
        return inner.score_pair(context, current);
    }
    StubScorer inner;
};

// Scores a whole batch at once, independently of score_pair.
class BatchOnlyScorer final : public PairwiseScorer {
public:
    Probability score_pair(std::string_view, std::string_view) const override {
        throw std::logic_error("batch path expected");
    }
    std::vector<Probability> score_batch(const std::vector<TextPair>& pairs) const override {
        std::vector<Probability> out;
        for (const TextPair& p : pairs) out.push_back(inner.score_pair(p.context, p.current));
        return out;
    }
    StubScorer inner;
};

class DownScorer final : public PairwiseScorer {
public:
    Probability score_pair(std::string_view, std::string_view) const override {
        throw BackendUnavailableError("scorer is down");
    }
};

Session stub_session(std::shared_ptr<const PairwiseScorer> scorer = std::make_shared<StubScorer>()) {
    return Session("support", Hyperparams{}, SessionBackends{std::move(scorer), nullptr, nullptr, nullptr});
}

std::string words(const std::string& stem, int count, int offset = 0) {
    std::string out;
    for (int i = 0; i < count; ++i) {
        if (i > 0) out += ' ';
        out += stem + std::to_string(offset + i);
    }
    return out;
}

void expect_same_score(const NluScore& a, const NluScore& b) {
    EXPECT_EQ(a.log_p_max, b.log_p_max);
    EXPECT_EQ(a.log_p_avg, b.log_p_avg);
    EXPECT_EQ(a.attention_term, b.attention_term);
    EXPECT_EQ(a.alpha, b.alpha);
    EXPECT_EQ(a.residual_term, b.residual_term);
    EXPECT_EQ(a.log_p_nlu, b.log_p_nlu);
    EXPECT_EQ(a.p_nlu, b.p_nlu);
    EXPECT_EQ(a.verdict, b.verdict);
}

TEST(EvaluateNext, SharedVocabularyIsOnTopic) {
    Session s = stub_session();
    const std::vector<std::string> orders{
        "refund order late package", "late package refund order", "order refund package late",
        "package late order refund", "refund late package order", "order package refund late",
        "late refund order package", "package order late refund"};
    for (const auto& text : orders) s.accept(text);
    const EvaluationTrace t = s.evaluate_next("my order package is late please refund");
    EXPECT_EQ(t.chunks.size(), 3u);
    EXPECT_GE(t.score.p_nlu.value(), 0.5);
    const EvaluationTrace same = s.evaluate_next("refund package late order");
    EXPECT_GE(same.score.p_nlu.value(), 0.9);
    EXPECT_EQ(same.score.verdict, Verdict::on_topic);
}

TEST(EvaluateNext, DisjointCandidateCollapsesToEpsilon) {
    Session s = stub_session();
    for (int i = 0; i < 8; ++i) s.accept(words("topic", 6, i * 6));
    const EvaluationTrace t = s.evaluate_next(words("pizza", 6));
    for (double v : t.pair_scores) EXPECT_DOUBLE_EQ(v, std::log(0.001));
    EXPECT_DOUBLE_EQ(t.score.attention_term, std::log(0.001));
    EXPECT_DOUBLE_EQ(t.score.p_nlu.value(), 0.001);
    EXPECT_EQ(t.score.verdict, Verdict::off_topic);
}

TEST(EvaluateNext, LeapToEarlyThreadTracksTheMaximum) {
    Session s = stub_session();
    const std::string target = words("thread", 6);
    for (int i = 0; i < 4; ++i) s.accept(target);
    for (int i = 0; i < 8; ++i) s.accept(words(i < 4 ? "other" : "more", 6));
    const EvaluationTrace t = s.evaluate_next(target);
    ASSERT_EQ(t.chunks.size(), 5u);
    const double m = t.score.log_p_max, a = t.score.log_p_avg;
    EXPECT_GT(t.score.attention_term, (m + a) / 2.0);
    EXPECT_LT(std::exp(a), 0.5);
    EXPECT_EQ(t.score.verdict, Verdict::on_topic);
}

TEST(EvaluateNext, Preconditions) {
    Session s = stub_session();
    EXPECT_THROW(s.evaluate_next("hello"), PreconditionError);
    s.accept("hello there");
    EXPECT_THROW(s.evaluate_next("   "), InputDomainError);
    EXPECT_THROW(s.accept(""), InputDomainError);
}

TEST(EvaluateNext, BackendFailurePropagates) {
    Session s = stub_session(std::make_shared<DownScorer>());
    s.accept("hello there");
    EXPECT_THROW(s.evaluate_next("hi"), BackendUnavailableError);
}

TEST(EvaluateNext, DoesNotMutateSession) {
    Session s = stub_session();
    for (int i = 0; i < 9; ++i) s.accept(words("w", 4, i));
    const auto accepted = s.accepted();
    const auto chunks = s.chunks();
    s.evaluate_next("w1 w2 w3");
    EXPECT_EQ(s.chunks(), chunks);
    ASSERT_EQ(s.accepted().size(), accepted.size());
    for (std::size_t i = 0; i < accepted.size(); ++i) EXPECT_EQ(s.accepted()[i].text, accepted[i].text);
}

TEST(Accept, IncrementalChunksEqualBatchChunking) {
    for (std::size_t window = 1; window <= 6; ++window) {
        for (std::size_t stride = 1; stride <= window; ++stride) {
            Hyperparams hp;
            hp.window = window;
            hp.stride = stride;
            Session s("t", hp, SessionBackends{std::make_shared<StubScorer>(), nullptr, nullptr, nullptr});
            for (std::size_t n = 1; n <= 40; ++n) {
                s.accept("s" + std::to_string(n));
                ASSERT_EQ(s.chunks(), chunk(s.accepted(), hp)) << window << "/" << stride << " n=" << n;
            }
        }
    }
}

TEST(Accept, IdenticalSequencesGiveIdenticalTraces) {
    Session a = stub_session(), b = stub_session();
    for (int i = 0; i < 11; ++i) {
        a.accept(words("x", 3, i));
        b.accept(words("x", 3, i));
    }
    const EvaluationTrace ta = a.evaluate_next("x4 x5 x9");
    const EvaluationTrace tb = b.evaluate_next("x4 x5 x9");
    EXPECT_EQ(ta.pair_scores, tb.pair_scores);
    expect_same_score(ta.score, tb.score);
    a.accept("pizza tonight");  // accepting after any verdict is allowed
    EXPECT_EQ(a.accepted().size(), 12u);
}

TEST(Linearity, OnePairwiseCallPerChunk) {
    auto counting = std::make_shared<CountingScorer>();
    Session s = stub_session(counting);
    for (int n = 1; n <= 60; ++n) {
        s.accept(words("w", 3, n));
        counting->calls = 0;
        const EvaluationTrace t = s.evaluate_next("w1 w2");
        ASSERT_EQ(counting->calls.load(), static_cast<int>(t.chunks.size()));
        ASSERT_EQ(t.pair_scores.size(), t.chunks.size());
    }
}

TEST(BatchConsistency, BatchAndPairPathsAgree) {
    Session pair = stub_session(std::make_shared<PairOnlyScorer>());
    Session batch = stub_session(std::make_shared<BatchOnlyScorer>());
    for (int i = 0; i < 13; ++i) {
        pair.accept(words("v", 5, i * 2));
        batch.accept(words("v", 5, i * 2));
    }
    for (const char* candidate : {"v3 v4 v20", "v25 v26 v27", "nothing shared"}) {
        const auto a = pair.evaluate_next(candidate), b = batch.evaluate_next(candidate);
        EXPECT_EQ(a.pair_scores, b.pair_scores);
        expect_same_score(a.score, b.score);
    }
}

TEST(BackendSubstitution, RecordedScoresMatchStubBitForBit) {
    Session stub = stub_session();
    std::vector<std::string> history;
    for (int i = 0; i < 9; ++i) history.push_back(words("h", 4, i));
    for (const auto& h : history) stub.accept(h);
    const std::string candidate = "h3 h4 h5 h99";

    std::map<RecordedScorer::Key, double> table;
    for (const Chunk& c : stub.chunks())
        table[{normalize_text(c.text), normalize_text(candidate)}] = StubScorer::jaccard(c.text, candidate);
    Session recorded = stub_session(std::make_shared<RecordedScorer>(table, std::nullopt));
    for (const auto& h : history) recorded.accept(h);
    expect_same_score(stub.evaluate_next(candidate).score, recorded.evaluate_next(candidate).score);
    EXPECT_THROW(recorded.evaluate_next("unrecorded"), RecordNotFoundError);
}

TEST(Baseline, UnderBudgetScoresTheFullConcatenation) {
    Session s = stub_session();
    s.accept("a b c").accept("d e f");
    const BaselineResult r = s.baseline_nsp_detail("a d z");
    EXPECT_FALSE(r.truncated);
    EXPECT_EQ(r.context_tokens, 6u);
    EXPECT_EQ(r.p, StubScorer().score_pair("a b c d e f", "a d z"));
}

TEST(Baseline, TruncationDropsTheEarlyTarget) {
    Session s = stub_session();
    for (int i = 0; i < 4; ++i) s.accept(words("target", 10));
    for (int i = 0; i < 60; ++i) s.accept(words("filler", 10, i * 10));
    const std::string candidate = words("target", 10);
    const BaselineResult truncated = s.baseline_nsp_detail(candidate, 512);
    EXPECT_TRUE(truncated.truncated);
    EXPECT_EQ(truncated.context_tokens, 640u);
    EXPECT_DOUBLE_EQ(truncated.p.value(), 0.001);
    const BaselineResult full = s.baseline_nsp_detail(candidate, std::nullopt);
    EXPECT_FALSE(full.truncated);
    EXPECT_GT(full.p.value(), 0.001);
    EXPECT_EQ(s.evaluate_next(candidate).score.verdict, Verdict::on_topic);
}

TEST(Baseline, KeepsTheMostRecentTokens) {
    Session s = stub_session();
    s.accept("old1 old2 old3").accept("new1 new2");
    EXPECT_DOUBLE_EQ(s.baseline_nsp("new1 new2", 2).value(), 0.999);
    EXPECT_THROW(s.baseline_nsp("x", 0), PreconditionError);
}

TEST(CountTokens, WhitespaceRuns) {
    EXPECT_EQ(count_tokens("a b  c"), 3u);
    EXPECT_EQ(count_tokens(""), 0u);
    EXPECT_EQ(count_tokens("  \t\n "), 0u);
    EXPECT_EQ(count_tokens(words("t", 600)), 600u);
}

OodModel model_on(const std::vector<std::string>& corpus, std::size_t trees, std::uint64_t seed) {
    std::vector<Embedding> e;
    StubEncoder enc;
    for (const auto& s : corpus) e.push_back(enc.encode(s));
    return train_ood(e, {.trees = trees, .psi = 64, .seed = seed});
}

TEST(OodModels, ParityIsCheckedAtConstruction) {
    const std::vector<std::string> corpus{"a b", "b c", "c d", "d e", "e f", "f g"};
    auto topic = std::make_shared<const OodModel>(model_on(corpus, 10, 1));
    auto bg_bad = std::make_shared<const OodModel>(model_on(corpus, 11, 2));
    auto enc = std::make_shared<StubEncoder>();
    auto scorer = std::make_shared<StubScorer>();
    EXPECT_THROW(Session("t", {}, SessionBackends{scorer, enc, topic, bg_bad}), ConfigError);
    EXPECT_THROW(Session("t", {}, SessionBackends{scorer, enc, topic, nullptr}), ConfigError);
    EXPECT_THROW(Session("t", {}, SessionBackends{scorer, nullptr, topic, topic}), ConfigError);
    EXPECT_THROW(Session("t", {}, SessionBackends{nullptr, enc, nullptr, nullptr}), ConfigError);
}

TEST(OodModels, ResidualFollowsTopicAffinity) {
    GeneratorConfig g;
    g.seed = 3;
    const auto ood = testing_support::synthetic_ood_pair(g, 1000);
    Session s("video_streaming", {}, SessionBackends{std::make_shared<StubScorer>(),
                                                     std::make_shared<StubEncoder>(), ood.topic,
                                                     ood.background});
    ASSERT_TRUE(s.has_ood());
    GeneratorConfig held_out = g;
    held_out.seed = 4;
    const auto on_topic = generate_corpus(held_out, CorpusKind::topic, 20);
    const auto off_topic = generate_corpus(held_out, CorpusKind::background, 20);
    s.accept(on_topic[0]);
    double on_sum = 0.0;
    double off_sum = 0.0;
    for (std::size_t i = 1; i < on_topic.size(); ++i) {
        const EvaluationTrace on = s.evaluate_next(on_topic[i]);
        ASSERT_TRUE(on.p_topic && on.p_background);
        EXPECT_DOUBLE_EQ(on.score.log_diff, on.p_topic->log() - on.p_background->log());
        on_sum += on.score.residual_term;
        off_sum += s.evaluate_next(off_topic[i]).score.residual_term;
    }
    EXPECT_GT(on_sum, 0.0);
    EXPECT_LT(off_sum, on_sum);
}

}  // namespace
}  // namespace continuity
