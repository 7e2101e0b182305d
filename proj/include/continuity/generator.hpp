#pragma once

// Seeded synthetic conversations.
//
// A conversation is a run of "threads": consecutive sentences built from one
// small word set drawn from the topic vocabulary, disjoint from every other
// thread in the same conversation. A normal candidate reuses the last thread's
// words, a leap candidate reuses an earlier thread's words across a controlled
// token gap, and shift candidates come from the background or in-domain-shift
// vocabularies. Every thread-style sentence contains each of its thread's
// words, so a chunk lying inside a thread has the same token set as the thread.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "continuity/backends.hpp"
#include "continuity/dataset.hpp"
#include "continuity/errors.hpp"
#include "continuity/random.hpp"

namespace continuity {

struct TokenRange {
    std::size_t min = 0;
    std::size_t max = 0;

    friend bool operator==(const TokenRange&, const TokenRange&) = default;
};

struct LabelMix {
    double normal = 0.25;
    double leap = 0.25;
    double ood_shift = 0.25;
    double id_shift = 0.25;

    double of(Label l) const {
        switch (l) {
            case Label::normal: return normal;
            case Label::leap: return leap;
            case Label::ood_shift: return ood_shift;
            case Label::id_shift: return id_shift;
        }
        return 0.0;
    }
};

struct GeneratorConfig {
    std::uint64_t seed = 0;
    std::size_t records = 400;
    std::string topic = "video_streaming";
    std::vector<std::string> topic_vocab;       // empty: built-in default
    std::vector<std::string> background_vocab;  // empty: built-in default
    std::vector<std::string> id_shift_vocab;    // empty: built-in default
    std::size_t sentences_per_conversation = 8;  // history size when history_tokens is unset
    std::optional<TokenRange> history_tokens;    // history size of non-leap records
    TokenRange sentence_length{8, 16};
    TokenRange leap_gap{1, 300};
    std::size_t thread_length = 6;
    std::size_t thread_vocab = 6;
    LabelMix mix;
};

// ---------------------------------------------------------------------------
// Default vocabularies. Words are picked so that the stub encoder hashes each
// vocabulary into its own narrow band of dimensions with a positive sign. With
// only three dimensions per band, every sentence has mass on most dimensions of
// its own band, so a sentence from another vocabulary sits at the band's origin,
// outside the support an isolation forest sees. Wide sparse bands make the origin
// look typical instead.

namespace detail {

inline std::vector<std::string> hashed_vocab(const std::vector<std::string>& roots, std::size_t count,
                                             std::size_t lo_dim, std::size_t hi_dim) {
    std::vector<std::string> out;
    for (std::size_t n = 0; out.size() < count; ++n) {
        for (const std::string& root : roots) {
            std::string word = root + std::to_string(n);
            const std::uint64_t h = fnv1a64(to_lower(word));
            const std::size_t b = static_cast<std::size_t>(h % StubEncoder::kDim);
            const bool positive = (h >> 63) == 0;
            if (positive && b >= lo_dim && b < hi_dim && out.size() < count) out.push_back(std::move(word));
        }
    }
    return out;
}

}  // namespace detail

inline std::vector<std::string> default_topic_vocab() {
    return detail::hashed_vocab({"stream", "episode", "playback", "subtitle", "profile", "channel"},
                                480, 0, 3);
}

inline std::vector<std::string> default_id_shift_vocab() {
    return detail::hashed_vocab({"invoice", "parcel", "warranty", "courier"}, 160, 3, 6);
}

inline std::vector<std::string> default_background_vocab() {
    return detail::hashed_vocab({"pizza", "weather", "guitar", "soccer", "recipe", "galaxy"}, 160, 6, 9);
}

inline GeneratorConfig with_default_vocab(GeneratorConfig c) {
    if (c.topic_vocab.empty()) c.topic_vocab = default_topic_vocab();
    if (c.background_vocab.empty()) c.background_vocab = default_background_vocab();
    if (c.id_shift_vocab.empty()) c.id_shift_vocab = default_id_shift_vocab();
    return c;
}

namespace detail {

// Smallest and largest k >= 1 such that k sentences with lengths in `len`
// can total a value in `target`.
inline std::optional<std::pair<std::size_t, std::size_t>> feasible_counts(TokenRange target,
                                                                          TokenRange len) {
    if (len.min == 0 || len.min > len.max || target.min > target.max) return std::nullopt;
    const std::size_t k_lo = std::max<std::size_t>(1, (target.min + len.max - 1) / len.max);
    const std::size_t k_hi = target.max / len.min;
    if (k_lo > k_hi) return std::nullopt;
    return std::make_pair(k_lo, k_hi);
}

// Lengths of k sentences summing to a total drawn from target.
inline std::vector<std::size_t> partition_tokens(TokenRange target, TokenRange len, Rng& rng) {
    const auto counts = feasible_counts(target, len);
    if (!counts) throw ConfigError("token range is infeasible for the sentence length range");
    const std::size_t k = rng.between(counts->first, counts->second);
    const std::size_t total = rng.between(std::max(target.min, k * len.min), std::min(target.max, k * len.max));
    std::vector<std::size_t> lengths(k, len.min);
    std::size_t extra = total - k * len.min;
    while (extra > 0) {
        const std::size_t i = rng.index(k);
        if (lengths[i] < len.max) {
            ++lengths[i];
            --extra;
        }
    }
    return lengths;
}

// Thread sizes for k sentences: full threads, the remainder folded into the last.
inline std::vector<std::size_t> thread_sizes(std::size_t k, std::size_t thread_length) {
    if (k <= thread_length) return {k};
    std::vector<std::size_t> out(k / thread_length, thread_length);
    out.back() += k % thread_length;
    return out;
}

}  // namespace detail

inline void validate(const GeneratorConfig& raw) {
    const GeneratorConfig c = with_default_vocab(raw);
    std::set<std::string> seen;
    for (const auto* vocab : {&c.topic_vocab, &c.background_vocab, &c.id_shift_vocab}) {
        for (const std::string& w : *vocab) {
            if (w.empty() || count_tokens(w) != 1)
                throw ConfigError("vocabulary entries must be single tokens, got \"" + w + "\"");
            if (!seen.insert(to_lower(w)).second)
                throw ConfigError("vocabularies must be disjoint; \"" + w + "\" repeats");
        }
    }
    double sum = 0.0;
    for (Label l : kAllLabels) {
        if (c.mix.of(l) < 0.0) throw ConfigError("label proportions must be nonnegative");
        sum += c.mix.of(l);
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("label proportions must sum to 1");
    if (c.thread_length == 0 || c.thread_vocab == 0)
        throw ConfigError("thread_length and thread_vocab must be positive");
    if (c.sentence_length.min < c.thread_vocab || c.sentence_length.min > c.sentence_length.max)
        throw ConfigError("sentence_length must satisfy thread_vocab <= min <= max");
    if (c.thread_vocab > c.background_vocab.size() || c.thread_vocab > c.id_shift_vocab.size())
        throw ConfigError("shift vocabularies are smaller than thread_vocab");
    if (c.mix.leap > 0.0 && !detail::feasible_counts(c.leap_gap, c.sentence_length))
        throw ConfigError("leap_gap range cannot be reached with the sentence_length range");
    if (c.history_tokens && !detail::feasible_counts(*c.history_tokens, c.sentence_length))
        throw ConfigError("history_tokens range cannot be reached with the sentence_length range");
    if (!c.history_tokens && c.sentences_per_conversation == 0)
        throw ConfigError("sentences_per_conversation must be positive");

    // Worst case thread count decides how many disjoint topic words are needed.
    auto max_sentences = [&](TokenRange r) { return r.max / c.sentence_length.min; };
    std::size_t threads = 0;
    if (c.mix.leap > 0.0)
        threads = std::max(threads, 2 + max_sentences(c.leap_gap) / c.thread_length + 1);
    threads = std::max(threads, (c.history_tokens ? max_sentences(*c.history_tokens)
                                                  : c.sentences_per_conversation) /
                                        c.thread_length + 1);
    if (threads * c.thread_vocab > c.topic_vocab.size())
        throw ConfigError("topic vocabulary too small: need " +
                          std::to_string(threads * c.thread_vocab) + " words, have " +
                          std::to_string(c.topic_vocab.size()));
}

namespace detail {

class ConversationBuilder {
public:
    ConversationBuilder(const GeneratorConfig& c, Rng& rng) : c_(c), rng_(rng) {
        unused_topic_ = c_.topic_vocab;
        rng_.shuffle(std::span<std::string>(unused_topic_));
    }

    std::vector<std::string> fresh_thread_words() {
        std::vector<std::string> words(unused_topic_.end() - static_cast<std::ptrdiff_t>(c_.thread_vocab),
                                       unused_topic_.end());
        unused_topic_.resize(unused_topic_.size() - c_.thread_vocab);
        return words;
    }

    std::vector<std::string> random_words(const std::vector<std::string>& vocab) {
        std::vector<std::string> pool = vocab;
        rng_.shuffle(std::span<std::string>(pool));
        pool.resize(c_.thread_vocab);
        return pool;
    }

    // Every word once, the rest drawn from the same set, then shuffled.
    std::string sentence(const std::vector<std::string>& words, std::size_t length) {
        std::vector<std::string> tokens = words;
        while (tokens.size() < length) tokens.push_back(words[rng_.index(words.size())]);
        rng_.shuffle(std::span<std::string>(tokens));
        return join(tokens, " ");
    }

    std::size_t random_length() { return rng_.between(c_.sentence_length.min, c_.sentence_length.max); }

    // Appends a thread per entry of `sizes`, using the given lengths in order.
    void add_threads(const std::vector<std::size_t>& lengths) {
        std::size_t next = 0;
        for (std::size_t size : thread_sizes(lengths.size(), c_.thread_length)) {
            const std::vector<std::string> words = fresh_thread_words();
            for (std::size_t i = 0; i < size; ++i) add(sentence(words, lengths[next++]));
            last_words_ = words;
        }
    }

    void add(std::string text) {
        const Speaker speaker = out_.size() % 2 == 0 ? Speaker::user : Speaker::bot;
        out_.push_back(RecordSentence{std::move(text), speaker, std::nullopt, std::nullopt});
    }

    std::vector<RecordSentence>& sentences() { return out_; }
    const std::vector<std::string>& last_words() const { return last_words_; }

private:
    const GeneratorConfig& c_;
    Rng& rng_;
    std::vector<std::string> unused_topic_;
    std::vector<std::string> last_words_;
    std::vector<RecordSentence> out_;
};

}  // namespace detail

inline std::vector<ConversationRecord> generate(const GeneratorConfig& raw) {
    validate(raw);
    const GeneratorConfig c = with_default_vocab(raw);
    Rng rng(c.seed);

    // Exact label quotas by largest remainder, then a seeded order.
    std::vector<std::size_t> quota;
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < 4; ++i) {
        const double want = c.mix.of(kAllLabels[i]) * static_cast<double>(c.records);
        quota.push_back(static_cast<std::size_t>(std::floor(want)));
        assigned += quota.back();
        remainders.emplace_back(want - std::floor(want), i);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; assigned < c.records; ++i, ++assigned) ++quota[remainders[i % 4].second];
    std::vector<Label> labels;
    for (std::size_t i = 0; i < 4; ++i) labels.insert(labels.end(), quota[i], kAllLabels[i]);
    rng.shuffle(std::span<Label>(labels));

    const std::size_t width = std::to_string(c.records).size();
    std::vector<ConversationRecord> out;
    out.reserve(c.records);
    for (std::size_t r = 0; r < c.records; ++r) {
        Rng local(rng.fork());
        detail::ConversationBuilder b(c, local);
        const Label label = labels[r];
        std::optional<std::size_t> target;
        std::string candidate;

        if (label == Label::leap) {
            if (local.index(2) == 1) {
                std::vector<std::size_t> prefix(c.thread_length);
                for (auto& len : prefix) len = b.random_length();
                b.add_threads(prefix);
            }
            std::vector<std::size_t> target_thread(c.thread_length);
            for (auto& len : target_thread) len = b.random_length();
            b.add_threads(target_thread);
            const std::vector<std::string> target_words = b.last_words();
            target = b.sentences().size() - 1;
            b.add_threads(detail::partition_tokens(c.leap_gap, c.sentence_length, local));
            candidate = b.sentence(target_words, b.random_length());
        } else {
            std::vector<std::size_t> lengths;
            if (c.history_tokens) {
                lengths = detail::partition_tokens(*c.history_tokens, c.sentence_length, local);
            } else {
                lengths.resize(c.sentences_per_conversation);
                for (auto& len : lengths) len = b.random_length();
            }
            b.add_threads(lengths);
            if (label == Label::normal) {
                candidate = b.sentence(b.last_words(), b.random_length());
            } else {
                const auto& vocab = label == Label::ood_shift ? c.background_vocab : c.id_shift_vocab;
                candidate = b.sentence(b.random_words(vocab), b.random_length());
            }
        }
        b.add(std::move(candidate));
        b.sentences().back().label = label;
        b.sentences().back().leap_target = target;

        std::string id = std::to_string(r);
        id.insert(0, width - id.size(), '0');
        ConversationRecord record{c.topic + "-" + id, c.topic, std::move(b.sentences())};
        record.validate();
        out.push_back(std::move(record));
    }
    return out;
}

enum class CorpusKind { topic, background };

// Sentences for training the OOD models: topic-only, or a uniform mix of the
// topic, in-domain-shift and background vocabularies.
inline std::vector<std::string> generate_corpus(const GeneratorConfig& raw, CorpusKind kind,
                                                std::size_t count) {
    validate(raw);
    const GeneratorConfig c = with_default_vocab(raw);
    Rng rng(c.seed ^ (kind == CorpusKind::topic ? 0x746f706963ULL : 0x6261636b67ULL));
    detail::ConversationBuilder b(c, rng);
    std::vector<std::string> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t source = kind == CorpusKind::topic ? 0 : rng.index(3);
        const auto& vocab = source == 0 ? c.topic_vocab : source == 1 ? c.id_shift_vocab : c.background_vocab;
        out.push_back(b.sentence(b.random_words(vocab), b.random_length()));
    }
    return out;
}

// ---------------------------------------------------------------------------
// JSON form of the generator configuration. Missing fields keep defaults.

inline GeneratorConfig generator_config_from_json(const nlohmann::json& j) {
    GeneratorConfig c;
    try {
        auto range = [](const nlohmann::json& r) {
            if (!r.is_array() || r.size() != 2) throw ConfigError("token ranges are [min, max] pairs");
            return TokenRange{r[0].get<std::size_t>(), r[1].get<std::size_t>()};
        };
        if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("records")) c.records = j.at("records").get<std::size_t>();
        if (j.contains("topic")) c.topic = j.at("topic").get<std::string>();
        if (j.contains("topic_vocab")) c.topic_vocab = j.at("topic_vocab").get<std::vector<std::string>>();
        if (j.contains("background_vocab"))
            c.background_vocab = j.at("background_vocab").get<std::vector<std::string>>();
        if (j.contains("id_shift_vocab"))
            c.id_shift_vocab = j.at("id_shift_vocab").get<std::vector<std::string>>();
        if (j.contains("sentences_per_conversation"))
            c.sentences_per_conversation = j.at("sentences_per_conversation").get<std::size_t>();
        if (j.contains("history_tokens") && !j.at("history_tokens").is_null())
            c.history_tokens = range(j.at("history_tokens"));
        if (j.contains("sentence_length")) c.sentence_length = range(j.at("sentence_length"));
        if (j.contains("leap_gap")) c.leap_gap = range(j.at("leap_gap"));
        if (j.contains("thread_length")) c.thread_length = j.at("thread_length").get<std::size_t>();
        if (j.contains("thread_vocab")) c.thread_vocab = j.at("thread_vocab").get<std::size_t>();
        if (j.contains("mix")) {
            const auto& m = j.at("mix");
            c.mix = LabelMix{m.value("normal", 0.0), m.value("leap", 0.0), m.value("ood_shift", 0.0),
                             m.value("id_shift", 0.0)};
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad generator config: ") + e.what());
    }
    validate(c);
    return c;
}

}  // namespace continuity
