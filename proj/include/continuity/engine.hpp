#pragma once

#include <chrono>
#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "continuity/backends.hpp"
#include "continuity/chunker.hpp"
#include "continuity/core.hpp"
#include "continuity/errors.hpp"
#include "continuity/ood.hpp"
#include "continuity/text.hpp"

namespace continuity {

// Everything a session scores with. The OOD pair is optional; without it the
// residual term is zero and the verdict rests on the attention term alone.
struct SessionBackends {
    std::shared_ptr<const PairwiseScorer> scorer;
    std::shared_ptr<const SentenceEncoder> encoder;
    std::shared_ptr<const OodModel> topic_ood;       // P(S|y)
    std::shared_ptr<const OodModel> background_ood;  // P(S)
};

struct StageTiming {
    std::chrono::nanoseconds pair_scoring{0};
    std::chrono::nanoseconds ood{0};
    std::chrono::nanoseconds combine{0};
};

struct EvaluationTrace {
    std::vector<Chunk> chunks;
    std::vector<double> pair_scores;  // clamped log-probabilities, aligned with chunks
    NluScore score;
    std::optional<Probability> p_topic;
    std::optional<Probability> p_background;
    std::optional<Probability> baseline_p;
    StageTiming timing;
};

struct BaselineResult {
    Probability p;
    bool truncated = false;
    std::size_t context_tokens = 0;  // before truncation
};

// Conversation state for one topic. accept() must be externally serialized;
// evaluate_next() and baseline_nsp() are const and may run concurrently.
class Session {
public:
    static constexpr std::size_t kDefaultTokenBudget = 512;

    Session(std::string topic_id, Hyperparams hp, SessionBackends backends)
        : topic_id_(std::move(topic_id)), hp_(hp), backends_(std::move(backends)) {
        hp_.validate();
        if (!backends_.scorer) throw ConfigError("session needs a pairwise scorer");
        const bool has_topic = backends_.topic_ood != nullptr;
        const bool has_background = backends_.background_ood != nullptr;
        if (has_topic != has_background)
            throw ConfigError("topic and background OOD models must be configured together");
        if (has_topic) {
            if (!same_forest_shape(*backends_.topic_ood, *backends_.background_ood))
                throw ConfigError("topic and background OOD models differ in (t, psi, dim); "
                                  "their log-probabilities are not comparable");
            if (!backends_.encoder) throw ConfigError("OOD models need a sentence encoder");
            if (backends_.encoder->dim() != backends_.topic_ood->dim)
                throw ConfigError("encoder dimension " + std::to_string(backends_.encoder->dim()) +
                                  " does not match OOD model dimension " +
                                  std::to_string(backends_.topic_ood->dim));
        }
    }

    const std::string& topic_id() const { return topic_id_; }
    const Hyperparams& hyperparams() const { return hp_; }
    const std::vector<Sentence>& accepted() const { return accepted_; }
    const std::vector<Chunk>& chunks() const { return chunks_; }
    bool has_ood() const { return backends_.topic_ood != nullptr; }

    Session& accept(std::string_view text, Speaker speaker = Speaker::unknown) {
        accepted_.push_back(make_sentence(accepted_.size(), text, speaker));
        extend_chunks();
        return *this;
    }

    EvaluationTrace evaluate_next(std::string_view candidate) const {
        using Clock = std::chrono::steady_clock;
        if (accepted_.empty())
            throw PreconditionError("cannot evaluate a candidate without conversation history");
        if (trim(candidate).empty()) throw InputDomainError("candidate sentence is empty");

        auto t0 = Clock::now();
        std::vector<TextPair> pairs;
        pairs.reserve(chunks_.size());
        for (const Chunk& c : chunks_) pairs.push_back({c.text, std::string(candidate)});
        const std::vector<Probability> probs = backends_.scorer->score_batch(pairs);
        if (probs.size() != pairs.size())
            throw ProtocolError("scorer returned " + std::to_string(probs.size()) + " scores for " +
                                std::to_string(pairs.size()) + " pairs");
        std::vector<double> pair_scores;
        pair_scores.reserve(probs.size());
        for (const Probability& p : probs)
            pair_scores.push_back(clamp_probability(p.value(), hp_).log());
        auto t1 = Clock::now();

        std::optional<Probability> p_topic;
        std::optional<Probability> p_background;
        double log_p_sn = 0.0;
        double log_p_sn_given_y = 0.0;
        if (has_ood()) {
            const Embedding e = backends_.encoder->encode(candidate);
            p_topic = ood_probability(*backends_.topic_ood, e, hp_);
            p_background = ood_probability(*backends_.background_ood, e, hp_);
            log_p_sn_given_y = p_topic->log();
            log_p_sn = p_background->log();
        }
        auto t2 = Clock::now();

        NluScore score = score_nlu(pair_scores, log_p_sn, log_p_sn_given_y, hp_);
        auto t3 = Clock::now();
        return EvaluationTrace{
            .chunks = chunks_,
            .pair_scores = std::move(pair_scores),
            .score = std::move(score),
            .p_topic = p_topic,
            .p_background = p_background,
            .baseline_p = std::nullopt,
            .timing = {t1 - t0, t2 - t1, t3 - t2},
        };
    }

    // Single pairwise call on the concatenated history, keeping the most
    // recent token_budget whitespace tokens. nullopt budget disables truncation.
    BaselineResult baseline_nsp_detail(std::string_view candidate,
                                       std::optional<std::size_t> token_budget = kDefaultTokenBudget) const {
        if (accepted_.empty())
            throw PreconditionError("cannot evaluate a candidate without conversation history");
        std::vector<std::string_view> tokens;
        for (const Sentence& s : accepted_)
            for (std::string_view t : split_tokens(s.text)) tokens.push_back(t);
        const std::size_t total = tokens.size();
        const bool truncated = token_budget && total > *token_budget;
        const std::size_t first = truncated ? total - *token_budget : 0;
        std::string context;
        for (std::size_t i = first; i < total; ++i) {
            if (i > first) context.push_back(' ');
            context.append(tokens[i]);
        }
        if (context.empty()) throw PreconditionError("truncated baseline context is empty");
        return {backends_.scorer->score_pair(context, candidate), truncated, total};
    }

    Probability baseline_nsp(std::string_view candidate,
                             std::optional<std::size_t> token_budget = kDefaultTokenBudget) const {
        return baseline_nsp_detail(candidate, token_budget).p;
    }

private:
    // Maintains chunks_ == chunk(accepted_, hp_) incrementally: regular windows
    // never change once emitted, only the right-aligned tail does.
    void extend_chunks() {
        const std::size_t n = accepted_.size();
        if (tail_present_) {
            chunks_.pop_back();
            tail_present_ = false;
        }
        if (n >= hp_.window && (n - hp_.window) % hp_.stride == 0) {
            chunks_.push_back(make_chunk(n - hp_.window, n));
        }
        if (chunks_.empty() || chunks_.back().end != n) {
            chunks_.push_back(make_chunk(n > hp_.window ? n - hp_.window : 0, n));
            tail_present_ = true;
        }
    }

    Chunk make_chunk(std::size_t start, std::size_t end) const {
        std::string text;
        for (std::size_t i = start; i < end; ++i) {
            if (i > start) text.push_back(' ');
            text.append(accepted_[i].text);
        }
        return Chunk{start, end, std::move(text)};
    }

    std::string topic_id_;
    Hyperparams hp_;
    SessionBackends backends_;
    std::vector<Sentence> accepted_;
    std::vector<Chunk> chunks_;
    bool tail_present_ = false;
};

}  // namespace continuity
