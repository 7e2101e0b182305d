#pragma once

#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "continuity/core.hpp"
#include "continuity/errors.hpp"
#include "continuity/ood.hpp"
#include "continuity/text.hpp"

namespace continuity {

struct TextPair {
    std::string context;
    std::string current;
};

// Estimates P(on-topic | context, current) for (chunk, candidate) pairs.
class PairwiseScorer {
public:
    virtual ~PairwiseScorer() = default;

    virtual Probability score_pair(std::string_view context, std::string_view current) const = 0;

    // Results are in input order. The default maps score_pair.
    virtual std::vector<Probability> score_batch(const std::vector<TextPair>& pairs) const {
        std::vector<Probability> out;
        out.reserve(pairs.size());
        for (const TextPair& p : pairs) out.push_back(score_pair(p.context, p.current));
        return out;
    }
};

class SentenceEncoder {
public:
    virtual ~SentenceEncoder() = default;

    virtual Embedding encode(std::string_view text) const = 0;
    virtual std::size_t dim() const = 0;

    virtual std::vector<Embedding> encode_batch(const std::vector<std::string>& texts) const {
        std::vector<Embedding> out;
        out.reserve(texts.size());
        for (const std::string& t : texts) out.push_back(encode(t));
        return out;
    }
};

// Jaccard overlap of lowercased whitespace-token sets. A deterministic stand-in
// for a next-sentence-prediction model; symmetric, unlike real ones.
class StubScorer final : public PairwiseScorer {
public:
    explicit StubScorer(Hyperparams hp = {}) : hp_(hp) {}

    static double jaccard(std::string_view a, std::string_view b) {
        const std::set<std::string> left = token_set(a);
        const std::set<std::string> right = token_set(b);
        std::size_t shared = 0;
        for (const std::string& t : left) shared += right.count(t);
        const std::size_t unioned = left.size() + right.size() - shared;
        return unioned == 0 ? 0.0 : static_cast<double>(shared) / static_cast<double>(unioned);
    }

    Probability score_pair(std::string_view context, std::string_view current) const override {
        if (trim(context).empty() || trim(current).empty())
            throw InputDomainError("stub scorer needs non-empty texts");
        return clamp_probability(jaccard(context, current), hp_);
    }

private:
    static std::set<std::string> token_set(std::string_view text) {
        std::set<std::string> out;
        for (std::string_view t : split_tokens(text)) out.insert(to_lower(t));
        return out;
    }

    Hyperparams hp_;
};

// Signed feature hashing of lowercased tokens into 64 dimensions, L2-normalized.
class StubEncoder final : public SentenceEncoder {
public:
    static constexpr std::size_t kDim = 64;

    static std::size_t bucket_of(std::string_view token) {
        return static_cast<std::size_t>(fnv1a64(to_lower(token)) % kDim);
    }

    Embedding encode(std::string_view text) const override {
        Embedding v(kDim, 0.0);
        for (std::string_view token : split_tokens(text)) {
            const std::uint64_t h = fnv1a64(to_lower(token));
            v[h % kDim] += (h >> 63) ? -1.0 : 1.0;
        }
        double norm = 0.0;
        for (double x : v) norm += x * x;
        if (norm == 0.0) {
            v[0] = 1.0;
            return v;
        }
        norm = std::sqrt(norm);
        for (double& x : v) x /= norm;
        return v;
    }

    std::size_t dim() const override { return kDim; }
};

// Replays scores captured from a real model, keyed on normalized text.
class RecordedScorer final : public PairwiseScorer {
public:
    using Key = std::pair<std::string, std::string>;

    // nullopt fallback means a miss is an error.
    RecordedScorer(std::map<Key, double> table, std::optional<double> fallback, Hyperparams hp = {})
        : table_(std::move(table)), fallback_(fallback), hp_(hp) {
        for (const auto& [key, p] : table_) clamp_probability(p, hp_);
        if (fallback_) clamp_probability(*fallback_, hp_);
    }

    // One record per line: context <TAB> current <TAB> probability.
    static RecordedScorer from_file(const std::string& path, std::optional<double> fallback,
                                    Hyperparams hp = {}) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open recorded scores file " + path);
        std::map<Key, double> table;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (trim(line).empty()) continue;
            const auto first = line.find('\t');
            const auto second = first == std::string::npos ? first : line.find('\t', first + 1);
            if (second == std::string::npos)
                throw ConfigError(path + ":" + std::to_string(line_no) + ": expected 3 tab-separated fields");
            double p = 0.0;
            try {
                std::size_t used = 0;
                const std::string field = std::string(trim(std::string_view(line).substr(second + 1)));
                p = std::stod(field, &used);
                if (used != field.size()) throw std::invalid_argument("trailing characters");
            } catch (const std::exception&) {
                throw ConfigError(path + ":" + std::to_string(line_no) + ": bad probability");
            }
            table[{normalize_text(std::string_view(line).substr(0, first)),
                   normalize_text(std::string_view(line).substr(first + 1, second - first - 1))}] = p;
        }
        return RecordedScorer(std::move(table), fallback, hp);
    }

    static std::string format_line(std::string_view context, std::string_view current, double p) {
        std::ostringstream out;
        out.precision(17);
        out << normalize_text(context) << '\t' << normalize_text(current) << '\t' << p;
        return out.str();
    }

    Probability score_pair(std::string_view context, std::string_view current) const override {
        const auto it = table_.find({normalize_text(context), normalize_text(current)});
        if (it != table_.end()) return clamp_probability(it->second, hp_);
        if (fallback_) return clamp_probability(*fallback_, hp_);
        throw RecordNotFoundError("no recorded score for pair (\"" + normalize_text(context) +
                                  "\", \"" + normalize_text(current) + "\")");
    }

    std::size_t size() const { return table_.size(); }

private:
    std::map<Key, double> table_;
    std::optional<double> fallback_;
    Hyperparams hp_;
};

// Memoizes another scorer on (context, current). Only repeated evaluation of
// the same candidate hits the cache.
class CachingScorer final : public PairwiseScorer {
public:
    explicit CachingScorer(const PairwiseScorer& inner) : inner_(inner) {}

    Probability score_pair(std::string_view context, std::string_view current) const override {
        RecordedScorer::Key key{std::string(context), std::string(current)};
        {
            std::lock_guard lock(mutex_);
            if (auto it = cache_.find(key); it != cache_.end()) return it->second;
        }
        const Probability p = inner_.score_pair(context, current);
        std::lock_guard lock(mutex_);
        cache_.emplace(std::move(key), p);
        return p;
    }

    std::vector<Probability> score_batch(const std::vector<TextPair>& pairs) const override {
        std::vector<std::optional<Probability>> found(pairs.size());
        std::vector<TextPair> misses;
        {
            std::lock_guard lock(mutex_);
            for (std::size_t i = 0; i < pairs.size(); ++i) {
                auto it = cache_.find({pairs[i].context, pairs[i].current});
                if (it != cache_.end()) found[i] = it->second;
                else misses.push_back(pairs[i]);
            }
        }
        std::vector<Probability> fresh;
        if (!misses.empty()) fresh = inner_.score_batch(misses);
        std::vector<Probability> out;
        out.reserve(pairs.size());
        std::size_t next = 0;
        std::lock_guard lock(mutex_);
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            if (found[i]) {
                out.push_back(*found[i]);
            } else {
                out.push_back(fresh[next]);
                cache_.emplace(RecordedScorer::Key{pairs[i].context, pairs[i].current}, fresh[next]);
                ++next;
            }
        }
        return out;
    }

    std::size_t cached() const {
        std::lock_guard lock(mutex_);
        return cache_.size();
    }

private:
    const PairwiseScorer& inner_;
    mutable std::mutex mutex_;
    mutable std::map<RecordedScorer::Key, Probability> cache_;
};

}  // namespace continuity
